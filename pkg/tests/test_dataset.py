import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dalc.dataset import (
    DecodeStep,
    iter_tensor_records,
    load_manifest,
    read_tensor_record,
    save_manifest,
    validate_dataset,
    write_tensor_record,
)
from dalc.errors import DimensionMismatch, MalformedHeader, MissingFile

from conftest import make_manifest


class TestTensorRecords:
    def test_roundtrip_3x4(self):
        m = np.arange(12, dtype=np.float32).reshape(3, 4)
        out = read_tensor_record(write_tensor_record(m))
        assert out.dtype == np.float32
        np.testing.assert_array_equal(out, m)

    def test_roundtrip_1x1(self):
        out = read_tensor_record(write_tensor_record(np.array([[0.5]], dtype=np.float32)))
        np.testing.assert_array_equal(out, [[0.5]])

    def test_truncated_payload(self):
        data = write_tensor_record(np.ones((2, 3), dtype=np.float32))
        with pytest.raises(MalformedHeader):
            read_tensor_record(data[:-4])

    def test_bad_magic(self):
        data = b"NOPE" + write_tensor_record(np.ones((1, 1), dtype=np.float32))[4:]
        with pytest.raises(MalformedHeader):
            read_tensor_record(data)

    def test_trailing_bytes_rejected(self):
        data = write_tensor_record(np.ones((1, 1), dtype=np.float32)) + b"x"
        with pytest.raises(MalformedHeader):
            read_tensor_record(data)

    def test_concatenated_stream(self):
        a = np.ones((2, 2), dtype=np.float32)
        b = np.full((1, 2), 7, dtype=np.float32)
        blob = write_tensor_record(a) + write_tensor_record(b)
        out = list(iter_tensor_records(blob))
        assert len(out) == 2
        np.testing.assert_array_equal(out[0], a)
        np.testing.assert_array_equal(out[1], b)

    @given(
        arrays(
            np.float32,
            st.tuples(st.integers(1, 6), st.integers(1, 6)),
            elements=st.floats(allow_nan=False, allow_infinity=False, width=32),
        )
    )
    @settings(max_examples=150)
    def test_roundtrip_bit_exact(self, matrix):
        out = read_tensor_record(write_tensor_record(matrix))
        assert out.tobytes() == matrix.tobytes()


class TestManifestIO:
    def test_save_load_roundtrip(self, tiny_manifest, tmp_path):
        path = save_manifest(tiny_manifest, tmp_path, name="fix")
        loaded = load_manifest(path)
        assert loaded.tensor_dim == tiny_manifest.tensor_dim
        assert loaded.domain_names == tiny_manifest.domain_names
        assert loaded.general_vocab == tiny_manifest.general_vocab
        for orig, back in zip(tiny_manifest.domains, loaded.domains):
            assert back.gold_curve == orig.gold_curve
            assert sorted(back.samples) == sorted(orig.samples)
            for s_orig, s_back in zip(orig.sentences, back.sentences):
                assert s_back.id == s_orig.id
                assert s_back.tokens == s_orig.tokens
                assert s_back.gold_chrf == s_orig.gold_chrf
                np.testing.assert_array_equal(s_back.encoder_rep, s_orig.encoder_rep)
                assert s_back.decode_trace == s_orig.decode_trace
            for size, ref in orig.samples.items():
                assert back.samples[size].tokens() == ref.tokens()

    def test_save_is_deterministic(self, tiny_manifest, tmp_path):
        p1 = save_manifest(tiny_manifest, tmp_path / "a", name="fix")
        p2 = save_manifest(tiny_manifest, tmp_path / "b", name="fix")
        for f1 in sorted(p1.parent.iterdir()):
            f2 = p2.parent / f1.name
            assert f1.read_bytes() == f2.read_bytes()

    def test_missing_tensor_file(self, tiny_manifest, tmp_path):
        path = save_manifest(tiny_manifest, tmp_path, name="fix")
        (tmp_path / "dom0.tensors.bin").unlink()
        with pytest.raises(MissingFile):
            load_manifest(path)

    def test_dimension_mismatch_names_record(self, tiny_manifest, tmp_path):
        path = save_manifest(tiny_manifest, tmp_path, name="fix")
        # rewrite the header to declare a wider dimension than the tensors have
        lines = path.read_text().splitlines()
        header = json.loads(lines[0])
        header["tensor_dim"] = 32
        path.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
        with pytest.raises(DimensionMismatch) as err:
            load_manifest(path)
        assert "d0-s0" in str(err.value)

    def test_malformed_header(self, tmp_path):
        bad = tmp_path / "bad.manifest.jsonl"
        bad.write_text("not json\n")
        with pytest.raises(MalformedHeader):
            load_manifest(bad)

    def test_header_requires_tensor_dim(self, tmp_path):
        bad = tmp_path / "bad.manifest.jsonl"
        bad.write_text('{"foo": 1}\n')
        with pytest.raises(MalformedHeader):
            load_manifest(bad)

    def test_duplicate_domains_rejected(self, tiny_manifest, tmp_path):
        path = save_manifest(tiny_manifest, tmp_path, name="fix")
        lines = path.read_text().splitlines()
        entry = json.loads(lines[1])
        entry["name"] = "dom1"  # collides with the other domain
        path.write_text("\n".join([lines[0], json.dumps(entry), lines[2]]) + "\n")
        with pytest.raises(MalformedHeader):
            load_manifest(path)

    def test_truncated_tensor_stream(self, tiny_manifest, tmp_path):
        path = save_manifest(tiny_manifest, tmp_path, name="fix")
        blob = (tmp_path / "dom0.tensors.bin").read_bytes()
        (tmp_path / "dom0.tensors.bin").write_bytes(blob[:-8])
        with pytest.raises(MalformedHeader):
            load_manifest(path)

    def test_manifest_not_found(self, tmp_path):
        with pytest.raises(MissingFile):
            load_manifest(tmp_path / "nope.jsonl")


class TestValidation:
    def test_consistent_fixture_is_clean(self, tiny_manifest):
        assert validate_dataset(tiny_manifest).ok

    def test_chrf_out_of_range(self, tiny_manifest):
        tiny_manifest.domains[0].sentences[0].gold_chrf[100] = 1.2
        report = validate_dataset(tiny_manifest)
        assert len(report.violations) == 1
        assert "chrf out of range" in report.violations[0].message
        assert report.violations[0].record_id == "d0-s0"

    def test_p2_exceeds_p1(self, tiny_manifest):
        sent = tiny_manifest.domains[1].sentences[1]
        sent.decode_trace[0] = DecodeStep(p1=0.3, p2=0.5, entropy=0.1)
        report = validate_dataset(tiny_manifest)
        messages = [v.message for v in report.violations]
        assert any("p2 exceeds p1" in m for m in messages)

    def test_row_count_mismatch(self, tiny_manifest):
        sent = tiny_manifest.domains[0].sentences[2]
        sent.encoder_rep = sent.encoder_rep[:-1]
        report = validate_dataset(tiny_manifest)
        assert len(report.violations) == 1
        assert "token count" in report.violations[0].message

    def test_gold_curve_needs_labels(self, tiny_manifest):
        tiny_manifest.domains[0].gold_curve[5000] = 0.7
        report = validate_dataset(tiny_manifest)
        assert any("lacks per-sentence labels" in v.message for v in report.violations)

    def test_empty_trace_flagged(self, tiny_manifest):
        tiny_manifest.domains[0].sentences[0].decode_trace = []
        report = validate_dataset(tiny_manifest)
        assert any("empty decode trace" in v.message for v in report.violations)

    def test_negative_entropy_flagged(self, tiny_manifest):
        sent = tiny_manifest.domains[0].sentences[0]
        sent.decode_trace[0] = DecodeStep(p1=0.5, p2=0.1, entropy=-0.2)
        report = validate_dataset(tiny_manifest)
        assert any("negative entropy" in v.message for v in report.violations)

    def test_single_corruption_single_violation(self, tiny_manifest):
        sent = tiny_manifest.domains[1].sentences[0]
        sent.gold_chrf[0] = -0.1
        report = validate_dataset(tiny_manifest)
        assert len(report.violations) == 1
