import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dalc.curvefit import AnchorObservation, exp3_eval, exp3_fit
from dalc.dataset import DecodeStep, DomainEntry, Manifest, SentenceRecord, validate_dataset
from dalc.errors import InsufficientDomains, InvalidSpec, NoGoldLabels
from dalc.features import least_confidence
from dalc.harness import (
    EvalProtocol,
    EvalReport,
    ReportRow,
    SyntheticSpec,
    ablation_suite,
    benchmark_net_config,
    dalc_training_instances,
    distribution_report,
    generate_synthetic,
    leave_one_out,
    synthetic_curve_value,
    synthetic_delta,
)
from dalc.metrics import rmse


def small_spec(**kw) -> SyntheticSpec:
    defaults = dict(
        n_domains=3,
        vocab_sizes=(60, 80, 100),
        zipf_exponents=(1.1, 1.2, 1.3),
        curve_params=((0.15, -1.4, 0.45), (0.2, -1.2, 0.62), (0.18, -1.3, 0.74)),
        noise_std=0.01,
        sentences_per_domain=60,
        anchor_sizes=(0, 100, 1000, 5000),
        encoder_dim=8,
        seed=3,
    )
    defaults.update(kw)
    return SyntheticSpec(**defaults)


def tiny_net_config(d: int, **kw):
    cfg = benchmark_net_config(d)
    return replace(cfg, max_epochs=kw.pop("max_epochs", 8), **kw)


ANCHORS = (0, 100, 1000, 5000)


class TestGenerator:
    def test_valid_dataset(self):
        manifest = generate_synthetic(small_spec())
        assert validate_dataset(manifest).ok

    def test_deterministic(self):
        a = generate_synthetic(small_spec())
        b = generate_synthetic(small_spec())
        for da, db in zip(a.domains, b.domains):
            assert da.gold_curve == db.gold_curve
            for sa, sb in zip(da.sentences, db.sentences):
                assert sa.tokens == sb.tokens
                assert sa.gold_chrf == sb.gold_chrf
                assert sa.decode_trace == sb.decode_trace
                np.testing.assert_array_equal(sa.encoder_rep, sb.encoder_rep)
            for size in da.samples:
                assert da.samples[size].tokens() == db.samples[size].tokens()

    def test_invalid_specs(self):
        with pytest.raises(InvalidSpec):
            generate_synthetic(small_spec(n_domains=0))
        with pytest.raises(InvalidSpec):
            generate_synthetic(small_spec(curve_params=((0.1, -1.0, 1.4),) * 3))
        with pytest.raises(InvalidSpec):
            generate_synthetic(small_spec(noise_std=-0.1))
        with pytest.raises(InvalidSpec):
            generate_synthetic(small_spec(vocab_sizes=(60, 80)))

    def test_gold_mean_matches_curve_within_sampling_error(self):
        # noise 0: the only deviation from the true curve is mean(delta),
        # which is zero-mean with std = difficulty_scale / sqrt(3)
        spec = small_spec(noise_std=0.0, sentences_per_domain=400, n_domains=1,
                          vocab_sizes=(60,), zipf_exponents=(1.1,),
                          curve_params=((0.2, -1.2, 0.7),))
        manifest = generate_synthetic(spec)
        dom = manifest.domains[0]
        tol = 3 * (spec.difficulty_scale / math.sqrt(3)) / math.sqrt(400)
        for size in ANCHORS:
            assert abs(dom.gold_curve[size] - synthetic_curve_value(spec, 0, size)) < tol

    def test_delta_linear_in_least_confidence(self):
        spec = small_spec(noise_std=0.0, n_domains=1, vocab_sizes=(60,),
                          zipf_exponents=(1.1,), curve_params=((0.2, -1.2, 0.7),),
                          sentences_per_domain=50)
        manifest = generate_synthetic(spec)
        dom = manifest.domains[0]
        lcs = np.array([least_confidence(s.decode_trace) for s in dom.sentences])
        # recover delta from the labels: label = curve + delta
        deltas = np.array(
            [s.gold_chrf[100] - synthetic_curve_value(spec, 0, 100) for s in dom.sentences]
        )
        corr = np.corrcoef(lcs, deltas)[0, 1]
        assert corr < -0.99  # delta is an exact linear function of lc

    def test_exp3_closes_loop_on_gold_curve(self):
        spec = small_spec(noise_std=0.0, difficulty_scale=0.0)
        manifest = generate_synthetic(spec)
        for di, dom in enumerate(manifest.domains):
            obs = [AnchorObservation(size=s, score=v) for s, v in dom.gold_curve.items()]
            fitted = exp3_fit(obs)
            errs = [exp3_eval(fitted, s) - v for s, v in dom.gold_curve.items()]
            assert math.sqrt(np.mean(np.square(errs))) < 1e-3

    @given(
        st.integers(1, 3),
        st.integers(5, 25),
        st.integers(0, 10_000),
        st.floats(0.0, 0.05),
    )
    @settings(max_examples=15, deadline=None)
    def test_random_specs_generate_valid_datasets(self, n_domains, n_sent, seed, noise):
        spec = SyntheticSpec(
            n_domains=n_domains,
            vocab_sizes=(50,) * n_domains,
            zipf_exponents=(1.2,) * n_domains,
            curve_params=((0.2, -1.2, 0.6),) * n_domains,
            noise_std=noise,
            sentences_per_domain=n_sent,
            anchor_sizes=(0, 50, 500),
            encoder_dim=4,
            seed=seed,
        )
        assert validate_dataset(generate_synthetic(spec)).ok


@pytest.fixture(scope="module")
def manifest():
    return generate_synthetic(small_spec(sentences_per_domain=80))


class TestLeaveOneOut:
    def test_report_structure(self, manifest):
        proto = EvalProtocol(held_out_domain="dom1", seeds=(11, 12), anchor_sizes=ANCHORS,
                             net_config=tiny_net_config(manifest.tensor_dim))
        report = leave_one_out(manifest, proto, "dalc")
        assert len(report.rows) == len(ANCHORS) * 2
        assert {r.seed for r in report.rows} == {11, 12}
        assert all(r.domain == "dom1" for r in report.rows)

    def test_exp3_identical_for_every_held_out(self, manifest):
        preds = {}
        for held in ("dom0", "dom2"):
            proto = EvalProtocol(held_out_domain=held, seeds=(11,), anchor_sizes=ANCHORS)
            report = leave_one_out(manifest, proto, "exp3")
            preds[held] = [r.pred for r in report.rows]
        assert preds["dom0"] == preds["dom2"]

    def test_gbt_kinds_run(self, manifest):
        for kind in ("gbt_corpus", "gbt_instance"):
            proto = EvalProtocol(held_out_domain="dom0", seeds=(11,), anchor_sizes=ANCHORS)
            report = leave_one_out(manifest, proto, kind)
            assert len(report.rows) == len(ANCHORS)
            assert all(np.isfinite(r.pred) for r in report.rows)

    def test_zero_anchor_grows_training_set(self, manifest):
        plain = dalc_training_instances(manifest, "dom1", anchor_sizes=ANCHORS)
        augmented = dalc_training_instances(
            manifest, "dom1", anchor_sizes=ANCHORS, with_zero_anchor=True
        )
        held_count = len(manifest.domain("dom1").sentences)
        assert len(augmented) == len(plain) + held_count

    def test_zero_anchor_excluded_from_eval(self, manifest):
        proto = EvalProtocol(held_out_domain="dom1", seeds=(11,), anchor_sizes=ANCHORS,
                             with_zero_anchor=True,
                             net_config=tiny_net_config(manifest.tensor_dim, max_epochs=2))
        report = leave_one_out(manifest, proto, "dalc")
        assert all(r.size != 0 for r in report.rows)

    def test_isolation_of_held_out_sentences(self, manifest):
        instances = dalc_training_instances(manifest, "dom1", anchor_sizes=ANCHORS)
        held_reps = {id(s.encoder_rep) for s in manifest.domain("dom1").sentences}
        assert all(id(i.encoder_rep) not in held_reps for i in instances)

    def test_unknown_predictor_rejected(self, manifest):
        proto = EvalProtocol(held_out_domain="dom0", seeds=(11,))
        with pytest.raises(ValueError):
            leave_one_out(manifest, proto, "oracle")

    def test_insufficient_domains(self):
        manifest = generate_synthetic(small_spec(
            n_domains=1, vocab_sizes=(60,), zipf_exponents=(1.1,),
            curve_params=((0.2, -1.2, 0.7),)
        ))
        proto = EvalProtocol(held_out_domain="dom0", seeds=(11,))
        with pytest.raises(InsufficientDomains):
            leave_one_out(manifest, proto, "exp3")

    def test_missing_gold_at_eval_size(self, manifest):
        proto = EvalProtocol(held_out_domain="dom0", seeds=(11,), anchor_sizes=ANCHORS,
                             eval_sizes=(0, 100, 777))
        with pytest.raises(NoGoldLabels):
            leave_one_out(manifest, proto, "exp3")


class TestEvalReport:
    def test_rmse_consistency_with_rows(self):
        rows = [
            ReportRow(domain="d", size=s, seed=seed, gold=g, pred=p)
            for seed, (s, g, p) in enumerate(
                [(0, 0.3, 0.35), (100, 0.4, 0.38), (1000, 0.5, 0.55)]
            )
        ]
        report = EvalReport(predictor="dalc", rows=rows)
        for seed, expected in report.per_seed_rmse("d").items():
            sel = [r for r in rows if r.seed == seed]
            assert expected == pytest.approx(
                rmse([r.pred for r in sel], [r.gold for r in sel]), abs=1e-12
            )

    def test_json_summary_recomputable(self):
        rows = [
            ReportRow(domain="d", size=s, seed=11, gold=g, pred=p)
            for s, g, p in [(0, 0.3, 0.35), (100, 0.4, 0.38)]
        ]
        report = EvalReport(predictor="dalc", rows=rows)
        payload = json.loads(report.to_json())
        recomputed = rmse(
            [r["pred"] for r in payload["rows"]], [r["gold"] for r in payload["rows"]]
        )
        assert payload["per_domain_rmse"]["d"] == pytest.approx(recomputed, abs=1e-12)

    def test_tsv_layout(self):
        report = EvalReport(
            predictor="dalc",
            rows=[ReportRow(domain="d", size=100, seed=11, gold=0.4, pred=0.38)],
        )
        lines = report.to_tsv().strip().split("\n")
        assert lines[0].split("\t") == ["domain", "anchor", "seed", "gold", "pred", "abs_err"]
        assert lines[1].startswith("d\t100\t11\t")

    def test_merge_requires_same_predictor(self):
        a = EvalReport(predictor="dalc")
        b = EvalReport(predictor="exp3")
        with pytest.raises(ValueError):
            a.merged_with(b)


class TestAblation:
    def test_empty_set_equals_plain_run(self):
        manifest = generate_synthetic(small_spec(sentences_per_domain=40))
        proto = EvalProtocol(held_out_domain="dom1", seeds=(11,), anchor_sizes=ANCHORS,
                             net_config=tiny_net_config(manifest.tensor_dim, max_epochs=3))
        suite = ablation_suite(manifest, proto)
        assert set(suite) == {"full"}
        plain = leave_one_out(manifest, proto, "dalc")
        assert [r.pred for r in suite["full"].rows] == [r.pred for r in plain.rows]

    def test_dropping_informative_encoder_hurts(self):
        from dalc.harness import benchmark_spec

        manifest = generate_synthetic(benchmark_spec(sentences_per_domain=250, seed=7))
        proto = EvalProtocol(
            held_out_domain="dom4",
            seeds=(11, 12),
            anchor_sizes=(0, 1000, 10000, 20000, 100000),
            net_config=benchmark_net_config(manifest.tensor_dim),
            ablation=frozenset({"encoder"}),
        )
        suite = ablation_suite(manifest, proto)
        assert suite["drop_encoder"].average_rmse() > suite["full"].average_rmse()

    def test_dropping_constant_feature_is_noop(self):
        manifest = generate_synthetic(small_spec(sentences_per_domain=40))
        for dom in manifest.domains:
            for s in dom.sentences:
                s.labse_src = None
                s.labse_hyp = None
        proto = EvalProtocol(held_out_domain="dom1", seeds=(11,), anchor_sizes=ANCHORS,
                             net_config=tiny_net_config(manifest.tensor_dim, max_epochs=3))
        plain = leave_one_out(manifest, proto, "dalc")
        dropped = leave_one_out(
            manifest, replace(proto, ablation=frozenset({"xsim"})), "dalc"
        )
        assert [r.pred for r in plain.rows] == [r.pred for r in dropped.rows]


class TestDistributionReport:
    def _manifest_with_labels(self, train_value: float, test_value: float) -> Manifest:
        def dom(name, value):
            sentences = [
                SentenceRecord(
                    id=f"{name}-{i}",
                    tokens=["a"],
                    encoder_rep=np.zeros((1, 2), dtype=np.float32),
                    decode_trace=[DecodeStep(0.9, 0.05, 0.1)],
                    gold_chrf={0: value, 100: value},
                )
                for i in range(4)
            ]
            return DomainEntry(name=name, sentences=sentences)

        return Manifest(domains=[dom("train", train_value), dom("test", test_value)], tensor_dim=2)

    def test_identical_pools_have_zero_distance(self):
        manifest = self._manifest_with_labels(0.4, 0.4)
        report = distribution_report(manifest, "test")
        assert report.wasserstein == 0.0

    def test_point_masses(self):
        manifest = self._manifest_with_labels(0.2, 0.8)
        report = distribution_report(manifest, "test")
        assert report.wasserstein == pytest.approx(0.6)
        assert report.train_counts.sum() == 8
        assert report.test_counts.sum() == 8

    def test_tsv_has_twenty_bins(self):
        manifest = self._manifest_with_labels(0.2, 0.8)
        lines = distribution_report(manifest, "test").to_tsv().strip().split("\n")
        assert len(lines) == 21  # header + 20 bins

    def test_missing_labels(self):
        manifest = self._manifest_with_labels(0.2, 0.8)
        for s in manifest.domain("test").sentences:
            s.gold_chrf = {}
        with pytest.raises(NoGoldLabels):
            distribution_report(manifest, "test")

    def test_shifted_domain_has_larger_distance_and_error(self):
        spec = small_spec(sentences_per_domain=80,
                          curve_params=((0.15, -1.4, 0.60), (0.2, -1.2, 0.66), (0.18, -2.2, 0.30)))
        manifest = generate_synthetic(spec)
        shifted = distribution_report(manifest, "dom2").wasserstein
        centered = distribution_report(manifest, "dom1").wasserstein
        assert shifted > centered
        cfg = tiny_net_config(manifest.tensor_dim)
        err_shifted = leave_one_out(
            manifest,
            EvalProtocol(held_out_domain="dom2", seeds=(11,), anchor_sizes=ANCHORS, net_config=cfg),
            "dalc",
        ).average_rmse()
        err_centered = leave_one_out(
            manifest,
            EvalProtocol(held_out_domain="dom1", seeds=(11,), anchor_sizes=ANCHORS, net_config=cfg),
            "dalc",
        ).average_rmse()
        assert err_shifted > err_centered
