"""On-disk data model: manifests, tensor records, decode traces, gold labels.

A dataset is a JSONL manifest whose first line is a header object
(``{"tensor_dim": d, "general_vocab_file": ...}``) followed by one object
per domain. Per-domain payloads live in sibling files referenced by
relative path:

* ``sentences_file`` — JSONL, one object per sentence
  (``id``, ``tokens``, ``gold_chrf``, optional ``labse_src``/``labse_hyp``);
* ``tensors_file``  — concatenated "DLC1" records, one per sentence, in
  sentence order (magic ``DLC1``, u32-LE rows, u32-LE cols, row-major
  little-endian float32 payload);
* ``traces_file``   — JSONL, line i holds the greedy-decode trace of
  sentence i as an array of ``[p1, p2, entropy]`` triples;
* ``samples``       — map from anchor size to a source-side sample file,
  one tokenized sentence (tokens space-joined) per line.

Loaded manifests are immutable by convention and safe to share across
threads; loading itself is single-threaded.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .errors import DimensionMismatch, MalformedHeader, MissingFile

TENSOR_MAGIC = b"DLC1"
_HEADER = struct.Struct("<II")

# A learning curve is an ordered map: anchor size -> mean chrF.
LearningCurve = dict[int, float]


@dataclass(frozen=True)
class DecodeStep:
    """Sufficient statistics of one greedy decoding step.

    p1 is the probability of the emitted token, p2 the runner-up
    probability, entropy the full-distribution entropy in nats.
    """

    p1: float
    p2: float
    entropy: float


@dataclass
class SentenceRecord:
    """One source sentence with its model-side observations and gold labels."""

    id: str
    tokens: list[str]
    encoder_rep: np.ndarray  # (T, d) float32
    decode_trace: list[DecodeStep]
    gold_chrf: dict[int, float] = field(default_factory=dict)
    labse_src: np.ndarray | None = None
    labse_hyp: np.ndarray | None = None


@dataclass
class SampleRef:
    """Reference to a source-side sample of a given anchor size.

    Backed by a file (``path`` relative to ``base_dir``), an in-memory
    list (``inline``), or a deterministic generator (``factory``, used by
    the synthetic harness so 100k-sentence samples are never held
    materialized). ``tokens()`` materializes the sample as a list of token
    lists; one-pass consumers should iterate ``iter_tokens()`` instead.
    """

    size: int
    path: str | None = None
    base_dir: Path | None = None
    inline: list[list[str]] | None = None
    factory: Callable[[], Iterator[list[str]]] | None = field(
        default=None, repr=False, compare=False
    )

    def iter_tokens(self) -> Iterator[list[str]]:
        if self.inline is not None:
            yield from self.inline
            return
        if self.factory is not None:
            yield from self.factory()
            return
        if self.path is None:
            raise MissingFile(f"sample for size {self.size} has no backing source")
        full = (self.base_dir or Path(".")) / self.path
        with open(full, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line:
                    yield line.split(" ")

    def tokens(self) -> list[list[str]]:
        return list(self.iter_tokens())


@dataclass
class DomainEntry:
    """One adaptation domain: labeled sentences plus per-anchor samples."""

    name: str
    sentences: list[SentenceRecord]
    samples: dict[int, SampleRef] = field(default_factory=dict)
    gold_curve: LearningCurve | None = None


@dataclass
class Manifest:
    """A fully materialized dataset, the canonical in-memory form."""

    domains: list[DomainEntry]
    tensor_dim: int
    general_vocab: frozenset[str] | None = None

    def domain(self, name: str) -> DomainEntry:
        for d in self.domains:
            if d.name == name:
                return d
        raise KeyError(f"no domain named {name!r}")

    @property
    def domain_names(self) -> list[str]:
        return [d.name for d in self.domains]


# ---------------------------------------------------------------------------
# Tensor records
# ---------------------------------------------------------------------------


def write_tensor_record(matrix: np.ndarray) -> bytes:
    """Serialize a 2-D float matrix as one DLC1 record (float32, row-major)."""
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    rows, cols = m.shape
    return TENSOR_MAGIC + _HEADER.pack(rows, cols) + m.tobytes(order="C")


def read_tensor_record(data: bytes) -> np.ndarray:
    """Parse exactly one DLC1 record; bit-exact inverse of write_tensor_record."""
    matrix, offset = _read_record_at(data, 0, where="tensor record")
    if offset != len(data):
        raise MalformedHeader(
            f"tensor record has {len(data) - offset} trailing bytes"
        )
    return matrix


def _read_record_at(data: bytes, offset: int, where: str) -> tuple[np.ndarray, int]:
    head_end = offset + 4 + _HEADER.size
    if len(data) < head_end:
        raise MalformedHeader(f"{where}: truncated header")
    if data[offset : offset + 4] != TENSOR_MAGIC:
        raise MalformedHeader(f"{where}: bad magic {data[offset:offset + 4]!r}")
    rows, cols = _HEADER.unpack_from(data, offset + 4)
    payload_end = head_end + rows * cols * 4
    if len(data) < payload_end:
        raise MalformedHeader(
            f"{where}: truncated payload (need {rows}x{cols} float32)"
        )
    flat = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=head_end)
    return flat.reshape(rows, cols).copy(), payload_end


def iter_tensor_records(data: bytes, where: str = "tensor file") -> Iterator[np.ndarray]:
    """Yield every record of a concatenated DLC1 file."""
    offset = 0
    index = 0
    while offset < len(data):
        matrix, offset = _read_record_at(data, offset, f"{where}[{index}]")
        index += 1
        yield matrix


# ---------------------------------------------------------------------------
# Manifest load / save
# ---------------------------------------------------------------------------


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise MalformedHeader(f"{where}: missing required key {key!r}")
    return obj[key]


def _resolve(base: Path, rel: str, where: str) -> Path:
    full = base / rel
    if not full.is_file():
        raise MissingFile(f"{where}: referenced file not found: {full}")
    return full


def _as_curve(obj: dict, where: str) -> LearningCurve:
    curve: LearningCurve = {}
    for key, value in obj.items():
        try:
            size = int(key)
        except ValueError as exc:
            raise MalformedHeader(f"{where}: non-integer anchor size {key!r}") from exc
        curve[size] = float(value)
    return dict(sorted(curve.items()))


def load_manifest(path: str | Path) -> Manifest:
    """Load and materialize a JSONL manifest, checking structural invariants.

    Raises MissingFile, MalformedHeader or DimensionMismatch, each naming
    the offending record. Value-level problems (out-of-range labels,
    inconsistent traces) are the business of :func:`validate_dataset`.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    base = path.parent

    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in (l.strip() for l in fh) if ln]
    if not lines:
        raise MalformedHeader(f"{path}: empty manifest")

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise MalformedHeader(f"{path}: header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict) or "tensor_dim" not in header:
        raise MalformedHeader(f"{path}: header must carry tensor_dim")
    tensor_dim = int(header["tensor_dim"])
    if tensor_dim <= 0:
        raise MalformedHeader(f"{path}: tensor_dim must be positive")

    general_vocab: frozenset[str] | None = None
    if header.get("general_vocab_file"):
        vocab_path = _resolve(base, header["general_vocab_file"], "header")
        with open(vocab_path, encoding="utf-8") as fh:
            general_vocab = frozenset(t for t in (ln.strip() for ln in fh) if t)

    domains: list[DomainEntry] = []
    seen_names: set[str] = set()
    for line_no, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedHeader(f"{path}:{line_no}: not valid JSON: {exc}") from exc
        name = str(_require(obj, "name", f"{path}:{line_no}"))
        where = f"domain {name!r}"
        if name in seen_names:
            raise MalformedHeader(f"{where}: duplicate domain name")
        seen_names.add(name)

        sentences = _load_sentences(
            _resolve(base, _require(obj, "sentences_file", where), where), where
        )
        _attach_tensors(
            _resolve(base, _require(obj, "tensors_file", where), where),
            sentences,
            tensor_dim,
            where,
        )
        _attach_traces(
            _resolve(base, _require(obj, "traces_file", where), where), sentences, where
        )

        samples: dict[int, SampleRef] = {}
        for key, rel in sorted(_require(obj, "samples", where).items(), key=lambda kv: int(kv[0])):
            size = int(key)
            if size < 0:
                raise MalformedHeader(f"{where}: negative anchor size {size}")
            _resolve(base, rel, f"{where} sample {size}")
            samples[size] = SampleRef(size=size, path=rel, base_dir=base)

        gold_curve = None
        if obj.get("gold_curve") is not None:
            gold_curve = _as_curve(obj["gold_curve"], where)

        domains.append(
            DomainEntry(name=name, sentences=sentences, samples=samples, gold_curve=gold_curve)
        )

    return Manifest(domains=domains, tensor_dim=tensor_dim, general_vocab=general_vocab)


def _load_sentences(path: Path, where: str) -> list[SentenceRecord]:
    sentences = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedHeader(f"{where} sentence {line_no}: bad JSON") from exc
            sid = str(_require(obj, "id", f"{where} sentence {line_no}"))
            gold = {int(k): float(v) for k, v in obj.get("gold_chrf", {}).items()}
            labse_src = obj.get("labse_src")
            labse_hyp = obj.get("labse_hyp")
            sentences.append(
                SentenceRecord(
                    id=sid,
                    tokens=[str(t) for t in _require(obj, "tokens", f"sentence {sid}")],
                    encoder_rep=np.empty((0, 0), dtype=np.float32),
                    decode_trace=[],
                    gold_chrf=dict(sorted(gold.items())),
                    labse_src=None if labse_src is None else np.asarray(labse_src, dtype=np.float32),
                    labse_hyp=None if labse_hyp is None else np.asarray(labse_hyp, dtype=np.float32),
                )
            )
    return sentences


def _attach_tensors(
    path: Path, sentences: list[SentenceRecord], tensor_dim: int, where: str
) -> None:
    data = path.read_bytes()
    count = 0
    for idx, matrix in enumerate(iter_tensor_records(data, where=str(path))):
        if idx >= len(sentences):
            raise MalformedHeader(
                f"{where}: tensor file has more records than sentences"
            )
        record = sentences[idx]
        if matrix.shape[1] != tensor_dim:
            raise DimensionMismatch(
                f"{where} sentence {record.id!r}: tensor has {matrix.shape[1]} "
                f"columns, manifest declares {tensor_dim}"
            )
        record.encoder_rep = matrix
        count += 1
    if count != len(sentences):
        raise MalformedHeader(
            f"{where}: {len(sentences)} sentences but {count} tensor records"
        )


def _attach_traces(path: Path, sentences: list[SentenceRecord], where: str) -> None:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in (l.strip() for l in fh) if ln]
    if len(lines) != len(sentences):
        raise MalformedHeader(
            f"{where}: {len(sentences)} sentences but {len(lines)} trace lines"
        )
    for record, line in zip(sentences, lines):
        try:
            triples = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedHeader(f"{where} sentence {record.id!r}: bad trace JSON") from exc
        trace = []
        for step in triples:
            if not isinstance(step, (list, tuple)) or len(step) != 3:
                raise MalformedHeader(
                    f"{where} sentence {record.id!r}: trace steps must be [p1, p2, entropy]"
                )
            trace.append(DecodeStep(p1=float(step[0]), p2=float(step[1]), entropy=float(step[2])))
        record.decode_trace = trace


def save_manifest(manifest: Manifest, out_dir: str | Path, name: str = "dataset") -> Path:
    """Write a manifest and all sibling files under ``out_dir``.

    Output is deterministic: same manifest, byte-identical files.
    Returns the manifest path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    header: dict = {"tensor_dim": manifest.tensor_dim}
    if manifest.general_vocab is not None:
        vocab_rel = f"{name}.general_vocab.txt"
        (out_dir / vocab_rel).write_text(
            "".join(f"{t}\n" for t in sorted(manifest.general_vocab)), encoding="utf-8"
        )
        header["general_vocab_file"] = vocab_rel

    lines = [json.dumps(header, sort_keys=True)]
    for dom in manifest.domains:
        sent_rel = f"{dom.name}.sentences.jsonl"
        tens_rel = f"{dom.name}.tensors.bin"
        trace_rel = f"{dom.name}.traces.jsonl"

        with open(out_dir / sent_rel, "w", encoding="utf-8") as fh:
            for s in dom.sentences:
                obj = {
                    "id": s.id,
                    "tokens": s.tokens,
                    "gold_chrf": {str(k): v for k, v in sorted(s.gold_chrf.items())},
                }
                if s.labse_src is not None:
                    obj["labse_src"] = [float(x) for x in s.labse_src]
                if s.labse_hyp is not None:
                    obj["labse_hyp"] = [float(x) for x in s.labse_hyp]
                fh.write(json.dumps(obj, sort_keys=True) + "\n")

        with open(out_dir / tens_rel, "wb") as bfh:
            for s in dom.sentences:
                bfh.write(write_tensor_record(s.encoder_rep))

        with open(out_dir / trace_rel, "w", encoding="utf-8") as fh:
            for s in dom.sentences:
                fh.write(
                    json.dumps([[st.p1, st.p2, st.entropy] for st in s.decode_trace]) + "\n"
                )

        samples_obj = {}
        for size, ref in sorted(dom.samples.items()):
            sample_rel = f"{dom.name}.sample{size}.txt"
            with open(out_dir / sample_rel, "w", encoding="utf-8") as fh:
                for toks in ref.iter_tokens():
                    fh.write(" ".join(toks) + "\n")
            samples_obj[str(size)] = sample_rel

        entry = {
            "name": dom.name,
            "sentences_file": sent_rel,
            "tensors_file": tens_rel,
            "traces_file": trace_rel,
            "samples": samples_obj,
            "gold_curve": None
            if dom.gold_curve is None
            else {str(k): v for k, v in sorted(dom.gold_curve.items())},
        }
        lines.append(json.dumps(entry, sort_keys=True))

    manifest_path = out_dir / f"{name}.manifest.jsonl"
    manifest_path.write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")
    return manifest_path


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    record_id: str
    message: str

    def __str__(self) -> str:
        return f"{self.record_id}: {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, record_id: str, message: str) -> None:
        self.violations.append(Violation(record_id, message))

    def __str__(self) -> str:
        if self.ok:
            return "dataset consistent (0 violations)"
        return "\n".join(str(v) for v in self.violations)


_P_SUM_TOL = 1e-9
_UNIT_TOL = 1e-3


def validate_dataset(manifest: Manifest) -> ValidationReport:
    """Report every value-level invariant violation; empty report iff consistent."""
    report = ValidationReport()

    seen: set[str] = set()
    for dom in manifest.domains:
        if dom.name in seen:
            report.add(dom.name, "duplicate domain name")
        seen.add(dom.name)

        for size in dom.samples:
            if size < 0:
                report.add(dom.name, f"negative sample anchor size {size}")

        labeled = [set(s.gold_chrf) for s in dom.sentences]
        if dom.gold_curve is not None:
            for size in dom.gold_curve:
                if any(size not in anchors for anchors in labeled):
                    report.add(
                        dom.name,
                        f"gold_curve anchor {size} lacks per-sentence labels",
                    )

        for s in dom.sentences:
            rid = s.id
            if len(s.tokens) < 1:
                report.add(rid, "sentence has no tokens")
            if s.encoder_rep.ndim != 2 or s.encoder_rep.shape[0] != len(s.tokens):
                report.add(
                    rid,
                    f"encoder matrix rows {s.encoder_rep.shape[0] if s.encoder_rep.ndim == 2 else '?'} "
                    f"!= token count {len(s.tokens)}",
                )
            elif s.encoder_rep.shape[1] != manifest.tensor_dim:
                report.add(
                    rid,
                    f"encoder matrix has {s.encoder_rep.shape[1]} columns, "
                    f"manifest declares {manifest.tensor_dim}",
                )
            if s.encoder_rep.size and not np.isfinite(s.encoder_rep).all():
                report.add(rid, "encoder matrix has non-finite values")

            for size, value in s.gold_chrf.items():
                if not (0.0 <= value <= 1.0):
                    report.add(rid, f"chrf out of range at anchor {size}: {value}")

            if not s.decode_trace:
                report.add(rid, "empty decode trace")
            for i, st in enumerate(s.decode_trace):
                if not (0.0 < st.p1 <= 1.0):
                    report.add(rid, f"step {i}: p1 not in (0,1]: {st.p1}")
                if st.p2 < 0.0:
                    report.add(rid, f"step {i}: negative p2: {st.p2}")
                if st.p2 > st.p1:
                    report.add(rid, f"step {i}: p2 exceeds p1")
                if st.p1 + st.p2 > 1.0 + _P_SUM_TOL:
                    report.add(rid, f"step {i}: p1 + p2 exceeds 1")
                if st.entropy < 0.0:
                    report.add(rid, f"step {i}: negative entropy: {st.entropy}")

            for label, vec in (("labse_src", s.labse_src), ("labse_hyp", s.labse_hyp)):
                if vec is not None:
                    norm = float(np.linalg.norm(vec))
                    if abs(norm - 1.0) > _UNIT_TOL:
                        report.add(rid, f"{label} is not a unit vector (norm {norm:.4f})")

    return report
