import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dalc.dataset import DecodeStep, DomainEntry, Manifest, SampleRef, SentenceRecord


def make_record(
    rid: str = "s0",
    tokens=("a", "b", "c"),
    d: int = 4,
    gold=None,
    seed: int = 0,
    with_labse: bool = True,
) -> SentenceRecord:
    """Hand-sized consistent sentence record for unit tests."""
    rng = np.random.Generator(np.random.PCG64(seed))
    t = len(tokens)
    rep = rng.normal(size=(t, d)).astype(np.float32)
    p1 = rng.uniform(0.4, 0.9, size=t)
    trace = [
        DecodeStep(p1=float(p), p2=float(0.5 * (1 - p)), entropy=float(-p * np.log(p) + 0.3))
        for p in p1
    ]
    labse_src = labse_hyp = None
    if with_labse:
        v = rng.normal(size=8)
        labse_src = (v / np.linalg.norm(v)).astype(np.float32)
        w = rng.normal(size=8)
        labse_hyp = (w / np.linalg.norm(w)).astype(np.float32)
    return SentenceRecord(
        id=rid,
        tokens=list(tokens),
        encoder_rep=rep,
        decode_trace=trace,
        gold_chrf=dict(gold or {0: 0.3, 100: 0.5, 1000: 0.6}),
        labse_src=labse_src,
        labse_hyp=labse_hyp,
    )


def make_manifest(n_domains: int = 2, sentences: int = 3, d: int = 4) -> Manifest:
    """Tiny hand-built manifest with samples and gold curves."""
    domains = []
    for di in range(n_domains):
        recs = [
            make_record(rid=f"d{di}-s{i}", d=d, seed=di * 100 + i) for i in range(sentences)
        ]
        curve = {
            size: float(np.mean([r.gold_chrf[size] for r in recs]))
            for size in (0, 100, 1000)
        }
        samples = {
            100: SampleRef(size=100, inline=[["tok", "a"], ["tok", "b"]]),
            1000: SampleRef(size=1000, inline=[["tok", "a", "c"]] * 3),
        }
        domains.append(
            DomainEntry(
                name=f"dom{di}", sentences=recs, samples=samples, gold_curve=curve
            )
        )
    return Manifest(domains=domains, tensor_dim=d, general_vocab=frozenset({"tok", "a"}))


@pytest.fixture
def tiny_manifest() -> Manifest:
    return make_manifest()
