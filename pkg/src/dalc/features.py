"""Instance difficulty features, corpus-level sample features, and pooling.

Instance features come from the greedy decode trace (decoder uncertainty)
plus an optional cross-lingual embedding similarity. Corpus features
summarize a source-side sample's size, diversity, and vocabulary overlap
with the pretraining corpus; all seven are log1p-scaled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dataset import DecodeStep, SentenceRecord
from .errors import (
    DimensionMismatch,
    EmptyMatrix,
    EmptySample,
    EmptyTrace,
    NonPositiveProbability,
    ZeroVector,
)

# Vocabulary of the general pretraining corpus.
GeneralVocab = frozenset[str]

DF_FEATURE_NAMES = ("least_confidence", "margin", "avg_entropy", "xsim")
CORPUS_FEATURE_NAMES = (
    "n_instances",
    "n_tokens",
    "vocab_overlap",
    "avg_len_chars",
    "avg_len_tokens",
    "n_unique_tokens",
    "type_token_ratio",
)


def least_confidence(trace: Sequence[DecodeStep]) -> float:
    """1 minus the length-normalized sequence probability, in [0, 1).

    The normalized probability is the geometric mean of the per-step
    greedy-token probabilities: exp((1/m) * sum ln p1_i).
    """
    if not trace:
        raise EmptyTrace("least_confidence needs at least one decode step")
    log_sum = 0.0
    for step in trace:
        if step.p1 <= 0.0:
            raise NonPositiveProbability(f"p1 must be positive, got {step.p1}")
        log_sum += math.log(step.p1)
    return 1.0 - math.exp(log_sum / len(trace))


def margin_score(trace: Sequence[DecodeStep]) -> float:
    """Mean gap between the top and runner-up token probabilities, in [0, 1]."""
    if not trace:
        raise EmptyTrace("margin_score needs at least one decode step")
    return sum(step.p1 - step.p2 for step in trace) / len(trace)


def avg_token_entropy(trace: Sequence[DecodeStep]) -> float:
    """Mean per-step distribution entropy, in nats."""
    if not trace:
        raise EmptyTrace("avg_token_entropy needs at least one decode step")
    return sum(step.entropy for step in trace) / len(trace)


def xsim(src_vec: np.ndarray, hyp_vec: np.ndarray) -> float:
    """Cosine similarity between source and translation embeddings, in [-1, 1]."""
    src = np.asarray(src_vec, dtype=np.float64)
    hyp = np.asarray(hyp_vec, dtype=np.float64)
    if src.shape != hyp.shape:
        raise DimensionMismatch(f"embedding dims differ: {src.shape} vs {hyp.shape}")
    ns = float(np.linalg.norm(src))
    nh = float(np.linalg.norm(hyp))
    if ns == 0.0 or nh == 0.0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return float(np.dot(src, hyp) / (ns * nh))


@dataclass(frozen=True)
class InstanceFeatures:
    """The four per-sentence difficulty features.

    ``has_xsim`` records whether embedding vectors were present; when they
    are absent, xsim defaults to 0 so the pipeline stays runnable without
    an external embedder (ablations can exclude the slot).
    """

    least_confidence: float
    margin: float
    avg_entropy: float
    xsim: float
    has_xsim: bool = True

    @classmethod
    def from_record(cls, record: SentenceRecord) -> "InstanceFeatures":
        if record.labse_src is not None and record.labse_hyp is not None:
            sim = xsim(record.labse_src, record.labse_hyp)
            present = True
        else:
            sim = 0.0
            present = False
        return cls(
            least_confidence=least_confidence(record.decode_trace),
            margin=margin_score(record.decode_trace),
            avg_entropy=avg_token_entropy(record.decode_trace),
            xsim=sim,
            has_xsim=present,
        )

    def as_vector(self) -> np.ndarray:
        return np.array(
            [self.least_confidence, self.margin, self.avg_entropy, self.xsim],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class CorpusFeatures:
    """The 7 log1p-scaled sample statistics, in canonical order.

    Fields hold the transformed values ln(1 + raw); the all-zero vector
    represents the 0 anchor (no adaptation sample).
    """

    n_instances: float
    n_tokens: float
    vocab_overlap: float
    avg_len_chars: float
    avg_len_tokens: float
    n_unique_tokens: float
    type_token_ratio: float

    @classmethod
    def from_raw(cls, **raw: float) -> "CorpusFeatures":
        return cls(**{name: math.log1p(raw[name]) for name in CORPUS_FEATURE_NAMES})

    @classmethod
    def zero(cls) -> "CorpusFeatures":
        return cls(*([0.0] * len(CORPUS_FEATURE_NAMES)))

    def as_vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in CORPUS_FEATURE_NAMES], dtype=np.float64)


def _as_token_list(sentence) -> list[str]:
    if isinstance(sentence, str):
        return sentence.split()
    return list(sentence)


def corpus_features(
    sample: Iterable[Sequence[str] | str], general_vocab: Iterable[str]
) -> CorpusFeatures:
    """Summarize a source-side sample against the pretraining vocabulary.

    ``sample`` is an iterable of tokenized sentences (a whitespace-joined
    string is accepted per sentence and split). Character lengths count
    the raw sentence including inter-token spaces. Vocabulary overlap is
    the fraction of the sample's vocabulary present in ``general_vocab``.
    """
    n_instances = 0
    n_tokens = 0
    n_chars = 0
    vocab: set[str] = set()
    for sentence in sample:
        toks = _as_token_list(sentence)
        n_instances += 1
        n_tokens += len(toks)
        n_chars += sum(len(t) for t in toks) + max(len(toks) - 1, 0)
        vocab.update(toks)
    if n_instances == 0:
        raise EmptySample("corpus features need at least one sentence")

    general = general_vocab if isinstance(general_vocab, (set, frozenset)) else set(general_vocab)
    overlap = len(vocab & general) / len(vocab) if vocab else 0.0
    return CorpusFeatures.from_raw(
        n_instances=n_instances,
        n_tokens=n_tokens,
        vocab_overlap=overlap,
        avg_len_chars=n_chars / n_instances,
        avg_len_tokens=n_tokens / n_instances,
        n_unique_tokens=len(vocab),
        type_token_ratio=len(vocab) / n_tokens if n_tokens else 0.0,
    )


def minmax_pool(encoder_rep: np.ndarray) -> np.ndarray:
    """Column-wise minima then maxima of a (T, d) matrix, concatenated (2d)."""
    m = np.asarray(encoder_rep, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise EmptyMatrix(f"min-max pooling needs a non-empty 2-D matrix, got {m.shape}")
    return np.concatenate([m.min(axis=0), m.max(axis=0)])


_HEAPS_FRACTIONS = (0.1, 0.25, 0.5, 0.75, 1.0)


def extrapolate_corpus_features(
    sample: Sequence[Sequence[str] | str],
    general_vocab: Iterable[str],
    target_size: int,
) -> CorpusFeatures:
    """Corpus features for a sample size we do not actually have.

    Count features (instances, tokens) scale with the size ratio; the
    unique-token count follows a Heaps-law fit V = K * N^beta estimated
    from nested prefixes of the given sample; ratio features (overlap,
    type-token ratio, average lengths) hold the given sample's values.
    """
    sents = [_as_token_list(s) for s in sample]
    if not sents:
        raise EmptySample("extrapolation needs a non-empty base sample")
    if target_size < 1:
        raise ValueError("target_size must be >= 1")
    base = corpus_features(sents, general_vocab)

    n_base = len(sents)
    boundaries = sorted({max(1, round(f * n_base)) for f in _HEAPS_FRACTIONS})
    points: list[tuple[int, int]] = []  # (cumulative tokens, unique tokens)
    vocab: set[str] = set()
    n_tokens = 0
    next_b = 0
    for i, toks in enumerate(sents, start=1):
        n_tokens += len(toks)
        vocab.update(toks)
        if next_b < len(boundaries) and i == boundaries[next_b]:
            if n_tokens > 0:
                points.append((n_tokens, len(vocab)))
            next_b += 1

    base_tokens = math.expm1(base.n_tokens)
    target_tokens = base_tokens * target_size / n_base
    distinct_n = {n for n, _v in points}
    if len(distinct_n) >= 2 and target_tokens >= 1:
        log_n = np.log([n for n, _v in points])
        log_v = np.log([v for _n, v in points])
        beta, log_k = np.polyfit(log_n, log_v, 1)
        beta = min(max(float(beta), 0.0), 1.0)
        v_target = math.exp(float(log_k) + beta * math.log(target_tokens))
    else:
        # degenerate prefix curve: fall back to a square-root law
        v_target = len(vocab) * math.sqrt(max(target_tokens, 1.0) / max(base_tokens, 1.0))

    return CorpusFeatures.from_raw(
        n_instances=target_size,
        n_tokens=target_tokens,
        vocab_overlap=math.expm1(base.vocab_overlap),
        avg_len_chars=math.expm1(base.avg_len_chars),
        avg_len_tokens=math.expm1(base.avg_len_tokens),
        n_unique_tokens=v_target,
        type_token_ratio=math.expm1(base.type_token_ratio),
    )
