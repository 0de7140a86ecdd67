"""Sentence-level chrF and predictor error metrics.

chrF follows Popovic (2015): F-beta over character n-gram precision and
recall, arithmetically averaged over orders 1..max_char_order. It is usable
per sentence, which is what makes instance-level curve prediction possible.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .errors import EmptyList, EmptyReference, LengthMismatch


@dataclass(frozen=True)
class ChrfConfig:
    """chrF scoring parameters.

    max_char_order: highest character n-gram order (orders 1..max included).
    beta: recall weight; beta=2 weighs recall twice as much as precision.
    strip_whitespace: remove all whitespace before extracting n-grams.
    """

    max_char_order: int = 6
    beta: float = 2.0
    strip_whitespace: bool = True

    def __post_init__(self) -> None:
        if self.max_char_order < 1:
            raise ValueError("max_char_order must be >= 1")
        if self.beta <= 0:
            raise ValueError("beta must be > 0")


DEFAULT_CHRF = ChrfConfig()


def _char_ngrams(text: str, order: int) -> Counter:
    return Counter(text[i : i + order] for i in range(len(text) - order + 1))


def chrf(hypothesis: str, reference: str, cfg: ChrfConfig = DEFAULT_CHRF) -> float:
    """Character n-gram F-score of ``hypothesis`` against ``reference``, in [0, 1].

    An order contributes only if the reference has at least one n-gram of
    that order; for contributing orders with an empty hypothesis side the
    precision is 0. Returns 0 when precision and recall are both 0.

    Raises EmptyReference if the reference is empty (after whitespace
    stripping, when enabled).
    """
    if cfg.strip_whitespace:
        hypothesis = "".join(hypothesis.split())
        reference = "".join(reference.split())
    if not reference:
        raise EmptyReference("reference has no characters to score against")

    precisions = []
    recalls = []
    for order in range(1, cfg.max_char_order + 1):
        ref_grams = _char_ngrams(reference, order)
        ref_total = sum(ref_grams.values())
        if ref_total == 0:
            continue
        hyp_grams = _char_ngrams(hypothesis, order)
        hyp_total = sum(hyp_grams.values())
        matched = sum(min(count, ref_grams[gram]) for gram, count in hyp_grams.items())
        precisions.append(matched / hyp_total if hyp_total else 0.0)
        recalls.append(matched / ref_total)

    precision = sum(precisions) / len(precisions)
    recall = sum(recalls) / len(recalls)
    if precision == 0.0 and recall == 0.0:
        return 0.0
    beta2 = cfg.beta * cfg.beta
    return (1.0 + beta2) * precision * recall / (beta2 * precision + recall)


def mean_chrf(scores: Sequence[float]) -> float:
    """Arithmetic mean of instance-level chrF scores."""
    if len(scores) == 0:
        raise EmptyList("cannot average an empty score list")
    return float(sum(scores) / len(scores))


def _check_paired(pred: Sequence[float], gold: Sequence[float]) -> None:
    if len(pred) != len(gold):
        raise LengthMismatch(f"pred has {len(pred)} values, gold has {len(gold)}")
    if len(pred) == 0:
        raise EmptyList("cannot score empty lists")


def rmse(pred: Sequence[float], gold: Sequence[float]) -> float:
    """Root mean square error between paired prediction and gold lists."""
    _check_paired(pred, gold)
    return math.sqrt(sum((p - g) ** 2 for p, g in zip(pred, gold)) / len(pred))


def mae(pred: Sequence[float], gold: Sequence[float]) -> float:
    """Mean absolute error between paired prediction and gold lists."""
    _check_paired(pred, gold)
    return sum(abs(p - g) for p, g in zip(pred, gold)) / len(pred)
