"""Experimental protocol: leave-one-out evaluation, ablations, shift reports.

Also houses the synthetic-domain generator that makes desk-scale end-to-end
evaluation possible: domains with known ground-truth curves, decode traces
whose uncertainty features correlate with per-sentence difficulty by
construction, and encoder representations that carry a domain signature.

Seeds and held-out domains are independent jobs and may run concurrently;
each job is internally deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import wasserstein_distance

from . import gbt as gbt_mod
from . import net as net_mod
from .curvefit import AnchorObservation, exp3_curve, exp3_fit
from .dataset import (
    DecodeStep,
    DomainEntry,
    Manifest,
    SampleRef,
    SentenceRecord,
)
from .errors import InsufficientDomains, InvalidSpec, MissingSample, NoGoldLabels
from .features import CorpusFeatures, InstanceFeatures, corpus_features, extrapolate_corpus_features
from .gbt import GbtConfig, gbt_fit, gbt_predict_many
from .metrics import rmse
from .net import NetConfig, TrainingInstance

PREDICTOR_KINDS = ("dalc", "exp3", "gbt_corpus", "gbt_instance")
DEFAULT_SEEDS = (11, 12, 13, 14, 15)


# ---------------------------------------------------------------------------
# Protocol and report types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalProtocol:
    """One leave-one-out configuration.

    ``anchor_sizes`` are the training anchors (defaults to the anchors
    every training domain has gold values for); ``eval_sizes`` the anchors
    scored on the held-out domain (defaults to the training anchors; sizes
    without a source sample need ``extrapolate``). ``ablation`` names
    feature groups or single features zeroed at the predictor's fusion
    input. With ``with_zero_anchor`` the held-out domain's 0-anchor
    instances join the training set and anchor 0 leaves the eval set.
    """

    held_out_domain: str
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    anchor_sizes: tuple[int, ...] | None = None
    ablation: frozenset[str] = frozenset()
    with_zero_anchor: bool = False
    eval_sizes: tuple[int, ...] | None = None
    extrapolate: bool = False
    net_config: NetConfig | None = None
    gbt_config: GbtConfig | None = None

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ValueError("at least one seed is required")


@dataclass(frozen=True)
class ReportRow:
    domain: str
    size: int
    seed: int
    gold: float
    pred: float

    @property
    def abs_err(self) -> float:
        return abs(self.pred - self.gold)


@dataclass
class EvalReport:
    """Per-(domain, anchor, seed) predictions with RMSE roll-ups.

    Summaries are always recomputed from the stored rows, so the reported
    RMSE and the rows can never disagree.
    """

    predictor: str
    rows: list[ReportRow] = field(default_factory=list)

    @property
    def domains(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.rows:
            seen.setdefault(r.domain, None)
        return list(seen)

    def per_seed_rmse(self, domain: str) -> dict[int, float]:
        out: dict[int, float] = {}
        seeds = sorted({r.seed for r in self.rows if r.domain == domain})
        for seed in seeds:
            sel = [r for r in self.rows if r.domain == domain and r.seed == seed]
            out[seed] = rmse([r.pred for r in sel], [r.gold for r in sel])
        return out

    def domain_rmse(self) -> dict[str, float]:
        return {
            dom: float(np.mean(list(self.per_seed_rmse(dom).values())))
            for dom in self.domains
        }

    def average_rmse(self) -> float:
        per_domain = self.domain_rmse()
        if not per_domain:
            raise NoGoldLabels("report has no rows")
        return float(np.mean(list(per_domain.values())))

    def merged_with(self, other: "EvalReport") -> "EvalReport":
        if other.predictor != self.predictor:
            raise ValueError("cannot merge reports of different predictors")
        return EvalReport(predictor=self.predictor, rows=self.rows + other.rows)

    def to_json(self) -> str:
        return json.dumps(
            {
                "predictor": self.predictor,
                "rows": [
                    {
                        "domain": r.domain,
                        "size": r.size,
                        "seed": r.seed,
                        "gold": r.gold,
                        "pred": r.pred,
                        "abs_err": r.abs_err,
                    }
                    for r in self.rows
                ],
                "per_domain_rmse": self.domain_rmse(),
                "average_rmse": self.average_rmse(),
            },
            sort_keys=True,
        )

    def to_tsv(self) -> str:
        lines = ["domain\tanchor\tseed\tgold\tpred\tabs_err"]
        for r in self.rows:
            lines.append(
                f"{r.domain}\t{r.size}\t{r.seed}\t{r.gold:.6f}\t{r.pred:.6f}\t{r.abs_err:.6f}"
            )
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Feature resolution with per-manifest caching
# ---------------------------------------------------------------------------


class _FeatureCache:
    """Memoizes corpus features per (domain, size) and DF features per domain."""

    def __init__(self, manifest: Manifest):
        self.manifest = manifest
        self.vocab = manifest.general_vocab or frozenset()
        self._xi: dict[tuple[str, int, bool], CorpusFeatures] = {}
        self._df: dict[str, list[InstanceFeatures]] = {}

    def xi(self, domain: DomainEntry, size: int, extrapolate: bool = False) -> CorpusFeatures:
        key = (domain.name, size, bool(extrapolate and size != 0 and size not in domain.samples))
        if key not in self._xi:
            self._xi[key] = net_mod.corpus_features_for_size(
                size, domain.samples, self.vocab, extrapolate=extrapolate
            )
        return self._xi[key]

    def df(self, domain: DomainEntry) -> list[InstanceFeatures]:
        if domain.name not in self._df:
            self._df[domain.name] = [InstanceFeatures.from_record(s) for s in domain.sentences]
        return self._df[domain.name]


def _cache_for(manifest: Manifest) -> _FeatureCache:
    # corpus features over 100k-sentence samples are worth computing once
    # per manifest; the cache rides on the manifest object itself
    cache = getattr(manifest, "_feature_cache", None)
    if cache is None:
        cache = _FeatureCache(manifest)
        manifest._feature_cache = cache  # type: ignore[attr-defined]
    return cache


# ---------------------------------------------------------------------------
# Leave-one-out evaluation
# ---------------------------------------------------------------------------


def _common_anchors(domains: Sequence[DomainEntry]) -> tuple[int, ...]:
    anchors: set[int] | None = None
    for d in domains:
        cur = set(d.gold_curve or {})
        anchors = cur if anchors is None else anchors & cur
    return tuple(sorted(anchors or ()))


def _resolve_protocol(
    manifest: Manifest, protocol: EvalProtocol
) -> tuple[DomainEntry, list[DomainEntry], tuple[int, ...], tuple[int, ...]]:
    gold_domains = [d for d in manifest.domains if d.gold_curve]
    if len(gold_domains) < 2:
        raise InsufficientDomains(
            f"leave-one-out needs >= 2 domains with gold curves, found {len(gold_domains)}"
        )
    held = manifest.domain(protocol.held_out_domain)
    if held.gold_curve is None:
        raise NoGoldLabels(f"held-out domain {held.name!r} has no gold curve")
    train_domains = [d for d in gold_domains if d.name != held.name]

    anchors = protocol.anchor_sizes or _common_anchors(train_domains)
    if not anchors:
        raise NoGoldLabels("training domains share no gold anchors")
    eval_sizes = protocol.eval_sizes or anchors
    if protocol.with_zero_anchor:
        eval_sizes = tuple(s for s in eval_sizes if s != 0)
        if not eval_sizes:
            raise NoGoldLabels("no eval sizes remain after excluding the 0 anchor")
    for size in eval_sizes:
        if size not in held.gold_curve:
            raise NoGoldLabels(f"held-out domain has no gold value at anchor {size}")
    return held, train_domains, tuple(anchors), tuple(eval_sizes)


def _dalc_training_set(
    cache: _FeatureCache,
    train_domains: Sequence[DomainEntry],
    held: DomainEntry,
    anchors: Sequence[int],
    with_zero_anchor: bool,
) -> tuple[list[TrainingInstance], set[tuple[str, int]]]:
    instances: list[TrainingInstance] = []
    keys: set[tuple[str, int]] = set()
    for dom in train_domains:
        dfs = cache.df(dom)
        for anchor in anchors:
            xi = cache.xi(dom, anchor)
            for sent, df in zip(dom.sentences, dfs):
                if anchor not in sent.gold_chrf:
                    raise NoGoldLabels(f"sentence {sent.id} lacks a label at anchor {anchor}")
                instances.append(
                    TrainingInstance(
                        encoder_rep=sent.encoder_rep,
                        df=df,
                        corpus=xi,
                        target=sent.gold_chrf[anchor],
                    )
                )
                keys.add((sent.id, anchor))
    if with_zero_anchor:
        xi0 = CorpusFeatures.zero()
        for sent, df in zip(held.sentences, cache.df(held)):
            if 0 not in sent.gold_chrf:
                raise NoGoldLabels(f"sentence {sent.id} lacks a 0-anchor label")
            instances.append(
                TrainingInstance(
                    encoder_rep=sent.encoder_rep, df=df, corpus=xi0, target=sent.gold_chrf[0]
                )
            )
            keys.add((sent.id, 0))
    return instances, keys


def _assert_isolation(
    train_keys: set[tuple[str, int]],
    held: DomainEntry,
    eval_sizes: Sequence[int],
    with_zero_anchor: bool,
) -> None:
    eval_keys = {(s.id, size) for s in held.sentences for size in eval_sizes}
    overlap = train_keys & eval_keys
    assert not overlap, f"evaluation instances leaked into training: {sorted(overlap)[:3]}"
    if not with_zero_anchor:
        held_ids = {s.id for s in held.sentences}
        train_ids = {sid for sid, _ in train_keys}
        assert not (held_ids & train_ids), "held-out sentence ids appear in training"


def dalc_training_instances(
    manifest: Manifest,
    held_out: str,
    anchor_sizes: Sequence[int] | None = None,
    with_zero_anchor: bool = False,
) -> list[TrainingInstance]:
    """Training set for a predictor that must generalize to ``held_out``.

    One instance per (sentence, anchor) over every other gold-labeled
    domain, plus the held-out domain's 0-anchor instances when requested.
    """
    held = manifest.domain(held_out)
    train_domains = [d for d in manifest.domains if d.gold_curve and d.name != held_out]
    if not train_domains:
        raise InsufficientDomains("no gold-labeled domains besides the held-out one")
    anchors = tuple(anchor_sizes) if anchor_sizes else _common_anchors(train_domains)
    if not anchors:
        raise NoGoldLabels("training domains share no gold anchors")
    instances, _keys = _dalc_training_set(
        _cache_for(manifest), train_domains, held, anchors, with_zero_anchor
    )
    return instances


def leave_one_out(
    manifest: Manifest, protocol: EvalProtocol, predictor_kind: str = "dalc"
) -> EvalReport:
    """Train on every domain but the held-out one; score its curve per seed.

    Predictor kinds: ``dalc`` (the network), ``gbt_corpus`` /
    ``gbt_instance`` (boosted-tree baselines) and ``exp3``. Following the
    published protocol, exp3 is one global curve fit to all domains' gold
    observations, so it predicts the same curve whichever domain is held
    out; the feature-based predictors only ever see the training domains
    (plus the held-out 0-anchor instances when ``with_zero_anchor``).
    """
    kind = predictor_kind.replace("-", "_")
    if kind not in PREDICTOR_KINDS:
        raise ValueError(f"unknown predictor kind {predictor_kind!r}")
    held, train_domains, anchors, eval_sizes = _resolve_protocol(manifest, protocol)
    cache = _cache_for(manifest)

    rows: list[ReportRow] = []
    for seed in protocol.seeds:
        if kind == "dalc":
            preds = _run_dalc(manifest, cache, protocol, held, train_domains, anchors, eval_sizes, seed)
        elif kind == "exp3":
            preds = _run_exp3(cache, protocol, held, anchors, eval_sizes)
        elif kind == "gbt_corpus":
            preds = _run_gbt_corpus(cache, protocol, held, train_domains, anchors, eval_sizes, seed)
        else:
            preds = _run_gbt_instance(cache, protocol, held, train_domains, anchors, eval_sizes, seed)
        for size in eval_sizes:
            rows.append(
                ReportRow(
                    domain=held.name,
                    size=size,
                    seed=seed,
                    gold=held.gold_curve[size],  # type: ignore[index]
                    pred=preds[size],
                )
            )
    return EvalReport(predictor=kind, rows=rows)


def _run_dalc(
    manifest: Manifest,
    cache: _FeatureCache,
    protocol: EvalProtocol,
    held: DomainEntry,
    train_domains: Sequence[DomainEntry],
    anchors: Sequence[int],
    eval_sizes: Sequence[int],
    seed: int,
) -> dict[int, float]:
    instances, train_keys = _dalc_training_set(
        cache, train_domains, held, anchors, protocol.with_zero_anchor
    )
    _assert_isolation(train_keys, held, eval_sizes, protocol.with_zero_anchor)

    base_cfg = protocol.net_config or NetConfig(encoder_dim=manifest.tensor_dim)
    dropped = tuple(sorted(net_mod.normalize_drop_token(t) for t in protocol.ablation))
    cfg = replace(base_cfg, seed=seed, dropped_features=dropped)
    model, _log = net_mod.train(instances, cfg)

    dt = cfg.np_dtype
    packed = net_mod._PackedSentences(
        [np.asarray(s.encoder_rep, dtype=dt) for s in held.sentences], cfg
    )
    pooled, _ = net_mod._pool_forward(model, packed, np.arange(len(held.sentences)))
    df_norm = model.normalize_df(np.stack([f.as_vector() for f in cache.df(held)]))
    mask = net_mod._input_mask(cfg)

    preds: dict[int, float] = {}
    for size in eval_sizes:
        xi = cache.xi(held, size, extrapolate=protocol.extrapolate)
        cf_rows = np.broadcast_to(xi.as_vector().astype(dt), (len(held.sentences), 7))
        z = np.concatenate([pooled, df_norm, cf_rows], axis=1) * mask
        out, _ = net_mod._fusion_forward(model, z)
        preds[size] = float(out.mean())
    return preds


def _run_exp3(
    cache: _FeatureCache,
    protocol: EvalProtocol,
    held: DomainEntry,
    anchors: Sequence[int],
    eval_sizes: Sequence[int],
) -> dict[int, float]:
    obs = [
        AnchorObservation(size=a, score=dom.gold_curve[a])
        for dom in cache.manifest.domains
        if dom.gold_curve
        for a in anchors
        if a in dom.gold_curve
    ]
    params = exp3_fit(obs)
    return exp3_curve(params, list(eval_sizes))


def _run_gbt_corpus(
    cache: _FeatureCache,
    protocol: EvalProtocol,
    held: DomainEntry,
    train_domains: Sequence[DomainEntry],
    anchors: Sequence[int],
    eval_sizes: Sequence[int],
    seed: int,
) -> dict[int, float]:
    rows = []
    targets = []
    for dom in train_domains:
        for anchor in anchors:
            rows.append(cache.xi(dom, anchor).as_vector())
            targets.append(dom.gold_curve[anchor])  # type: ignore[index]
    if protocol.with_zero_anchor:
        rows.append(CorpusFeatures.zero().as_vector())
        targets.append(held.gold_curve[0])  # type: ignore[index]
    model = gbt_fit(np.stack(rows), targets, protocol.gbt_config or GbtConfig(), seed)
    query = np.stack(
        [
            cache.xi(held, size, extrapolate=protocol.extrapolate).as_vector()
            for size in eval_sizes
        ]
    )
    preds = gbt_predict_many(model, query)
    return {size: float(p) for size, p in zip(eval_sizes, preds)}


def _run_gbt_instance(
    cache: _FeatureCache,
    protocol: EvalProtocol,
    held: DomainEntry,
    train_domains: Sequence[DomainEntry],
    anchors: Sequence[int],
    eval_sizes: Sequence[int],
    seed: int,
) -> dict[int, float]:
    def pooled_df(dom: DomainEntry) -> np.ndarray:
        from .features import minmax_pool

        return np.stack(
            [
                np.concatenate([minmax_pool(s.encoder_rep), f.as_vector()])
                for s, f in zip(dom.sentences, cache.df(dom))
            ]
        )

    blocks = []
    targets: list[float] = []
    train_keys: set[tuple[str, int]] = set()
    for dom in train_domains:
        base = pooled_df(dom)
        for anchor in anchors:
            xi = np.tile(cache.xi(dom, anchor).as_vector(), (len(dom.sentences), 1))
            blocks.append(np.hstack([base, xi]))
            for sent in dom.sentences:
                if anchor not in sent.gold_chrf:
                    raise NoGoldLabels(f"sentence {sent.id} lacks a label at anchor {anchor}")
                targets.append(sent.gold_chrf[anchor])
                train_keys.add((sent.id, anchor))
    held_base = pooled_df(held)
    if protocol.with_zero_anchor:
        xi0 = np.tile(CorpusFeatures.zero().as_vector(), (len(held.sentences), 1))
        blocks.append(np.hstack([held_base, xi0]))
        for sent in held.sentences:
            targets.append(sent.gold_chrf[0])
            train_keys.add((sent.id, 0))
    _assert_isolation(train_keys, held, eval_sizes, protocol.with_zero_anchor)

    model = gbt_fit(np.vstack(blocks), targets, protocol.gbt_config or GbtConfig(), seed)
    preds: dict[int, float] = {}
    for size in eval_sizes:
        xi = np.tile(
            cache.xi(held, size, extrapolate=protocol.extrapolate).as_vector(),
            (len(held.sentences), 1),
        )
        preds[size] = float(gbt_predict_many(model, np.hstack([held_base, xi])).mean())
    return preds


# ---------------------------------------------------------------------------
# Ablation suite
# ---------------------------------------------------------------------------


def ablation_suite(manifest: Manifest, protocol: EvalProtocol) -> dict[str, EvalReport]:
    """Run the full model plus one run per ablation token in the protocol.

    Each token ("df", "corpus", "encoder", or a single feature name) gets
    its own leave-one-out report with that group zeroed at the fusion
    input; the "full" entry drops nothing.
    """
    suite = {"full": leave_one_out(manifest, replace(protocol, ablation=frozenset()), "dalc")}
    for token in sorted(protocol.ablation):
        norm = net_mod.normalize_drop_token(token)
        suite[f"drop_{norm}"] = leave_one_out(
            manifest, replace(protocol, ablation=frozenset({norm})), "dalc"
        )
    return suite


# ---------------------------------------------------------------------------
# Distribution shift report
# ---------------------------------------------------------------------------

N_HIST_BINS = 20


@dataclass
class DistributionReport:
    held_out: str
    bin_edges: np.ndarray
    train_counts: np.ndarray
    test_counts: np.ndarray
    wasserstein: float

    def to_tsv(self) -> str:
        lines = ["bin_left\ttrain_count\ttest_count"]
        for left, tr, te in zip(self.bin_edges[:-1], self.train_counts, self.test_counts):
            lines.append(f"{left:.3f}\t{int(tr)}\t{int(te)}")
        return "\n".join(lines) + "\n"


def distribution_report(manifest: Manifest, held_out: str) -> DistributionReport:
    """Histogram train-pool vs held-out chrF labels plus their 1-Wasserstein distance."""
    held = manifest.domain(held_out)
    train_vals = [
        v
        for dom in manifest.domains
        if dom.name != held_out
        for s in dom.sentences
        for v in s.gold_chrf.values()
    ]
    test_vals = [v for s in held.sentences for v in s.gold_chrf.values()]
    if not train_vals or not test_vals:
        raise NoGoldLabels("both training pool and held-out domain need gold labels")

    edges = np.linspace(0.0, 1.0, N_HIST_BINS + 1)
    train_counts, _ = np.histogram(train_vals, bins=edges)
    test_counts, _ = np.histogram(test_vals, bins=edges)
    return DistributionReport(
        held_out=held_out,
        bin_edges=edges,
        train_counts=train_counts,
        test_counts=test_counts,
        wasserstein=float(wasserstein_distance(train_vals, test_vals)),
    )


# ---------------------------------------------------------------------------
# Synthetic data generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a fully synthetic multi-domain dataset.

    Each domain d has a Zipf token distribution over its own vocabulary
    window and a ground-truth curve c - exp(b - a*ln(1+n)). Per-sentence
    difficulty offsets are a fixed linear function of the decode-trace
    features (zero-mean by construction), so instance features are
    informative; encoder rows are hashed token embeddings plus a domain
    signature that linearly encodes the curve parameters.

    ``interpolation_sizes`` get gold labels and a source sample;
    ``extrapolation_sizes`` get gold labels only (no sample), for
    subsample-free extrapolation queries.
    """

    n_domains: int
    vocab_sizes: tuple[int, ...]
    zipf_exponents: tuple[float, ...]
    curve_params: tuple[tuple[float, float, float], ...]  # (a, b, c) per domain
    noise_std: float = 0.0
    sentences_per_domain: int = 200
    encoder_dim: int = 8
    seed: int = 0
    anchor_sizes: tuple[int, ...] = (0, 1000, 10000, 20000, 100000)
    interpolation_sizes: tuple[int, ...] = ()
    extrapolation_sizes: tuple[int, ...] = ()
    min_tokens: int = 4
    max_tokens: int = 8
    difficulty_scale: float = 0.1
    labse_dim: int = 16

    def validate(self) -> None:
        if self.n_domains < 1:
            raise InvalidSpec("n_domains must be >= 1")
        for name in ("vocab_sizes", "zipf_exponents", "curve_params"):
            if len(getattr(self, name)) != self.n_domains:
                raise InvalidSpec(f"{name} must have one entry per domain")
        if any(v < 2 for v in self.vocab_sizes):
            raise InvalidSpec("vocab sizes must be >= 2")
        if any(z <= 0 for z in self.zipf_exponents):
            raise InvalidSpec("Zipf exponents must be positive")
        for a, b, c in self.curve_params:
            if not (0.0 <= c <= 1.0):
                raise InvalidSpec(f"curve asymptote c must be in [0, 1], got {c}")
            if not (math.isfinite(a) and math.isfinite(b)):
                raise InvalidSpec("curve parameters must be finite")
        if self.noise_std < 0:
            raise InvalidSpec("noise_std must be >= 0")
        if self.sentences_per_domain < 1:
            raise InvalidSpec("sentences_per_domain must be >= 1")
        if self.encoder_dim < 1:
            raise InvalidSpec("encoder_dim must be >= 1")
        if any(s < 0 for s in self.anchor_sizes) or not self.anchor_sizes:
            raise InvalidSpec("anchor sizes must be non-negative and non-empty")
        if any(s <= 0 for s in self.interpolation_sizes + self.extrapolation_sizes):
            raise InvalidSpec("extra query sizes must be positive")
        if not (1 <= self.min_tokens <= self.max_tokens):
            raise InvalidSpec("need 1 <= min_tokens <= max_tokens")
        if self.difficulty_scale < 0:
            raise InvalidSpec("difficulty_scale must be >= 0")
        if self.labse_dim < 2:
            raise InvalidSpec("labse_dim must be >= 2")


# decode-trace construction constants; difficulty u in [0,1] maps to the
# per-step greedy probability 0.9 - 0.55*u with zero-log-sum jitter, so
# least_confidence is exactly 0.1 + 0.55*u and delta is linear in it
_P1_EASY = 0.9
_P1_SPAN = 0.55
_P2_FACTOR = 0.7
_JITTER = 0.05
_TAIL_SLOTS = 14
_EMB_SCALE = 0.35
_SIG_NOISE = 0.15


def synthetic_curve_value(spec: SyntheticSpec, domain_index: int, size: int) -> float:
    """Ground-truth curve of a synthetic domain before per-sentence offsets."""
    a, b, c = spec.curve_params[domain_index]
    return c - math.exp(b - a * math.log1p(size))


def synthetic_delta(spec: SyntheticSpec, u: float) -> float:
    """Per-sentence difficulty offset for latent difficulty u (zero-mean on U(0,1))."""
    return 2.0 * spec.difficulty_scale * (0.5 - u)


def _token_embedding(token_id: int, dim: int, cache: dict[int, np.ndarray]) -> np.ndarray:
    emb = cache.get(token_id)
    if emb is None:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([217041, token_id])))
        emb = (rng.normal(size=dim) * _EMB_SCALE).astype(np.float32)
        cache[token_id] = emb
    return emb


def _domain_signature(spec: SyntheticSpec, domain_index: int) -> np.ndarray:
    """Linear encoding of the domain's curve parameters into rep space.

    Dims 0..2 carry (a, b, c) directly; the remaining dims carry redundant
    copies of the level c on a fixed +-1 basis, scaled well above the
    token-embedding noise so pooling can recover the level. A small
    domain-specific perturbation keeps signatures from being perfectly
    clean.
    """
    sig = np.zeros(spec.encoder_dim, dtype=np.float32)
    a, b, c = spec.curve_params[domain_index]
    for i, value in enumerate((a, b, c)):
        if i < spec.encoder_dim:
            sig[i] = value
    if spec.encoder_dim > 3:
        idx = np.arange(3, spec.encoder_dim)
        basis = np.where(idx % 2 == 0, 1.0, -1.0)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([9211, domain_index])))
        noise = rng.normal(size=spec.encoder_dim - 3) * _SIG_NOISE
        sig[3:] = (1.2 * (c - 0.5) * basis + noise).astype(np.float32)
    return sig


def _zipf_probs(vocab_size: int, exponent: float) -> np.ndarray:
    weights = 1.0 / np.arange(1, vocab_size + 1, dtype=np.float64) ** exponent
    return weights / weights.sum()


def _sample_factory(
    flat_ids: np.ndarray, boundaries: np.ndarray, vocab: list[str]
):
    def factory():
        start = 0
        for end in boundaries:
            yield [vocab[i] for i in flat_ids[start:end]]
            start = end

    return factory


def generate_synthetic(spec: SyntheticSpec) -> Manifest:
    """Build a fully valid in-memory Manifest from the spec, bit-deterministic."""
    spec.validate()
    d = spec.encoder_dim
    emb_cache: dict[int, np.ndarray] = {}

    # half-overlapping vocabulary windows over a global token universe;
    # the general vocabulary covers the early part, so overlap declines
    # across domains
    offsets = [0]
    for v in spec.vocab_sizes[:-1]:
        offsets.append(offsets[-1] + v // 2)
    universe_size = offsets[-1] + spec.vocab_sizes[-1]
    universe = [f"w{i:05d}" for i in range(universe_size)]
    g_end = offsets[-1] + spec.vocab_sizes[-1] // 2
    general_vocab = frozenset(universe[:g_end])

    seed_seqs = np.random.SeedSequence(spec.seed).spawn(spec.n_domains)
    sample_sizes = sorted(
        {s for s in spec.anchor_sizes if s > 0} | set(spec.interpolation_sizes)
    )
    labeled_sizes = sorted(
        set(spec.anchor_sizes) | set(spec.interpolation_sizes) | set(spec.extrapolation_sizes)
    )

    domains: list[DomainEntry] = []
    for di in range(spec.n_domains):
        rng = np.random.Generator(np.random.PCG64(seed_seqs[di]))
        name = f"dom{di}"
        v_size = spec.vocab_sizes[di]
        offset = offsets[di]
        vocab = universe[offset : offset + v_size]
        probs = _zipf_probs(v_size, spec.zipf_exponents[di])
        sig = _domain_signature(spec, di)

        # labeled sentences
        n_sent = spec.sentences_per_domain
        lengths = rng.integers(spec.min_tokens, spec.max_tokens + 1, size=n_sent)
        u = rng.uniform(0.0, 1.0, size=n_sent)
        noise = (
            rng.normal(0.0, spec.noise_std, size=(n_sent, len(labeled_sizes)))
            if spec.noise_std > 0
            else np.zeros((n_sent, len(labeled_sizes)))
        )

        sentences: list[SentenceRecord] = []
        for i in range(n_sent):
            m = int(lengths[i])
            tok_ids = offset + rng.choice(v_size, size=m, p=probs)
            tokens = [universe[t] for t in tok_ids]

            p1_base = _P1_EASY - _P1_SPAN * u[i]
            eta = rng.uniform(-_JITTER, _JITTER, size=m)
            eta -= eta.mean()
            p1 = p1_base * np.exp(eta)
            p2 = _P2_FACTOR * np.minimum(p1, 1.0 - p1)
            q = 1.0 - p1 - p2
            entropy = -p1 * np.log(p1) - p2 * np.log(p2) - q * np.log(q / _TAIL_SLOTS)
            trace = [
                DecodeStep(p1=float(a), p2=float(b), entropy=float(c))
                for a, b, c in zip(p1, p2, entropy)
            ]

            rep = np.empty((m, d), dtype=np.float32)
            for j, t in enumerate(tok_ids):
                rep[j] = _token_embedding(int(t), d, emb_cache) + sig

            src = rng.normal(size=spec.labse_dim)
            src /= np.linalg.norm(src)
            w = rng.normal(size=spec.labse_dim)
            orth = w - np.dot(w, src) * src
            orth /= np.linalg.norm(orth)
            cos_t = float(np.clip(0.95 - 0.5 * u[i], -1.0, 1.0))
            hyp = cos_t * src + math.sqrt(max(0.0, 1.0 - cos_t * cos_t)) * orth

            delta = synthetic_delta(spec, float(u[i]))
            gold = {}
            for k, size in enumerate(labeled_sizes):
                value = synthetic_curve_value(spec, di, size) + delta + float(noise[i, k])
                gold[size] = float(min(max(value, 0.0), 1.0))

            sentences.append(
                SentenceRecord(
                    id=f"{name}-{i:05d}",
                    tokens=tokens,
                    encoder_rep=rep,
                    decode_trace=trace,
                    gold_chrf=gold,
                    labse_src=src.astype(np.float32),
                    labse_hyp=hyp.astype(np.float32),
                )
            )

        gold_curve = {
            size: float(np.mean([s.gold_chrf[size] for s in sentences]))
            for size in labeled_sizes
        }

        samples: dict[int, SampleRef] = {}
        for size in sample_sizes:
            s_lengths = rng.integers(spec.min_tokens, spec.max_tokens + 1, size=size)
            total = int(s_lengths.sum())
            flat = (offset + rng.choice(v_size, size=total, p=probs)).astype(np.int32)
            boundaries = np.cumsum(s_lengths)
            samples[size] = SampleRef(
                size=size, factory=_sample_factory(flat, boundaries, universe)
            )

        domains.append(
            DomainEntry(name=name, sentences=sentences, samples=samples, gold_curve=gold_curve)
        )

    return Manifest(domains=domains, tensor_dim=d, general_vocab=general_vocab)


# ---------------------------------------------------------------------------
# Canonical synthetic benchmarks
# ---------------------------------------------------------------------------


def benchmark_spec(
    sentences_per_domain: int = 2000,
    noise_std: float = 0.02,
    seed: int = 7,
) -> SyntheticSpec:
    """The 5-domain benchmark: similar growth shapes, spread curve levels.

    The level spread (c from 0.42 to 0.80) mirrors wide real-world chrF
    ranges: any single global curve is off by ~0.1-0.2 on the extreme
    domains, while the level stays recoverable from the domain signature.
    """
    return SyntheticSpec(
        n_domains=5,
        vocab_sizes=(160, 200, 240, 280, 320),
        zipf_exponents=(1.05, 1.15, 1.25, 1.35, 1.45),
        curve_params=(
            # low-level domains saturate early (tiny remaining gap at 100k),
            # high-level domains keep growing, so the unbracketed region
            # beyond the last trained anchor carries real uncertainty
            (0.20, -1.661, 0.42),
            (0.18, -1.514, 0.55),
            (0.15, -1.273, 0.66),
            (0.11, -1.139, 0.76),
            (0.09, -0.968, 0.84),
        ),
        noise_std=noise_std,
        sentences_per_domain=sentences_per_domain,
        encoder_dim=8,
        seed=seed,
        anchor_sizes=(0, 1000, 10000, 20000, 100000),
        interpolation_sizes=(3000,),
        extrapolation_sizes=(160000,),
    )


def shifted_benchmark_spec(
    sentences_per_domain: int = 600,
    seed: int = 21,
) -> SyntheticSpec:
    """Benchmark variant whose last domain sits far below the others' level."""
    return SyntheticSpec(
        n_domains=4,
        vocab_sizes=(160, 200, 240, 280),
        zipf_exponents=(1.1, 1.2, 1.3, 1.4),
        curve_params=(
            (0.15, -1.386, 0.66),
            (0.18, -1.427, 0.72),
            (0.13, -1.273, 0.70),
            (0.16, -2.200, 0.30),  # shifted: far below the training pool
        ),
        noise_std=0.02,
        sentences_per_domain=sentences_per_domain,
        encoder_dim=8,
        seed=seed,
    )


def benchmark_net_config(encoder_dim: int, seed: int = 0) -> NetConfig:
    """Compact trainer configuration sized for the desk-scale benchmark."""
    return NetConfig(
        encoder_dim=encoder_dim,
        window_sizes=(2, 3, 4),
        channels_per_window=8,
        fusion_hidden=64,
        fusion_layers=4,
        lr=4e-3,
        lr_decay_per_epoch=0.92,
        batch_size=512,
        patience=6,
        max_epochs=16,
        seed=seed,
        val_fraction=0.1,
        dtype="float32",
    )
