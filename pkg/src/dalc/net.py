"""The learning-curve predictor network: CNN pooling + fusion MLP.

Encoder representations are pooled by a single-layer multi-filter CNN
(1-D convolutions of window sizes 2/3/4 with max-over-time), concatenated
with the z-normalized difficulty features and the corpus features, and
pushed through a stack of ReLU feed-forward layers ending in a sigmoid.
Training is plain minibatch Adam on MSE with manual backprop, bit
deterministic for a given seed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .dataset import LearningCurve, SampleRef, SentenceRecord, _read_record_at, write_tensor_record
from .errors import (
    DimensionMismatch,
    EmptyList,
    MalformedHeader,
    MissingSample,
    TooFewInstances,
)
from .features import (
    CORPUS_FEATURE_NAMES,
    DF_FEATURE_NAMES,
    CorpusFeatures,
    InstanceFeatures,
    corpus_features,
    extrapolate_corpus_features,
)

MODEL_MAGIC = b"DLCM"

_GROUP_TOKENS = ("encoder", "df", "corpus")
_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


@dataclass(frozen=True)
class NetConfig:
    """Architecture and training hyperparameters.

    Defaults follow the published recipe (filters 2/3/4, four hidden
    layers of 512, Adam at 1e-3 with exponential decay, patience 10);
    ``channels_per_window`` defaults to the encoder dimension.
    ``dropped_features`` zeroes feature groups or single features at the
    fusion input (dimension preserved) for ablation runs.
    """

    encoder_dim: int
    window_sizes: tuple[int, ...] = (2, 3, 4)
    channels_per_window: int | None = None
    fusion_hidden: int = 512
    fusion_layers: int = 4
    lr: float = 1e-3
    lr_decay_per_epoch: float = 0.97
    batch_size: int = 256
    patience: int = 10
    max_epochs: int = 500
    seed: int = 0
    val_fraction: float = 0.2
    dtype: str = "float64"
    dropped_features: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.encoder_dim < 1:
            raise ValueError("encoder_dim must be positive")
        if not self.window_sizes or any(w < 1 for w in self.window_sizes):
            raise ValueError("window sizes must be >= 1")
        if self.channels_per_window is not None and self.channels_per_window < 1:
            raise ValueError("channels_per_window must be positive")
        for name in ("fusion_hidden", "fusion_layers", "batch_size", "patience", "max_epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0 or self.lr_decay_per_epoch <= 0:
            raise ValueError("lr and lr_decay_per_epoch must be positive")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ValueError("val_fraction must be in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        known = set(_GROUP_TOKENS) | set(DF_FEATURE_NAMES) | set(CORPUS_FEATURE_NAMES)
        for token in self.dropped_features:
            if token not in known:
                raise ValueError(f"unknown dropped feature {token!r}; known: {sorted(known)}")

    @property
    def channels(self) -> int:
        return self.channels_per_window or self.encoder_dim

    @property
    def pooled_dim(self) -> int:
        return len(self.window_sizes) * self.channels

    @property
    def input_dim(self) -> int:
        return self.pooled_dim + len(DF_FEATURE_NAMES) + len(CORPUS_FEATURE_NAMES)

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


def normalize_drop_token(token: str) -> str:
    aliases = {"enc": "encoder", "nmtenc": "encoder", "margin_score": "margin"}
    return aliases.get(token.lower(), token.lower())


def _input_mask(cfg: NetConfig) -> np.ndarray:
    """1/0 column mask over the fusion input for dropped feature groups."""
    mask = np.ones(cfg.input_dim, dtype=cfg.np_dtype)
    p = cfg.pooled_dim
    spans = {"encoder": range(0, p), "df": range(p, p + 4), "corpus": range(p + 4, p + 11)}
    for i, name in enumerate(DF_FEATURE_NAMES):
        spans[name] = range(p + i, p + i + 1)
    for i, name in enumerate(CORPUS_FEATURE_NAMES):
        spans[name] = range(p + 4 + i, p + 4 + i + 1)
    for token in cfg.dropped_features:
        for col in spans[normalize_drop_token(token)]:
            mask[col] = 0.0
    return mask


@dataclass
class PredictorModel:
    """Trained weights plus the difficulty-feature normalization statistics."""

    config: NetConfig
    conv_kernels: dict[int, np.ndarray]  # window -> (window * d, channels)
    conv_bias: dict[int, np.ndarray]  # window -> (channels,)
    fusion_weights: list[np.ndarray]  # (fan_in, fan_out) per layer
    fusion_bias: list[np.ndarray]
    df_mean: np.ndarray
    df_std: np.ndarray

    def normalize_df(self, df: np.ndarray) -> np.ndarray:
        return (np.asarray(df, dtype=self.config.np_dtype) - self.df_mean) / self.df_std

    def params(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for w in self.config.window_sizes:
            out[f"conv_w{w}"] = self.conv_kernels[w]
            out[f"conv_b{w}"] = self.conv_bias[w]
        for i, (wgt, b) in enumerate(zip(self.fusion_weights, self.fusion_bias)):
            out[f"fusion_W{i}"] = wgt
            out[f"fusion_b{i}"] = b
        return out


@dataclass(frozen=True)
class TrainingInstance:
    """One (sentence, anchor) training point with its gold instance chrF."""

    encoder_rep: np.ndarray
    df: InstanceFeatures
    corpus: CorpusFeatures
    target: float


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_mse: float
    val_mse: float


@dataclass
class TrainingLog:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False


def init_model(cfg: NetConfig, rng: np.random.Generator) -> PredictorModel:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization."""
    dt = cfg.np_dtype

    def uniform(fan_in: int, shape) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dt)

    conv_kernels = {}
    conv_bias = {}
    for w in cfg.window_sizes:
        fan = w * cfg.encoder_dim
        conv_kernels[w] = uniform(fan, (fan, cfg.channels))
        conv_bias[w] = uniform(fan, (cfg.channels,))

    dims = [cfg.input_dim] + [cfg.fusion_hidden] * cfg.fusion_layers + [1]
    fusion_weights = []
    fusion_bias = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        fusion_weights.append(uniform(fan_in, (fan_in, fan_out)))
        fusion_bias.append(uniform(fan_in, (fan_out,)))

    return PredictorModel(
        config=cfg,
        conv_kernels=conv_kernels,
        conv_bias=conv_bias,
        fusion_weights=fusion_weights,
        fusion_bias=fusion_bias,
        df_mean=np.zeros(4, dtype=dt),
        df_std=np.ones(4, dtype=dt),
    )


# ---------------------------------------------------------------------------
# Packed sentence windows (shared by training and batched prediction)
# ---------------------------------------------------------------------------


class _PackedSentences:
    """Per-sentence convolution windows, padded and masked for batching.

    Sentences shorter than the largest window are right-padded with zero
    vectors to that window length; batching pads further to the longest
    sentence, with the surplus windows masked out of the max-pool.
    """

    def __init__(self, reps: Sequence[np.ndarray], cfg: NetConfig):
        dt = cfg.np_dtype
        w_max = max(cfg.window_sizes)
        lengths = np.array([max(r.shape[0], w_max) for r in reps], dtype=np.int64)
        t_max = int(lengths.max())
        d = cfg.encoder_dim
        stack = np.zeros((len(reps), t_max, d), dtype=dt)
        for i, r in enumerate(reps):
            if r.ndim != 2 or r.shape[1] != d:
                raise DimensionMismatch(
                    f"encoder matrix {i} has shape {r.shape}, expected (T, {d})"
                )
            stack[i, : r.shape[0]] = r
        self.windows: dict[int, np.ndarray] = {}
        self.valid: dict[int, np.ndarray] = {}
        for w in cfg.window_sizes:
            view = sliding_window_view(stack, w, axis=1)  # (S, NW, d, w)
            self.windows[w] = np.ascontiguousarray(view.transpose(0, 1, 3, 2)).reshape(
                len(reps), t_max - w + 1, w * d
            )
            self.valid[w] = (lengths - w + 1).astype(np.int64)


def _pool_forward(
    model: PredictorModel, packed: _PackedSentences, sidx: np.ndarray
) -> tuple[np.ndarray, dict]:
    """Conv + masked max-over-time for a batch of sentence indices."""
    cfg = model.config
    parts = []
    cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for w in cfg.window_sizes:
        xw = packed.windows[w][sidx]  # (B, NW, w*d)
        conv = xw @ model.conv_kernels[w] + model.conv_bias[w]
        nw = conv.shape[1]
        invalid = np.arange(nw)[None, :] >= packed.valid[w][sidx][:, None]
        conv[invalid] = -np.inf
        amax = conv.argmax(axis=1)  # (B, C)
        pooled = np.take_along_axis(conv, amax[:, None, :], axis=1)[:, 0, :]
        parts.append(pooled)
        cache[w] = (xw, amax)
    return np.concatenate(parts, axis=1), cache


def _pool_backward(
    model: PredictorModel,
    cache: Mapping[int, tuple[np.ndarray, np.ndarray]],
    dpooled: np.ndarray,
    grads: dict[str, np.ndarray],
) -> None:
    cfg = model.config
    c = cfg.channels
    offset = 0
    for w in cfg.window_sizes:
        xw, amax = cache[w]
        dpool = dpooled[:, offset : offset + c]  # (B, C)
        offset += c
        # gradient flows only through the argmax window of each channel
        rows = xw[np.arange(xw.shape[0])[:, None], amax]  # (B, C, w*d)
        grads[f"conv_w{w}"] = np.einsum("bcf,bc->fc", rows, dpool)
        grads[f"conv_b{w}"] = dpool.sum(axis=0)


def _fusion_forward(
    model: PredictorModel, z: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Returns sigmoid outputs (B,) and the post-activation stack for backprop."""
    h = z
    hiddens = [z]
    last = len(model.fusion_weights) - 1
    for i, (wgt, b) in enumerate(zip(model.fusion_weights, model.fusion_bias)):
        a = h @ wgt + b
        if i < last:
            h = np.maximum(a, 0.0)
            hiddens.append(h)
        else:
            h = a
    return expit(h[:, 0]), hiddens


def _forward_backward(
    model: PredictorModel,
    packed: _PackedSentences,
    sidx: np.ndarray,
    df_norm: np.ndarray,
    corpus: np.ndarray,
    targets: np.ndarray,
    mask: np.ndarray,
) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    pooled, pool_cache = _pool_forward(model, packed, sidx)
    z = np.concatenate([pooled, df_norm, corpus], axis=1) * mask
    s, hiddens = _fusion_forward(model, z)
    diff = s - targets
    loss = float(np.mean(diff * diff))

    grads: dict[str, np.ndarray] = {}
    b = len(targets)
    dout = (2.0 / b) * diff * s * (1.0 - s)  # dL/d(pre-sigmoid)
    delta = dout[:, None]
    for i in range(len(model.fusion_weights) - 1, -1, -1):
        grads[f"fusion_W{i}"] = hiddens[i].T @ delta
        grads[f"fusion_b{i}"] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.fusion_weights[i].T) * (hiddens[i] > 0)
    dz = (delta @ model.fusion_weights[0].T) * mask
    _pool_backward(model, pool_cache, dz[:, : model.config.pooled_dim], grads)
    return loss, grads, s


class _Adam:
    def __init__(self, params: Mapping[str, np.ndarray]):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - _ADAM_BETA1**self.t
        bc2 = 1.0 - _ADAM_BETA2**self.t
        for key, p in params.items():
            g = grads[key]
            m = self.m[key]
            v = self.v[key]
            m += (1.0 - _ADAM_BETA1) * (g - m)
            v += (1.0 - _ADAM_BETA2) * (g * g - v)
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + _ADAM_EPS)


# ---------------------------------------------------------------------------
# Public forward ops
# ---------------------------------------------------------------------------


def encoder_pool(model: PredictorModel, encoder_rep: np.ndarray) -> np.ndarray:
    """Multi-filter convolution + max-over-time for one sentence (length 3d)."""
    rep = np.asarray(encoder_rep, dtype=model.config.np_dtype)
    packed = _PackedSentences([rep], model.config)
    pooled, _ = _pool_forward(model, packed, np.array([0]))
    return pooled[0]


def fusion_forward(
    model: PredictorModel,
    pooled: np.ndarray,
    df_normalized: np.ndarray,
    corpus: np.ndarray,
) -> float:
    """Fusion stack output in (0, 1) for pre-pooled, pre-normalized inputs."""
    z = np.concatenate(
        [np.asarray(pooled), np.asarray(df_normalized), np.asarray(corpus)]
    ).astype(model.config.np_dtype)
    if z.shape[0] != model.config.input_dim:
        raise DimensionMismatch(
            f"fusion input has {z.shape[0]} dims, model expects {model.config.input_dim}"
        )
    out, _ = _fusion_forward(model, z[None, :])
    return float(out[0])


def predict_instance(
    model: PredictorModel,
    encoder_rep: np.ndarray,
    df: InstanceFeatures,
    corpus: CorpusFeatures,
) -> float:
    """Instance-level chrF prediction in (0, 1)."""
    return float(
        predict_batch(model, [np.asarray(encoder_rep)], df.as_vector()[None, :], corpus.as_vector()[None, :])[0]
    )


def predict_batch(
    model: PredictorModel,
    reps: Sequence[np.ndarray],
    df_rows: np.ndarray,
    corpus_rows: np.ndarray,
) -> np.ndarray:
    """Vectorized predictions for aligned (rep, df, corpus) rows."""
    cfg = model.config
    packed = _PackedSentences([np.asarray(r, dtype=cfg.np_dtype) for r in reps], cfg)
    sidx = np.arange(len(reps))
    pooled, _ = _pool_forward(model, packed, sidx)
    df_norm = model.normalize_df(np.asarray(df_rows))
    z = np.concatenate([pooled, df_norm, np.asarray(corpus_rows, dtype=cfg.np_dtype)], axis=1)
    z = z * _input_mask(cfg)
    out, _ = _fusion_forward(model, z)
    return out


def loss_and_grads(
    model: PredictorModel, instances: Sequence[TrainingInstance]
) -> tuple[float, dict[str, np.ndarray]]:
    """MSE loss and analytic gradients over the instances as one batch.

    Exposed for gradient checking against finite differences.
    """
    cfg = model.config
    packed = _PackedSentences(
        [np.asarray(i.encoder_rep, dtype=cfg.np_dtype) for i in instances], cfg
    )
    df_norm = model.normalize_df(np.stack([i.df.as_vector() for i in instances]))
    corpus = np.stack([i.corpus.as_vector() for i in instances]).astype(cfg.np_dtype)
    targets = np.array([i.target for i in instances], dtype=cfg.np_dtype)
    loss, grads, _ = _forward_backward(
        model, packed, np.arange(len(instances)), df_norm, corpus, targets, _input_mask(cfg)
    )
    return loss, grads


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def train(
    instances: Sequence[TrainingInstance], cfg: NetConfig
) -> tuple[PredictorModel, TrainingLog]:
    """Adam-train on MSE with an 80/20 split and early stopping.

    Returns the weights of the best-validation epoch. With
    ``val_fraction=0`` the training set doubles as the validation set
    (pure capacity / overfitting runs). Bit-deterministic per seed.
    """
    n = len(instances)
    if n < 10:
        raise TooFewInstances(f"need >= 10 training instances, got {n}")
    dt = cfg.np_dtype
    targets = np.array([i.target for i in instances], dtype=dt)
    if not np.isfinite(targets).all() or targets.min() < 0.0 or targets.max() > 1.0:
        raise ValueError("targets must be finite and within [0, 1]")

    # feature matrices; identical encoder arrays share one packed slot
    df_raw = np.stack([i.df.as_vector() for i in instances]).astype(dt)
    corpus = np.stack([i.corpus.as_vector() for i in instances]).astype(dt)
    unique_reps: list[np.ndarray] = []
    rep_slot: dict[int, int] = {}
    sent_idx = np.empty(n, dtype=np.int64)
    for i, inst in enumerate(instances):
        key = id(inst.encoder_rep)
        if key not in rep_slot:
            rep_slot[key] = len(unique_reps)
            unique_reps.append(np.asarray(inst.encoder_rep, dtype=dt))
        sent_idx[i] = rep_slot[key]
    packed = _PackedSentences(unique_reps, cfg)

    df_mean = df_raw.mean(axis=0)
    df_std = df_raw.std(axis=0)
    df_std = np.where(df_std < 1e-12, 1.0, df_std).astype(dt)
    df_norm = (df_raw - df_mean) / df_std

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    perm = rng.permutation(n)
    n_val = int(round(cfg.val_fraction * n))
    val_idx = perm[:n_val] if n_val else perm
    train_idx = perm[n_val:]
    mask = _input_mask(cfg)

    model = init_model(cfg, rng)
    model.df_mean = df_mean.astype(dt)
    model.df_std = df_std
    params = model.params()
    adam = _Adam(params)

    def eval_mse(idx: np.ndarray) -> float:
        total = 0.0
        for start in range(0, len(idx), cfg.batch_size):
            sub = idx[start : start + cfg.batch_size]
            pooled, _ = _pool_forward(model, packed, sent_idx[sub])
            z = np.concatenate([pooled, df_norm[sub], corpus[sub]], axis=1) * mask
            s, _ = _fusion_forward(model, z)
            total += float(np.sum((s - targets[sub]) ** 2))
        return total / len(idx)

    log = TrainingLog()
    best_params: dict[str, np.ndarray] | None = None
    best_val = np.inf
    bad_epochs = 0
    for epoch in range(cfg.max_epochs):
        lr_t = cfg.lr * cfg.lr_decay_per_epoch**epoch
        order = rng.permutation(train_idx)
        loss_sum = 0.0
        for start in range(0, len(order), cfg.batch_size):
            sub = order[start : start + cfg.batch_size]
            loss, grads, _ = _forward_backward(
                model, packed, sent_idx[sub], df_norm[sub], corpus[sub], targets[sub], mask
            )
            adam.step(params, grads, lr_t)
            loss_sum += loss * len(sub)
        train_mse = loss_sum / len(order)
        val_mse = eval_mse(val_idx)
        log.epochs.append(EpochStats(epoch=epoch, lr=lr_t, train_mse=train_mse, val_mse=val_mse))

        if val_mse < best_val:
            best_val = val_mse
            best_params = {k: v.copy() for k, v in params.items()}
            log.best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                log.stopped_early = True
                break

    assert best_params is not None
    for key, value in best_params.items():
        params[key][...] = value
    return model, log


# ---------------------------------------------------------------------------
# Curve prediction
# ---------------------------------------------------------------------------


def corpus_features_for_size(
    size: int,
    samples: Mapping[int, SampleRef | Sequence],
    general_vocab: Iterable[str],
    extrapolate: bool = False,
) -> CorpusFeatures:
    """Resolve the corpus features to feed at a given anchor size.

    Size 0 is the unadapted baseline: the all-zero feature vector. A size
    with a sample is summarized directly. Other sizes require
    ``extrapolate``; statistics then scale from the largest available
    sample (counts by ratio, vocabulary by a Heaps-law fit, ratios held).
    """
    if size == 0:
        return CorpusFeatures.zero()
    if size in samples:
        sample = samples[size]
        sents = sample.iter_tokens() if isinstance(sample, SampleRef) else sample
        return corpus_features(sents, general_vocab)
    if not extrapolate:
        raise MissingSample(f"no source sample for size {size} and extrapolation is off")
    base_sizes = [s for s in samples if s > 0]
    if not base_sizes:
        raise MissingSample("extrapolation needs at least one positive-size sample")
    base = samples[max(base_sizes)]
    sents = base.tokens() if isinstance(base, SampleRef) else list(base)
    return extrapolate_corpus_features(sents, general_vocab, size)


def predict_curve(
    model: PredictorModel,
    eval_sentences: Sequence[SentenceRecord],
    samples: Mapping[int, SampleRef | Sequence],
    general_vocab: Iterable[str] = (),
    sizes: Sequence[int] | None = None,
    extrapolate: bool = False,
) -> LearningCurve:
    """Predicted mean chrF per anchor size over the evaluation sentences."""
    if not eval_sentences:
        raise EmptyList("predict_curve needs at least one evaluation sentence")
    if sizes is None:
        sizes = sorted(samples)
    if len(sizes) == 0:
        raise EmptyList("no sizes to predict at")

    cfg = model.config
    packed = _PackedSentences(
        [np.asarray(s.encoder_rep, dtype=cfg.np_dtype) for s in eval_sentences], cfg
    )
    pooled, _ = _pool_forward(model, packed, np.arange(len(eval_sentences)))
    df_norm = model.normalize_df(
        np.stack([InstanceFeatures.from_record(s).as_vector() for s in eval_sentences])
    )
    mask = _input_mask(cfg)

    curve: LearningCurve = {}
    general = general_vocab if isinstance(general_vocab, (set, frozenset)) else set(general_vocab)
    for size in sorted(int(s) for s in sizes):
        cf = corpus_features_for_size(size, samples, general, extrapolate=extrapolate)
        cf_rows = np.broadcast_to(
            cf.as_vector().astype(cfg.np_dtype), (len(eval_sentences), 7)
        )
        z = np.concatenate([pooled, df_norm, cf_rows], axis=1) * mask
        out, _ = _fusion_forward(model, z)
        curve[size] = float(out.mean())
    return curve


# ---------------------------------------------------------------------------
# Serialization ("DLCM": magic, length-prefixed config JSON, DLC1 tensors)
# ---------------------------------------------------------------------------


def _tensor_order(model: PredictorModel) -> list[np.ndarray]:
    tensors = []
    for w in model.config.window_sizes:
        tensors.append(model.conv_kernels[w])
        tensors.append(model.conv_bias[w].reshape(1, -1))
    for wgt, b in zip(model.fusion_weights, model.fusion_bias):
        tensors.append(wgt)
        tensors.append(b.reshape(1, -1))
    tensors.append(model.df_mean.reshape(1, -1))
    tensors.append(model.df_std.reshape(1, -1))
    return tensors


def model_bytes(model: PredictorModel) -> bytes:
    cfg = model.config
    config_json = json.dumps(
        {
            "encoder_dim": cfg.encoder_dim,
            "window_sizes": list(cfg.window_sizes),
            "channels_per_window": cfg.channels,
            "fusion_hidden": cfg.fusion_hidden,
            "fusion_layers": cfg.fusion_layers,
            "lr": cfg.lr,
            "lr_decay_per_epoch": cfg.lr_decay_per_epoch,
            "batch_size": cfg.batch_size,
            "patience": cfg.patience,
            "max_epochs": cfg.max_epochs,
            "seed": cfg.seed,
            "val_fraction": cfg.val_fraction,
            "dtype": cfg.dtype,
            "dropped_features": list(cfg.dropped_features),
        },
        sort_keys=True,
    ).encode("utf-8")
    blob = bytearray()
    blob += MODEL_MAGIC
    blob += struct.pack("<I", len(config_json))
    blob += config_json
    for tensor in _tensor_order(model):
        blob += write_tensor_record(tensor)
    return bytes(blob)


def save_model(model: PredictorModel, path: str | Path) -> None:
    Path(path).write_bytes(model_bytes(model))


def load_model(path: str | Path) -> PredictorModel:
    data = Path(path).read_bytes()
    if data[:4] != MODEL_MAGIC:
        raise MalformedHeader(f"{path}: bad model magic {data[:4]!r}")
    if len(data) < 8:
        raise MalformedHeader(f"{path}: truncated model header")
    (config_len,) = struct.unpack_from("<I", data, 4)
    config_end = 8 + config_len
    if len(data) < config_end:
        raise MalformedHeader(f"{path}: truncated config block")
    try:
        raw = json.loads(data[8:config_end].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedHeader(f"{path}: config block is not valid JSON") from exc
    cfg = NetConfig(
        encoder_dim=int(raw["encoder_dim"]),
        window_sizes=tuple(raw["window_sizes"]),
        channels_per_window=int(raw["channels_per_window"]),
        fusion_hidden=int(raw["fusion_hidden"]),
        fusion_layers=int(raw["fusion_layers"]),
        lr=float(raw["lr"]),
        lr_decay_per_epoch=float(raw["lr_decay_per_epoch"]),
        batch_size=int(raw["batch_size"]),
        patience=int(raw["patience"]),
        max_epochs=int(raw["max_epochs"]),
        seed=int(raw["seed"]),
        val_fraction=float(raw["val_fraction"]),
        dtype=str(raw["dtype"]),
        dropped_features=tuple(raw["dropped_features"]),
    )
    dt = cfg.np_dtype

    offset = config_end
    tensors: list[np.ndarray] = []
    while offset < len(data):
        tensor, offset = _read_record_at(data, offset, where=f"{path} tensor {len(tensors)}")
        tensors.append(tensor.astype(dt))
    expected = 2 * len(cfg.window_sizes) + 2 * (cfg.fusion_layers + 1) + 2
    if len(tensors) != expected:
        raise MalformedHeader(f"{path}: expected {expected} tensors, found {len(tensors)}")

    it = iter(tensors)
    conv_kernels = {}
    conv_bias = {}
    for w in cfg.window_sizes:
        conv_kernels[w] = next(it)
        conv_bias[w] = next(it)[0]
    fusion_weights = []
    fusion_bias = []
    for _ in range(cfg.fusion_layers + 1):
        fusion_weights.append(next(it))
        fusion_bias.append(next(it)[0])
    df_mean = next(it)[0]
    df_std = next(it)[0]
    return PredictorModel(
        config=cfg,
        conv_kernels=conv_kernels,
        conv_bias=conv_bias,
        fusion_weights=fusion_weights,
        fusion_bias=fusion_bias,
        df_mean=df_mean,
        df_std=df_std,
    )
