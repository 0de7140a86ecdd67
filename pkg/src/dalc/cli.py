"""Command-line entry point: every pipeline stage, deterministic and scriptable.

Exit codes: 0 success, 1 input/validation failure, 2 internal error.
Outputs are written atomically (temp file + rename). Every run prints the
resolved seed on the diagnostic stream. DALC_THREADS caps the worker count
of multi-job commands; results are independent of the parallelism degree.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

from . import harness as harness_mod
from . import net as net_mod
from .curvefit import AnchorObservation, Exp3Params, exp3_curve, exp3_fit
from .dataset import Manifest, load_manifest, save_manifest, validate_dataset
from .errors import DalcError
from .features import CorpusFeatures, InstanceFeatures
from .gbt import GbtConfig, gbt_fit
from .harness import (
    DEFAULT_SEEDS,
    EvalProtocol,
    SyntheticSpec,
    benchmark_spec,
    distribution_report,
    generate_synthetic,
    leave_one_out,
    shifted_benchmark_spec,
)
from .net import NetConfig


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit(2); bad flags are input errors
        raise UsageError(message)


def _atomic_write(path: str | Path, data: str | bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _print_seed(seed: int | None) -> None:
    print(f"seed: {'none' if seed is None else seed}", file=sys.stderr)


def _parse_sizes(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip() != "")


def _parse_seeds(text: str) -> tuple[int, ...]:
    """A single integer N means "the first N default seeds"; a comma list is explicit."""
    if "," in text:
        return tuple(int(t) for t in text.split(",") if t.strip() != "")
    n = int(text)
    if n <= len(DEFAULT_SEEDS):
        return DEFAULT_SEEDS[:n]
    return tuple(range(DEFAULT_SEEDS[0], DEFAULT_SEEDS[0] + n))


def _parse_drops(text: str) -> tuple[str, ...]:
    return tuple(net_mod.normalize_drop_token(t.strip()) for t in text.split(",") if t.strip())


def _add_net_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hidden", type=int, default=None, help="fusion hidden size")
    p.add_argument("--layers", type=int, default=None, help="fusion hidden layer count")
    p.add_argument("--channels", type=int, default=None, help="conv channels per window")
    p.add_argument("--windows", type=str, default=None, help="conv window sizes, e.g. 2,3,4")
    p.add_argument("--lr", type=float, default=None, help="Adam learning rate")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None, help="max training epochs")
    p.add_argument("--patience", type=int, default=None, help="early-stopping patience")
    p.add_argument("--val-fraction", type=float, default=None)
    p.add_argument("--dtype", choices=("float32", "float64"), default=None)


def _net_config(args, tensor_dim: int, seed: int, drops: tuple[str, ...]) -> NetConfig:
    cfg = NetConfig(encoder_dim=tensor_dim, seed=seed, dropped_features=drops)
    overrides = {
        "fusion_hidden": args.hidden,
        "fusion_layers": args.layers,
        "channels_per_window": args.channels,
        "lr": args.lr,
        "batch_size": args.batch_size,
        "max_epochs": args.epochs,
        "patience": args.patience,
        "val_fraction": args.val_fraction,
        "dtype": args.dtype,
    }
    if args.windows:
        overrides["window_sizes"] = _parse_sizes(args.windows)
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_validate(args) -> int:
    _print_seed(None)
    manifest = load_manifest(args.manifest)
    report = validate_dataset(manifest)
    print(report)
    return 0 if report.ok else 1


def _cmd_featurize(args) -> int:
    _print_seed(None)
    manifest = load_manifest(args.manifest)
    vocab = manifest.general_vocab or frozenset()
    lines = []
    for dom in manifest.domains:
        for sent in dom.sentences:
            f = InstanceFeatures.from_record(sent)
            lines.append(
                json.dumps(
                    {
                        "domain": dom.name,
                        "id": sent.id,
                        "least_confidence": f.least_confidence,
                        "margin": f.margin,
                        "avg_entropy": f.avg_entropy,
                        "xsim": f.xsim,
                        "has_xsim": f.has_xsim,
                    },
                    sort_keys=True,
                )
            )
        anchors = set(dom.samples)
        if dom.gold_curve and 0 in dom.gold_curve:
            anchors.add(0)
        for size in sorted(anchors):
            cf = (
                CorpusFeatures.zero()
                if size == 0
                else net_mod.corpus_features_for_size(size, dom.samples, vocab)
            )
            obj = {"domain": dom.name, "anchor": size}
            obj.update({k: float(v) for k, v in zip(cf.__dataclass_fields__, cf.as_vector())})
            lines.append(json.dumps(obj, sort_keys=True))
    text = "".join(ln + "\n" for ln in lines)
    if args.out:
        _atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_fit_exp3(args) -> int:
    _print_seed(None)
    obs = []
    with open(args.csv, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or (line_no == 1 and line.lower().replace(" ", "") in ("size,score", "n,score")):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise DalcError(f"{args.csv}:{line_no}: expected 'size,score'")
            obs.append(AnchorObservation(size=int(parts[0]), score=float(parts[1])))
    params = exp3_fit(obs)
    sizes = _parse_sizes(args.sizes) if args.sizes else tuple(sorted({o.size for o in obs}))
    curve = exp3_curve(params, sizes)
    payload = json.dumps(
        {
            "params": {"a": params.a, "b": params.b, "c": params.c},
            "curve": {str(k): v for k, v in curve.items()},
        },
        sort_keys=True,
        indent=2,
    )
    if args.out:
        _atomic_write(args.out, payload + "\n")
    else:
        print(payload)
    return 0


def _cmd_train(args) -> int:
    _print_seed(args.seed)
    manifest = load_manifest(args.manifest)
    drops = _parse_drops(args.drop_features) if args.drop_features else ()
    anchors = _parse_sizes(args.sizes) if args.sizes else None
    instances = harness_mod.dalc_training_instances(
        manifest, args.holdout, anchor_sizes=anchors, with_zero_anchor=args.with_zero_anchor
    )
    cfg = _net_config(args, manifest.tensor_dim, args.seed, drops)
    model, log = net_mod.train(instances, cfg)
    _atomic_write(args.out, net_mod.model_bytes(model))
    print(
        f"trained on {len(instances)} instances; best epoch {log.best_epoch} "
        f"(val MSE {log.epochs[log.best_epoch].val_mse:.6f}); wrote {args.out}",
        file=sys.stderr,
    )
    return 0


def _cmd_train_gbt(args) -> int:
    _print_seed(args.seed)
    manifest = load_manifest(args.manifest)
    cache = harness_mod._cache_for(manifest)
    domains = [d for d in manifest.domains if d.gold_curve and d.name != args.holdout]
    if not domains:
        raise DalcError("no training domains with gold curves")
    anchors = _parse_sizes(args.sizes) if args.sizes else harness_mod._common_anchors(domains)
    cfg = GbtConfig(
        n_trees=args.trees, max_depth=args.depth, learning_rate=args.gbt_lr
    )
    rows = []
    targets = []
    if args.level == "corpus":
        for dom in domains:
            for anchor in anchors:
                rows.append(cache.xi(dom, anchor).as_vector())
                targets.append(dom.gold_curve[anchor])
    else:
        from .gbt import gbt_instance_rows

        for dom in domains:
            for anchor in anchors:
                xi = cache.xi(dom, anchor)
                for sent in dom.sentences:
                    rows.append(gbt_instance_rows(sent, xi))
                    targets.append(sent.gold_chrf[anchor])
    model = gbt_fit(rows, targets, cfg, args.seed)
    _atomic_write(args.out, model.to_json() + "\n")
    print(f"fit {args.level}-level model on {len(rows)} rows; wrote {args.out}", file=sys.stderr)
    return 0


def _cmd_predict_curve(args) -> int:
    _print_seed(None)
    manifest = load_manifest(args.manifest)
    model = net_mod.load_model(args.model)
    dom = manifest.domain(args.domain)
    sizes = _parse_sizes(args.sizes) if args.sizes else None
    curve = net_mod.predict_curve(
        model,
        dom.sentences,
        dom.samples,
        general_vocab=manifest.general_vocab or frozenset(),
        sizes=sizes,
        extrapolate=args.extrapolate,
    )
    payload = json.dumps(
        {"domain": dom.name, "curve": {str(k): v for k, v in curve.items()}},
        sort_keys=True,
        indent=2,
    )
    if args.out:
        _atomic_write(args.out, payload + "\n")
    else:
        print(payload)
    return 0


def _one_evaluation(job) -> tuple[str, list]:
    manifest_path, holdout, protocol_kwargs, kind = job
    manifest = load_manifest(manifest_path)
    protocol = EvalProtocol(held_out_domain=holdout, **protocol_kwargs)
    report = leave_one_out(manifest, protocol, kind)
    return holdout, report.rows


def _cmd_evaluate(args) -> int:
    seeds = _parse_seeds(args.seeds)
    _print_seed(seeds[0])
    if args.protocol != "loo":
        raise DalcError(f"unknown protocol {args.protocol!r}")
    manifest = load_manifest(args.manifest)
    kind = args.predictor.replace("-", "_")
    drops = frozenset(_parse_drops(args.drop_features)) if args.drop_features else frozenset()

    net_cfg = _net_config(args, manifest.tensor_dim, seeds[0], ())
    protocol_kwargs = dict(
        seeds=seeds,
        anchor_sizes=_parse_sizes(args.sizes) if args.sizes else None,
        eval_sizes=_parse_sizes(args.eval_sizes) if args.eval_sizes else None,
        ablation=drops,
        with_zero_anchor=args.with_zero_anchor,
        extrapolate=args.extrapolate,
        net_config=net_cfg,
    )
    holdouts = [args.holdout] if args.holdout else [d.name for d in manifest.domains if d.gold_curve]

    workers = min(int(os.environ.get("DALC_THREADS", "1")), len(holdouts))
    all_rows = []
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        jobs = [(args.manifest, h, protocol_kwargs, kind) for h in holdouts]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(_one_evaluation, jobs))
        for h in holdouts:
            all_rows.extend(results[h])
    else:
        for h in holdouts:
            protocol = EvalProtocol(held_out_domain=h, **protocol_kwargs)
            all_rows.extend(leave_one_out(manifest, protocol, kind).rows)

    report = harness_mod.EvalReport(predictor=kind, rows=all_rows)
    payload = report.to_json()
    if args.out:
        _atomic_write(args.out, payload + "\n")
    else:
        print(payload)
    if args.tsv:
        _atomic_write(args.tsv, report.to_tsv())
    print(
        "average RMSE: "
        + " ".join(f"{d}={v:.4f}" for d, v in sorted(report.domain_rmse().items()))
        + f" | overall={report.average_rmse():.4f}",
        file=sys.stderr,
    )
    return 0


def _cmd_report_dist(args) -> int:
    _print_seed(None)
    manifest = load_manifest(args.manifest)
    report = distribution_report(manifest, args.holdout)
    if args.out:
        _atomic_write(args.out, report.to_tsv())
    else:
        sys.stdout.write(report.to_tsv())
    print(f"wasserstein: {report.wasserstein:.6f}")
    return 0


def _cmd_synth(args) -> int:
    _print_seed(args.seed)
    if args.spec:
        raw = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        raw["curve_params"] = tuple(tuple(p) for p in raw["curve_params"])
        for key in ("vocab_sizes", "zipf_exponents", "anchor_sizes",
                    "interpolation_sizes", "extrapolation_sizes"):
            if key in raw:
                raw[key] = tuple(raw[key])
        spec = SyntheticSpec(**raw)
    elif args.preset == "benchmark":
        spec = benchmark_spec(sentences_per_domain=args.sentences)
    elif args.preset == "shifted":
        spec = shifted_benchmark_spec(sentences_per_domain=args.sentences)
    else:
        spec = SyntheticSpec(
            n_domains=2,
            vocab_sizes=(80, 120),
            zipf_exponents=(1.1, 1.3),
            curve_params=((0.15, -1.4, 0.6), (0.2, -1.2, 0.7)),
            sentences_per_domain=args.sentences,
            anchor_sizes=(0, 100, 1000, 5000),
        )
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    manifest = generate_synthetic(spec)
    path = save_manifest(manifest, args.out, name=args.name)
    print(f"wrote {path}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# Parser assembly
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="dalc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="load a manifest and report invariant violations")
    p.add_argument("manifest")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("featurize", help="emit instance and corpus features as JSONL")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_featurize)

    p = sub.add_parser("fit-exp3", help="least-squares fit of the 3-parameter curve")
    p.add_argument("--csv", required=True, help="CSV of size,score rows")
    p.add_argument("--sizes", default=None, help="comma-separated query sizes")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_fit_exp3)

    p = sub.add_parser("train", help="train the curve predictor, leave-one-out style")
    p.add_argument("--manifest", required=True)
    p.add_argument("--holdout", required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEEDS[0])
    p.add_argument("--out", required=True, help="model file (binary)")
    p.add_argument("--sizes", default=None, help="training anchor sizes")
    p.add_argument("--with-zero-anchor", action="store_true")
    p.add_argument("--drop-features", default=None, help="df|corpus|enc|<name>, comma-separated")
    _add_net_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("train-gbt", help="train a boosted-tree baseline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--level", choices=("corpus", "instance"), required=True)
    p.add_argument("--holdout", default=None)
    p.add_argument("--seed", type=int, default=DEFAULT_SEEDS[0])
    p.add_argument("--out", required=True, help="model file (JSON)")
    p.add_argument("--sizes", default=None)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--depth", type=int, default=10)
    p.add_argument("--gbt-lr", type=float, default=0.1)
    p.set_defaults(func=_cmd_train_gbt)

    p = sub.add_parser("predict-curve", help="predict a domain's learning curve")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("--sizes", default=None)
    p.add_argument("--extrapolate", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_predict_curve)

    p = sub.add_parser("evaluate", help="leave-one-out evaluation report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--protocol", default="loo")
    p.add_argument("--predictor", choices=("dalc", "exp3", "gbt-corpus", "gbt-instance"), default="dalc")
    p.add_argument("--seeds", default="5", help="count (single int) or comma-separated seed list")
    p.add_argument("--holdout", default=None, help="one domain; default: each in turn")
    p.add_argument("--sizes", default=None, help="training anchor sizes")
    p.add_argument("--eval-sizes", default=None)
    p.add_argument("--with-zero-anchor", action="store_true")
    p.add_argument("--extrapolate", action="store_true")
    p.add_argument("--drop-features", default=None)
    p.add_argument("--out", default=None, help="JSON report path")
    p.add_argument("--tsv", default=None, help="also write a flat TSV")
    _add_net_flags(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report-dist", help="train/test chrF distribution shift report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--holdout", required=True)
    p.add_argument("--out", default=None, help="histogram TSV path")
    p.set_defaults(func=_cmd_report_dist)

    p = sub.add_parser("synth", help="generate a synthetic dataset on disk")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--name", default="synth")
    p.add_argument("--spec", default=None, help="JSON spec file")
    p.add_argument("--preset", choices=("small", "benchmark", "shifted"), default="small")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sentences", type=int, default=200)
    p.set_defaults(func=_cmd_synth)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DalcError, FileNotFoundError, KeyError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # internal error
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
