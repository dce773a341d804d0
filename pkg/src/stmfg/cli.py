"""Command-line entry point wiring the pipeline into reproducible runs.

Commands:
  synth    write a synthetic layered-tissue dataset
  run      load -> preprocess -> graphs -> train -> cluster -> evaluate
  ablate   run the component-ablation variants over shared seeds
  sweep    grid over loss weights / temperature, emitting per-cell metrics

Every command writes ``manifest.json`` into the output directory before
doing any work; ``run --from-manifest`` replays a previous run exactly.
Exit codes: 2 malformed data, 3 contract violation, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import DEFAULT_RESTARTS, ari, kmeans, nmi
from .data import (
    DEFAULT_MIN_SPOTS,
    DEFAULT_N_HVG,
    Dataset,
    generate_synthetic,
    load_dataset,
    preprocess,
    save_embeddings,
    save_labels,
    save_metrics,
    write_coords_csv,
    write_expression_csv,
    write_labels_csv,
)
from .errors import ContractError, DataError, NumericError, StmfgError
from .graphs import build_graph_pair
from .training import TrainConfig, train

ABLATION_VARIANTS = {
    "full": {},
    "no_mf": {"disable_fusion": True},
    "no_cl": {"disable_cl": True},
    "no_reg": {"disable_reg": True},
    "no_zinb": {"disable_zinb": True},
}

# keys the config file may set beyond TrainConfig
PIPELINE_KEYS = ("clusters", "restarts", "min_spots", "n_hvg", "checkpoint_every")


@dataclass
class PipelineSettings:
    clusters: int | None
    restarts: int
    min_spots: int
    n_hvg: int
    checkpoint_every: int


def _comma_ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _comma_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _add_io_flags(p: argparse.ArgumentParser, labels_help: str) -> None:
    p.add_argument("--expression", help="expression matrix (.csv or .mtx)")
    p.add_argument("--coords", help="spot coordinates CSV")
    p.add_argument("--labels", help=labels_help)
    p.add_argument("--out", required=True, help="output directory")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with the same keys as the flags")
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--dims", dest="hidden_dims", type=_comma_ints,
                   help="hidden layer widths, e.g. 128,64")
    p.add_argument("--radius", type=float)
    p.add_argument("--knn", dest="knn_k", type=int)
    p.add_argument("--decoder-hidden", dest="decoder_hidden", type=int)
    p.add_argument("--leaky-slope", dest="leaky_slope", type=float)
    p.add_argument("--no-fusion-l2", dest="fusion_l2", action="store_false", default=None)
    p.add_argument("--contrastive-layers", dest="contrastive_layers",
                   choices=("last", "all"))
    p.add_argument("--zinb-target", dest="zinb_target", choices=("preprocessed", "counts"))
    p.add_argument("--disable-fusion", action="store_true", default=None)
    p.add_argument("--disable-cl", dest="disable_cl", action="store_true", default=None)
    p.add_argument("--disable-reg", dest="disable_reg", action="store_true", default=None)
    p.add_argument("--disable-zinb", dest="disable_zinb", action="store_true", default=None)
    p.add_argument("--clusters", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--min-spots", dest="min_spots", type=int)
    p.add_argument("--hvg", dest="n_hvg", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)


def _load_config_file(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"{path}: config file not found") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise DataError(f"{path}: config must be a JSON object")
    return raw


def _resolve(args, train_keys_from=None) -> tuple[TrainConfig, PipelineSettings]:
    """Merge defaults < config file < explicit flags."""
    merged: dict = {}
    if train_keys_from:
        merged.update(train_keys_from)
    if getattr(args, "config", None):
        merged.update(_load_config_file(args.config))
    train_fields = set(TrainConfig.__dataclass_fields__)
    for key in list(train_fields) + list(PIPELINE_KEYS):
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    pipeline = PipelineSettings(
        clusters=merged.pop("clusters", None),
        restarts=merged.pop("restarts", DEFAULT_RESTARTS),
        min_spots=merged.pop("min_spots", DEFAULT_MIN_SPOTS),
        n_hvg=merged.pop("n_hvg", DEFAULT_N_HVG),
        checkpoint_every=merged.pop("checkpoint_every", 0),
    )
    unknown = set(merged) - train_fields
    if unknown:
        raise ContractError(f"unknown config keys: {sorted(unknown)}")
    return TrainConfig.from_dict(merged), pipeline


def _write_manifest(out_dir: Path, command: str, inputs: dict,
                    cfg: TrainConfig, pipeline: PipelineSettings,
                    extra: dict | None = None) -> None:
    manifest = {
        "tool": "stmfg",
        "version": __version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "command": command,
        "inputs": {k: (str(Path(v).resolve()) if v else None) for k, v in inputs.items()},
        "out_dir": str(out_dir.resolve()),
        "pipeline": {
            "clusters": pipeline.clusters,
            "restarts": pipeline.restarts,
            "min_spots": pipeline.min_spots,
            "n_hvg": pipeline.n_hvg,
            "checkpoint_every": pipeline.checkpoint_every,
        },
        "train": cfg.to_dict(),
    }
    if extra:
        manifest.update(extra)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _prepare(args, cfg: TrainConfig, pipeline: PipelineSettings):
    if not args.expression or not args.coords:
        raise ContractError("--expression and --coords are required")
    dataset = load_dataset(args.expression, args.coords, args.labels)
    dataset = preprocess(dataset, min_spots=pipeline.min_spots, n_hvg=pipeline.n_hvg)
    graphs = build_graph_pair(dataset.coords, dataset.preprocessed,
                              radius=cfg.radius, k=cfg.knn_k)
    return dataset, graphs


def _resolve_clusters(dataset: Dataset, pipeline: PipelineSettings) -> int:
    if pipeline.clusters is not None:
        return pipeline.clusters
    if dataset.n_domains:
        return dataset.n_domains
    raise ContractError("--clusters is required when no labels file is given")


def _train_and_score(dataset, graphs, cfg: TrainConfig, k: int, restarts: int,
                     out_dir: Path | None = None, checkpoint_every: int = 0):
    result = train(dataset, graphs, cfg,
                   checkpoint_dir=out_dir, checkpoint_every=checkpoint_every)
    partition = kmeans(result.trace.embedding, k, seed=cfg.seed, restarts=restarts)
    scores = {}
    if dataset.truth_labels is not None:
        scores["ari"] = ari(partition.labels, dataset.truth_labels)
        scores["nmi"] = nmi(partition.labels, dataset.truth_labels)
    return result, partition, scores


def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = generate_synthetic(args.n_side, args.domains, args.genes,
                            seed=args.seed, dropout=args.dropout,
                            dispersion=args.dispersion)
    manifest = {
        "tool": "stmfg",
        "version": __version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "command": "synth",
        "out_dir": str(out_dir.resolve()),
        "params": {
            "n_side": args.n_side, "domains": args.domains, "genes": args.genes,
            "seed": args.seed, "dropout": args.dropout, "dispersion": args.dispersion,
        },
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_expression_csv(ds, out_dir / "expression.csv")
    write_coords_csv(ds, out_dir / "coords.csv")
    write_labels_csv(ds, out_dir / "labels.csv")
    print(f"wrote {ds.n_spots} spots x {ds.n_genes} genes to {out_dir}")
    return 0


def cmd_run(args) -> int:
    if args.from_manifest:
        previous = _load_config_file(args.from_manifest)
        inputs = previous.get("inputs", {})
        args.expression = args.expression or inputs.get("expression")
        args.coords = args.coords or inputs.get("coords")
        args.labels = args.labels or inputs.get("labels")
        cfg, pipeline = _resolve(args, train_keys_from={
            **previous.get("train", {}),
            **{k: v for k, v in previous.get("pipeline", {}).items() if v is not None},
        })
    else:
        cfg, pipeline = _resolve(args)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_manifest(out_dir, "run",
                    {"expression": args.expression, "coords": args.coords,
                     "labels": args.labels}, cfg, pipeline)

    dataset, graphs = _prepare(args, cfg, pipeline)
    k = _resolve_clusters(dataset, pipeline)
    result, partition, scores = _train_and_score(
        dataset, graphs, cfg, k, pipeline.restarts,
        out_dir=out_dir, checkpoint_every=pipeline.checkpoint_every)

    result.log.write(out_dir / "loss_log.csv")
    save_embeddings(result.trace.embedding.data, dataset.spot_ids,
                    out_dir / "embeddings.csv")
    save_labels(partition.labels, dataset.spot_ids, out_dir / "labels.csv")
    records = [(dataset.name, cfg.seed, "k", float(k))]
    records += [(dataset.name, cfg.seed, name, value) for name, value in scores.items()]
    save_metrics(records, out_dir / "metrics.csv")

    summary = " ".join(f"{name}={value:.4f}" for name, value in scores.items())
    print(f"run complete: {dataset.n_spots} spots, k={k} {summary}".rstrip())
    return 0


def cmd_ablate(args) -> int:
    cfg, pipeline = _resolve(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_manifest(out_dir, "ablate",
                    {"expression": args.expression, "coords": args.coords,
                     "labels": args.labels}, cfg, pipeline,
                    extra={"seeds": args.seeds, "variants": list(ABLATION_VARIANTS)})

    dataset, graphs = _prepare(args, cfg, pipeline)
    if dataset.truth_labels is None:
        raise ContractError("ablate needs a labels file to score variants")
    k = _resolve_clusters(dataset, pipeline)

    lines = ["variant,seed,ari,nmi"]
    means = []
    for variant, overrides in ABLATION_VARIANTS.items():
        per_seed = []
        for seed in args.seeds:
            vcfg = TrainConfig.from_dict({**cfg.to_dict(), **overrides, "seed": seed})
            _, _, scores = _train_and_score(dataset, graphs, vcfg, k, pipeline.restarts)
            per_seed.append((scores["ari"], scores["nmi"]))
            lines.append(f"{variant},{seed},{scores['ari']:.6f},{scores['nmi']:.6f}")
            print(f"ablate {variant} seed={seed} ari={scores['ari']:.4f} "
                  f"nmi={scores['nmi']:.4f}")
        mean_ari = float(np.mean([s[0] for s in per_seed]))
        mean_nmi = float(np.mean([s[1] for s in per_seed]))
        means.append(f"{variant},mean,{mean_ari:.6f},{mean_nmi:.6f}")
    (out_dir / "ablation.csv").write_text("\n".join(lines + means) + "\n",
                                          encoding="utf-8")
    print(f"wrote {out_dir / 'ablation.csv'}")
    return 0


def cmd_sweep(args) -> int:
    cfg, pipeline = _resolve(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    grids = {
        "alpha": args.alpha_grid or [cfg.alpha],
        "lam": args.lambda_grid or [cfg.lam],
        "gamma": args.gamma_grid or [cfg.gamma],
        "tau": args.tau_grid or [cfg.tau],
    }
    _write_manifest(out_dir, "sweep",
                    {"expression": args.expression, "coords": args.coords,
                     "labels": args.labels}, cfg, pipeline,
                    extra={"seeds": args.seeds, "grids": grids})

    dataset, graphs = _prepare(args, cfg, pipeline)
    if dataset.truth_labels is None:
        raise ContractError("sweep needs a labels file to score grid cells")
    k = _resolve_clusters(dataset, pipeline)

    lines = ["alpha,lambda,gamma,tau,seed,ari,nmi"]
    for alpha in grids["alpha"]:
        for lam in grids["lam"]:
            for gamma in grids["gamma"]:
                for tau in grids["tau"]:
                    for seed in args.seeds:
                        cell = TrainConfig.from_dict({
                            **cfg.to_dict(), "alpha": alpha, "lam": lam,
                            "gamma": gamma, "tau": tau, "seed": seed,
                        })
                        _, _, scores = _train_and_score(dataset, graphs, cell, k,
                                                        pipeline.restarts)
                        lines.append(f"{alpha},{lam},{gamma},{tau},{seed},"
                                     f"{scores['ari']:.6f},{scores['nmi']:.6f}")
                        print(f"sweep a={alpha} l={lam} g={gamma} t={tau} "
                              f"seed={seed} ari={scores['ari']:.4f}")
    (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {out_dir / 'sweep.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stmfg",
        description="Spatial-domain clustering with dual-view fused graph convolution.")
    parser.add_argument("--version", action="version", version=f"stmfg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="write a synthetic layered dataset")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--n-side", dest="n_side", type=int, default=30)
    p_synth.add_argument("--domains", type=int, default=5)
    p_synth.add_argument("--genes", type=int, default=200)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--dropout", type=float, default=0.3)
    p_synth.add_argument("--dispersion", type=float, default=2.0)
    p_synth.set_defaults(func=cmd_synth)

    p_run = sub.add_parser("run", help="train and cluster one dataset")
    _add_io_flags(p_run, "ground-truth labels CSV (optional)")
    p_run.add_argument("--from-manifest", dest="from_manifest",
                       help="replay a previous run's manifest.json")
    _add_config_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_ablate = sub.add_parser("ablate", help="run the component ablations")
    _add_io_flags(p_ablate, "ground-truth labels CSV (required)")
    p_ablate.add_argument("--seeds", type=_comma_ints, default=[0, 1, 2, 3, 4])
    _add_config_flags(p_ablate)
    p_ablate.set_defaults(func=cmd_ablate)

    p_sweep = sub.add_parser("sweep", help="grid over loss weights/temperature")
    _add_io_flags(p_sweep, "ground-truth labels CSV (required)")
    p_sweep.add_argument("--seeds", type=_comma_ints, default=[0])
    p_sweep.add_argument("--alpha-grid", dest="alpha_grid", type=_comma_floats)
    p_sweep.add_argument("--lambda-grid", dest="lambda_grid", type=_comma_floats)
    p_sweep.add_argument("--gamma-grid", dest="gamma_grid", type=_comma_floats)
    p_sweep.add_argument("--tau-grid", dest="tau_grid", type=_comma_floats)
    _add_config_flags(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ContractError as exc:
        print(f"contract error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 4
    except StmfgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
