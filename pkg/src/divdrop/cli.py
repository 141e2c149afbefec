"""Batch front-end: corpus generation, single runs, and parameter sweeps.

Config files are flat `section.key=value` lines (diff-friendly, no parser
dependencies); a run directory is self-describing: manifest + corpus
parameters + report reproduce the run byte for byte. `run --config` also
accepts a previously written manifest.json.
"""

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .clustering import ClusteringConfig
from .datagen import (
    AffineShift,
    DomainGenConfig,
    apply_domain_shift,
    generate_domain,
    inject_hard_samples,
    load_dataset,
    save_dataset,
)
from .encoder import save_checkpoint
from .errors import ConfigurationError, DivdropError
from .rngutil import derive_seed, substream
from .trainer import ExperimentConfig, TrainingReport, run as run_training

_BOOL_WORDS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}

# key -> (type tag, default); the single source of truth for config files
SCHEMA = {
    "seed": ("int", 0),
    "datagen.num_identities": ("int", 20),
    "datagen.samples_per_identity": ("int", 25),
    "datagen.dim": ("int", 8),
    "datagen.intra_class_spread": ("float", 0.12),
    "datagen.inter_class_separation": ("float", 3.0),
    "datagen.shift_rotation_deg": ("float", 30.0),
    "datagen.shift_magnitude": ("float", 1.0),
    "datagen.shift_scale": ("float", 1.0),
    "datagen.hard_fraction": ("float", 0.1),
    "datagen.hard_overlap": ("float", 4.0),
    "trainer.rho": ("float", 0.4),
    "trainer.alpha": ("float", 0.999),
    "trainer.beta": ("float", 1.0),
    "trainer.gamma": ("float", 1.0),
    "trainer.delta": ("float", 0.5),
    "trainer.tau": ("float", 0.3),
    "trainer.lr_initial": ("float", 0.00035),
    "trainer.lr_decay_every": ("int", 20),
    "trainer.lr_decay_factor": ("float", 0.1),
    "trainer.epochs_total": ("int", 55),
    "trainer.pretrain_epochs": ("int", 1),
    "trainer.batch_p": ("int", 15),
    "trainer.batch_k": ("int", 4),
    "trainer.arch": ("ints", [64, 32]),
    "trainer.activation": ("str", "relu"),
    "trainer.fdl_enabled": ("bool", True),
    "clustering.eps": ("float", 0.6),
    "clustering.min_pts": ("int", 4),
    "corpus.source": ("str", ""),
    "corpus.target": ("str", ""),
    "corpus.hard_ids": ("str", ""),
}

SWEEPABLE = {
    "rho": ("trainer.rho", "float"),
    "delta": ("trainer.delta", "float"),
    "fdl_enabled": ("trainer.fdl_enabled", "bool"),
    "alpha": ("trainer.alpha", "float"),
    "eps": ("clustering.eps", "float"),
}


def _coerce(key: str, raw, kind: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if isinstance(raw, bool):
                return raw
            word = str(raw).strip().lower()
            if word not in _BOOL_WORDS:
                raise ValueError(f"not a boolean: {raw!r}")
            return _BOOL_WORDS[word]
        if kind == "ints":
            if isinstance(raw, list):
                return [int(v) for v in raw]
            return [int(v) for v in str(raw).split(",") if v.strip()]
        return str(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{key}: {exc}") from exc


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    """Flat dict of typed values from `key=value` lines; unknown keys fail."""
    values = dict()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"{origin}:{lineno}: expected key=value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigurationError(f"{origin}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw, SCHEMA[key][0])
    return values


def load_config(path: str) -> dict:
    """Read a dotted-key config file or a manifest.json written by `run`."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        manifest = json.loads(text)
        flat = manifest.get("config", {})
        out = dict()
        for key, raw in flat.items():
            if key not in SCHEMA:
                raise ConfigurationError(f"{path}: unknown manifest key {key!r}")
            out[key] = _coerce(key, raw, SCHEMA[key][0])
        return out
    return parse_config_text(text, origin=str(path))


def resolved(values: dict) -> dict:
    """Schema defaults overlaid with the provided values."""
    out = {key: default for key, (_, default) in SCHEMA.items()}
    out.update(values)
    return out


def build_experiment_config(values: dict) -> ExperimentConfig:
    v = resolved(values)
    cfg = ExperimentConfig(
        rho=v["trainer.rho"],
        alpha=v["trainer.alpha"],
        beta=v["trainer.beta"],
        gamma=v["trainer.gamma"],
        delta=v["trainer.delta"],
        tau=v["trainer.tau"],
        lr_initial=v["trainer.lr_initial"],
        lr_decay_every=v["trainer.lr_decay_every"],
        lr_decay_factor=v["trainer.lr_decay_factor"],
        epochs_total=v["trainer.epochs_total"],
        pretrain_epochs=v["trainer.pretrain_epochs"],
        batch_p=v["trainer.batch_p"],
        batch_k=v["trainer.batch_k"],
        clustering=ClusteringConfig(eps=v["clustering.eps"], min_pts=v["clustering.min_pts"]),
        arch=tuple(v["trainer.arch"]),
        activation=v["trainer.activation"],
        seed=v["seed"],
        fdl_enabled=v["trainer.fdl_enabled"],
    )
    try:
        cfg.validate()
    except ConfigurationError as exc:
        raise ConfigurationError(f"trainer config invalid: {exc}") from exc
    return cfg


def build_datagen_config(values: dict) -> DomainGenConfig:
    v = resolved(values)
    return DomainGenConfig(
        num_identities=v["datagen.num_identities"],
        samples_per_identity=v["datagen.samples_per_identity"],
        dim=v["datagen.dim"],
        intra_class_spread=v["datagen.intra_class_spread"],
        inter_class_separation=v["datagen.inter_class_separation"],
        hard_fraction=v["datagen.hard_fraction"],
        hard_overlap=v["datagen.hard_overlap"],
        seed=v["seed"],
    )


def build_shift(values: dict, dim: int, seed: int) -> AffineShift:
    """Scale + block rotation + translation along a seeded random direction."""
    v = resolved(values)
    shift = AffineShift.block_rotation(dim, math.radians(v["datagen.shift_rotation_deg"]))
    scale = v["datagen.shift_scale"]
    if scale != 1.0:
        shift = AffineShift(matrix=shift.matrix * scale)
    magnitude = v["datagen.shift_magnitude"]
    if magnitude != 0.0:
        direction = substream(seed, "shift-dir").standard_normal(dim)
        direction /= max(float((direction ** 2).sum() ** 0.5), 1e-12)
        shift = shift.compose(AffineShift.translation(magnitude * direction))
    return shift


def build_corpus(values: dict):
    """(source, target, hard_ids) either loaded from files or generated."""
    v = resolved(values)
    if v["corpus.source"] or v["corpus.target"]:
        if not (v["corpus.source"] and v["corpus.target"]):
            raise ConfigurationError("corpus.source and corpus.target must be given together")
        source = load_dataset(v["corpus.source"])
        target = load_dataset(v["corpus.target"])
        hard_ids = set()
        if v["corpus.hard_ids"]:
            text = Path(v["corpus.hard_ids"]).read_text()
            hard_ids = {int(line) for line in text.split() if line.strip()}
        return source, target, hard_ids

    base = build_datagen_config(values)
    seed = v["seed"]
    source = generate_domain(replace(base, seed=derive_seed(seed, "datagen", "source")), "source")
    target = generate_domain(replace(base, seed=derive_seed(seed, "datagen", "target")), "target")
    target = apply_domain_shift(target, build_shift(values, base.dim, seed))
    target, hard_ids = inject_hard_samples(
        target, base.hard_fraction, base.hard_overlap, derive_seed(seed, "datagen", "hard")
    )
    return source, target, hard_ids


def write_manifest(values: dict, out_dir: Path) -> None:
    manifest = {
        "tool_version": __version__,
        "seed": resolved(values)["seed"],
        "out_dir": str(out_dir),
        "config": {k: v for k, v in sorted(resolved(values).items())},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def write_report(report: TrainingReport, out_dir: Path) -> None:
    payload = json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n"
    (out_dir / "report.json").write_text(payload)


def write_curves(report: TrainingReport, out_dir: Path) -> None:
    lines = ["epoch,ce,tri,fdl,total,num_clusters,num_outliers,clustering_error_rate"]
    for r in report.epochs:
        if r.kind != "adapt":
            continue
        err = "" if r.clustering_error_rate is None else repr(r.clustering_error_rate)
        lines.append(
            f"{r.epoch},{r.ce!r},{r.tri!r},{r.fdl!r},{r.total!r},"
            f"{r.num_clusters},{r.num_outliers},{err}"
        )
    (out_dir / "curves.csv").write_text("\n".join(lines) + "\n")


def _run_one(values: dict, out_dir: Path, quiet: bool) -> TrainingReport:
    out_dir.mkdir(parents=True, exist_ok=True)
    source, target, _hard = build_corpus(values)
    cfg = build_experiment_config(values)
    report = run_training(source, target, cfg, verbose=not quiet)
    write_manifest(values, out_dir)
    write_report(report, out_dir)
    write_curves(report, out_dir)
    save_checkpoint(report.final_model, out_dir / "checkpoint.txt")
    return report


def cmd_gen(args) -> int:
    values = load_config(args.config)
    if args.seed is not None:
        values["seed"] = args.seed
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    source, target, hard_ids = build_corpus(values)
    save_dataset(source, out_dir / "source.csv")
    save_dataset(target, out_dir / "target.csv")
    (out_dir / "hard_ids.csv").write_text("".join(f"{sid}\n" for sid in sorted(hard_ids)))
    if not args.quiet:
        print(f"wrote {out_dir}/source.csv ({len(source)}), {out_dir}/target.csv "
              f"({len(target)}), {len(hard_ids)} hard ids")
    return 0


def cmd_run(args) -> int:
    values = load_config(args.config)
    if args.seed is not None:
        values["seed"] = args.seed
    report = _run_one(values, Path(args.out), args.quiet)
    if not args.quiet and report.final_metrics is not None:
        print(f"mAP={report.final_metrics.mAP:.4f} rank1={report.final_metrics.rank1:.4f}")
    return 0


def cmd_sweep(args) -> int:
    if args.param not in SWEEPABLE:
        raise ConfigurationError(
            f"--param must be one of {sorted(SWEEPABLE)}, got {args.param!r}"
        )
    key, kind = SWEEPABLE[args.param]
    raw_values = [v for v in args.values.split(",") if v.strip()]
    if not raw_values:
        raise ConfigurationError("--values must list at least one value")
    sweep_values = [_coerce(key, v, kind) for v in raw_values]

    base = load_config(args.config)
    if args.seed is not None:
        base["seed"] = args.seed
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for raw, value in zip(raw_values, sweep_values):
        sub = dict(base)
        sub[key] = value
        sub_dir = out_dir / f"{args.param}={raw.strip()}"
        report = _run_one(sub, sub_dir, args.quiet)
        metrics = report.final_metrics
        rows.append((
            raw.strip(),
            report.final_clustering_error_rate,
            report.rel_err_10,
            report.rel_err_20,
            metrics.mAP if metrics else None,
            metrics.rank1 if metrics else None,
        ))
        if not args.quiet:
            print(f"[{args.param}={raw.strip()}] done")

    header = f"{args.param},clustering_error_rate,rel_err_10,rel_err_20,mAP,rank1"
    lines = [header]
    for row in rows:
        lines.append(",".join("" if v is None else (v if isinstance(v, str) else repr(v)) for v in row))
    (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="divdrop",
        description="Pseudo-label domain adaptation lab on synthetic vector domains",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="dotted-key config file (or manifest.json)")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    p_gen = sub.add_parser("gen", parents=[common], help="write corpus files")
    p_gen.set_defaults(func=cmd_gen)
    p_run = sub.add_parser("run", parents=[common], help="single training run")
    p_run.set_defaults(func=cmd_run)
    p_sweep = sub.add_parser("sweep", parents=[common], help="one run per parameter value")
    p_sweep.add_argument("--param", required=True, help=f"one of {sorted(SWEEPABLE)}")
    p_sweep.add_argument("--values", required=True, help="comma-separated value list")
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DivdropError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
