"""Command-line entry point: ``geobridge <subcommand> [--config FILE] [--key value ...]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
import time
from dataclasses import fields
from pathlib import Path

import yaml

from .config import TrainConfig, coerce, read_config_file
from .data import ClassScheme, DatasetError, SplitPlan, SynthSpec, generate_synthetic, load_dataset, \
    region_shift_spec, write_dataset
from .experiment import evaluate, export_embeddings, export_rgb, run_ablation, run_extrap, run_loro, \
    write_ablation_csv
from .model import CheckpointError, load_model, save_model

log = logging.getLogger("geobridge")

HELP = {
    "epochs": "training epochs (published setting: 500)",
    "lr": "AdamW learning rate (published setting: 1e-4)",
    "batch_size": "mini-batch size (published setting: 256)",
    "weight_decay": "AdamW decoupled weight decay",
    "temperature": "contrastive temperature",
    "w_lc": "weight of the land-cover cross-entropy",
    "w_region": "weight of the region cross-entropy",
    "w_con": "weight of the supervised contrastive loss",
    "con_reduction": "contrastive reduction over anchors: sum | mean",
    "hidden": "branch encoder width D (published setting: 256)",
    "pe_hidden": "positional head hidden width (published setting: 256)",
    "dropout": "branch encoder dropout (published setting: 0.5)",
    "pe_dropout": "positional head dropout",
    "pe_dim": "per-coordinate encoding length d; total 2d (published setting: d=64)",
    "pe_base": "sinusoid base n (published setting: 1e4)",
    "coord_scale": "multiplier on raw degrees before the sinusoids",
    "use_latlon": "feed the lat/long encoding (ablation switch)",
    "learned_pe": "pass the encoding through the learned head (ablation switch)",
    "use_region": "region branch, region loss and region contrastive categories (ablation switch)",
    "train_ratio": "extrapolation train fraction (published setting: 0.75)",
    "stratified": "stratify the extrapolation split by class",
    "seed": "random seed for init, shuffling, dropout and splits",
}

RUN_KEYS = ("data", "classes", "out", "scenario")


class UsageError(Exception):
    pass


def _add_train_options(p: argparse.ArgumentParser) -> None:
    defaults = TrainConfig()
    for f in fields(TrainConfig):
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=None, metavar="V",
                       help=f"{HELP.get(f.name, f.name)} [default: {getattr(defaults, f.name)}]")


def _add_run_options(p, scenario=False):
    p.add_argument("--config", help="key: value file; command-line options take precedence")
    p.add_argument("--data", help="dataset CSV (id,lat,lon,region,label,f0..)")
    p.add_argument("--classes", help="level1 | level2 | <count> | comma-separated names [default: level1]")
    p.add_argument("--out", help="output directory [default: runs]")
    if scenario:
        p.add_argument("--scenario", choices=("extrap", "loro"), help="[default: loro]")
    _add_train_options(p)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="geobridge", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on the extrapolation split and evaluate the held-out 25%%")
    _add_run_options(p)
    p = sub.add_parser("loro", help="leave-one-region-out evaluation")
    _add_run_options(p)
    p = sub.add_parser("ablate", help="the six-row ablation grid")
    _add_run_options(p, scenario=True)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--plan", help="split-plan JSON to select a subset")
    p.add_argument("--fold", default=None, help="fold name in the plan [default: first fold]")
    p.add_argument("--part", choices=("train", "test"), default="test")
    p.add_argument("--report", help="write the report JSON here instead of stdout")

    p = sub.add_parser("export-embeddings", help="per-sample embeddings as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--which", choices=("z_inv", "z_spec", "positional"), default="positional")
    p.add_argument("--output", required=True, help="CSV path")
    p.add_argument("--rgb", help="also write PCA->RGB colours of the positional vectors here")

    p = sub.add_parser("synth", help="write a synthetic dataset CSV")
    p.add_argument("--output", required=True)
    p.add_argument("--n-classes", type=int, default=3)
    p.add_argument("--n-regions", type=int, default=2)
    p.add_argument("--n-features", type=int, default=10)
    p.add_argument("--samples-per-cell", type=int, default=500)
    p.add_argument("--noise-std", type=float, default=1.0)
    p.add_argument("--separation", type=float, default=10.0,
                   help="std of randomly drawn class means")
    p.add_argument("--region-shift-step", type=float, default=None,
                   help="if set, classes lie on a line and each region shifts them by this step")
    p.add_argument("--seed", type=int, default=0)
    return ap


# --------------------------------------------------------------------------


def resolve(args) -> tuple[TrainConfig, dict]:
    """Merge config file and command-line options into (TrainConfig, run options)."""
    raw = {}
    if args.config:
        if not Path(args.config).is_file():
            raise UsageError(f"config file not found: {args.config}")
        raw.update(read_config_file(args.config))
    for f in fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            raw[f.name] = v
    for k in RUN_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            raw[k] = v
    run = {k: raw.pop(k) for k in RUN_KEYS if k in raw}
    known = {f.name: f for f in fields(TrainConfig)}
    try:
        cfg = TrainConfig.from_dict({k: coerce(known[k], v) if k in known else v for k, v in raw.items()})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None
    run.setdefault("classes", "level1")
    run.setdefault("out", "runs")
    run.setdefault("scenario", "loro")
    if "data" not in run:
        raise UsageError("no dataset given (--data or 'data' in the config file)")
    if not Path(run["data"]).is_file():
        raise UsageError(f"dataset not found: {run['data']}")
    return cfg, run


def _load(run):
    try:
        return load_dataset(run["data"], ClassScheme.from_spec(run["classes"]))
    except (DatasetError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _run_dir(command: str, cfg: TrainConfig, run: dict) -> Path:
    key = json.dumps({"cmd": command, "config": cfg.to_dict(),
                      "run": {k: str(v) for k, v in run.items() if k != "out"}}, sort_keys=True)
    digest = hashlib.sha256(key.encode()).hexdigest()[:12]
    stamp = time.strftime("%Y%m%dT%H%M%S")
    base = Path(run["out"]) / f"{command}-{digest}-s{cfg.seed}-{stamp}"
    path, k = base, 1
    while path.exists():
        path = base.with_name(f"{base.name}.{k}")
        k += 1
    path.mkdir(parents=True)
    return path


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_config(path, cfg, run) -> None:
    # the output root is where the run lives, not part of what was run
    keep = {k: v for k, v in run.items() if k != "out"}
    Path(path).write_text(yaml.safe_dump({**cfg.to_dict(), **keep}, sort_keys=True), encoding="utf-8")


def report_json(report, cfg=None, plan_digest=None, **extra) -> dict:
    out = {"metrics": report.to_dict()}
    if cfg is not None:
        out["config"] = cfg.to_dict()
    if plan_digest is not None:
        out["split_sha256"] = plan_digest
    out.update(extra)
    return out


def _in_run_dir(command, cfg, run, body):
    """Run ``body(run_dir)``; on any failure remove the directory so nothing partial remains."""
    rd = _run_dir(command, cfg, run)
    try:
        body(rd)
    except BaseException:
        shutil.rmtree(rd, ignore_errors=True)
        raise
    print(rd)
    return 0


def cmd_train(args) -> int:
    cfg, run = resolve(args)
    ds = _load(run)

    def body(rd):
        res = run_extrap(cfg, ds)
        _write_config(rd / "config.yaml", cfg, run)
        res.plan.save(rd / "split.json")
        res.history.write_csv(rd / "history.csv")
        digest = res.plan.digest()
        _write_json(rd / "report.json", report_json(res.report, cfg, digest, part="test"))
        _write_json(rd / "train_report.json", report_json(res.train_report, cfg, digest, part="train"))
        save_model(res.model, rd / "model.ckpt")
        log.info("test accuracy %.4f, weighted F1 %.4f", res.report.accuracy, res.report.weighted_f1)

    return _in_run_dir("train", cfg, run, body)


def cmd_loro(args) -> int:
    cfg, run = resolve(args)
    ds = _load(run)

    def body(rd):
        res = run_loro(cfg, ds)
        _write_config(rd / "config.yaml", cfg, run)
        res.plan.save(rd / "split.json")
        _write_json(rd / "loro.json", {
            "config": cfg.to_dict(),
            "split_sha256": res.plan.digest(),
            "regions": {name: rep.to_dict() for name, rep in zip(res.regions, res.reports)},
            "mean_accuracy": res.mean_accuracy,
            "mean_weighted_f1": res.mean_weighted_f1,
        })

    return _in_run_dir("loro", cfg, run, body)


def cmd_ablate(args) -> int:
    cfg, run = resolve(args)
    ds = _load(run)

    def body(rd):
        rows = run_ablation(cfg, ds, run["scenario"])
        _write_config(rd / "config.yaml", cfg, run)
        write_ablation_csv(rows, rd / "ablation.csv")

    return _in_run_dir("ablate", cfg, run, body)


def _load_checkpoint_and_data(args):
    for p in (args.checkpoint, args.data):
        if not Path(p).is_file():
            raise UsageError(f"file not found: {p}")
    try:
        model = load_model(args.checkpoint)
    except CheckpointError as exc:
        raise UsageError(f"{args.checkpoint}: {exc}") from None
    try:
        ds = load_dataset(args.data, model.class_scheme, model.region_scheme)
    except (DatasetError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if ds.num_features != model.n_features:
        raise UsageError(f"schema mismatch: {args.data} has {ds.num_features} features, "
                         f"checkpoint expects {model.n_features}")
    return model, ds


def cmd_evaluate(args) -> int:
    model, ds = _load_checkpoint_and_data(args)
    digest = None
    if args.plan:
        plan = SplitPlan.load(args.plan)
        fold = plan.fold(args.fold) if args.fold else plan.folds[0]
        ds = ds.subset(fold.train if args.part == "train" else fold.test)
        digest = plan.digest()
    rep = evaluate(model, ds)
    obj = report_json(rep, model.cfg, digest, part=args.part if args.plan else "all")
    if args.report:
        _write_json(args.report, obj)
    else:
        print(json.dumps(obj, indent=2, sort_keys=True))
    return 0


def cmd_export(args) -> int:
    model, ds = _load_checkpoint_and_data(args)
    try:
        export_embeddings(model, ds, args.which, args.output)
        if args.rgb:
            export_rgb(model, ds, args.rgb)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return 0


def cmd_synth(args) -> int:
    if args.region_shift_step is not None:
        spec = region_shift_spec(args.n_classes, args.n_regions, args.n_features, args.samples_per_cell,
                                 args.region_shift_step, args.noise_std, args.seed)
    else:
        spec = SynthSpec(args.n_classes, args.n_regions, args.n_features, args.samples_per_cell,
                         noise_std=args.noise_std, separation=args.separation, seed=args.seed)
    write_dataset(generate_synthetic(spec), args.output)
    return 0


COMMANDS = {
    "train": cmd_train,
    "loro": cmd_loro,
    "ablate": cmd_ablate,
    "evaluate": cmd_evaluate,
    "export-embeddings": cmd_export,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
