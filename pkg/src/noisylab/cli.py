"""Experiment runner: corrupt datasets, sweep strategies over seeds,
aggregate mean/std tables, and emit plot-ready diagnostics CSVs.

Subcommands: inject, run, report, diagnose. The run config is a YAML tree
with strict unknown-key rejection so hyperparameter typos fail loudly.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import data as data_mod
from . import diagnostics as diag_mod
from . import model as model_mod
from . import noise as noise_mod
from . import strategies as strat_mod
from . import trainer as trainer_mod
from .errors import ConfigError, DegenerateClassError, NoisyLabError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_DEGENERATE = 3

FAILURE_MARKER = "FAILED"

_CONFIG_SCHEMA = {
    "dataset": {
        "synth": {"k", "n", "margin", "seed", "dims"},
        "path": None,
        "k": None,
        "featurize_dims": None,
    },
    "split": {"train", "val", "test", "seed"},
    "noise": {"type", "level", "seed", "matrix", "rules", "abstain_to_clean"},
    "strategies": None,  # list, validated separately
    "train": {
        "lr",
        "batch_size",
        "max_epochs",
        "eval_every",
        "patience",
        "seed",
        "val_policy",
        "convergence_tol",
        "arch",
        "hidden",
    },
    "trials": None,
    "output_dir": None,
}

_STRATEGY_KEYS = {
    "vanilla": set(),
    "no_validation": set(),
    "nmat": {"matrix"},
    "nmwr": {"lambda"},
    "coteaching": {"eps", "ramp_epochs"},
    "label_smoothing": {"alpha"},
}


def _check_keys(block: dict, allowed, where: str) -> None:
    unknown = set(block) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as f:
        cfg = yaml.safe_load(f)
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys(cfg, _CONFIG_SCHEMA, "config")
    for key in ("dataset", "strategies", "train", "output_dir"):
        if key not in cfg:
            raise ConfigError(f"config missing required key {key!r}")
    _check_keys(cfg["dataset"], _CONFIG_SCHEMA["dataset"], "dataset")
    if "synth" in cfg["dataset"]:
        _check_keys(cfg["dataset"]["synth"], _CONFIG_SCHEMA["dataset"]["synth"], "dataset.synth")
    if "split" in cfg:
        _check_keys(cfg["split"], _CONFIG_SCHEMA["split"], "split")
    if "noise" in cfg:
        _check_keys(cfg["noise"], _CONFIG_SCHEMA["noise"], "noise")
    _check_keys(cfg["train"], _CONFIG_SCHEMA["train"], "train")
    if not isinstance(cfg["strategies"], list) or not cfg["strategies"]:
        raise ConfigError("strategies must be a non-empty list")
    for s in cfg["strategies"]:
        name = s.get("name")
        if name not in _STRATEGY_KEYS:
            raise ConfigError(f"unknown strategy {name!r}")
        _check_keys(set(s) - {"name"}, _STRATEGY_KEYS[name], f"strategy {name}")
    if int(cfg.get("trials", 1)) < 1:
        raise ConfigError("trials must be >= 1")
    return cfg


def _build_dataset(cfg: dict):
    ds_cfg = cfg["dataset"]
    if "synth" in ds_cfg:
        if "path" in ds_cfg:
            raise ConfigError("dataset: give either synth or path, not both")
        ds = data_mod.synth_dataset(**ds_cfg["synth"])
        textual = False
    else:
        if "path" not in ds_cfg or "k" not in ds_cfg:
            raise ConfigError("dataset needs path and k (or a synth block)")
        ds = data_mod.load_jsonl(ds_cfg["path"], int(ds_cfg["k"]))
        textual = True
    split_cfg = cfg.get("split", {})
    spec = data_mod.SplitSpec(
        fractions=(
            float(split_cfg.get("train", 0.8)),
            float(split_cfg.get("val", 0.1)),
            float(split_cfg.get("test", 0.1)),
        ),
        seed=int(split_cfg.get("seed", 0)),
    )
    return data_mod.split(ds, spec), textual, ds_cfg


def _noise_matrix(noise_cfg: dict, k: int) -> noise_mod.TransitionMatrix:
    ntype = noise_cfg.get("type")
    if ntype == "uniform":
        return noise_mod.uniform_matrix(k, float(noise_cfg["level"]))
    if ntype == "sflip":
        return noise_mod.single_flip_matrix(k, float(noise_cfg["level"]))
    if ntype == "matrix":
        return noise_mod.TransitionMatrix.load_csv(noise_cfg["matrix"])
    raise ConfigError(f"unknown noise type {ntype!r}")


def _apply_noise(splits, textual: bool, noise_cfg: dict, ds_cfg: dict):
    """Corrupt train and val; test stays clean. Returns (splits, true T, eps)."""
    train_ds, val_ds, test_ds = splits
    if not noise_cfg:
        raise ConfigError("config needs a noise block")
    seed = int(noise_cfg.get("seed", 0))
    if noise_cfg.get("type") == "rules":
        if not textual:
            raise ConfigError("rule noise needs a text dataset, not synth")
        rules = noise_mod.RuleSet.load_jsonl(
            noise_cfg["rules"],
            abstain_to_clean=bool(noise_cfg.get("abstain_to_clean", True)),
        )
        train_ds = noise_mod.inject_rules(train_ds, rules)
        val_ds = noise_mod.inject_rules(val_ds, rules)
        T = noise_mod.matrix_from_pairs(
            train_ds.clean_labels, train_ds.noisy_labels, train_ds.k
        )
    else:
        T = _noise_matrix(noise_cfg, train_ds.k)
        train_ds = dataclasses.replace(
            train_ds, noisy_labels=noise_mod.inject(train_ds.clean_labels, T, seed)
        )
        val_ds = dataclasses.replace(
            val_ds, noisy_labels=noise_mod.inject(val_ds.clean_labels, T, seed + 1)
        )
    if textual:
        dims = int(ds_cfg.get("featurize_dims", 2**18))
        train_ds = data_mod.featurize(train_ds, dims)
        val_ds = data_mod.featurize(val_ds, dims)
        test_ds = data_mod.featurize(test_ds, dims)
    eps = noise_mod.fdr(train_ds.clean_labels, train_ds.noisy_labels)
    return (train_ds, val_ds, test_ds), T, eps


def _build_strategy(s_cfg: dict, true_T, realized_fdr: float):
    name = s_cfg["name"]
    if name == "vanilla":
        return strat_mod.Vanilla()
    if name == "no_validation":
        return strat_mod.NoValidation()
    if name == "label_smoothing":
        return strat_mod.LabelSmoothing(alpha=float(s_cfg.get("alpha", 0.1)))
    if name == "nmwr":
        return strat_mod.NMwR(lam=float(s_cfg.get("lambda", 1e-3)))
    if name == "nmat":
        matrix = s_cfg.get("matrix", "true")
        if matrix == "true":
            T = true_T
        else:
            T = noise_mod.TransitionMatrix.load_csv(matrix)
        return strat_mod.NMat(T=T)
    if name == "coteaching":
        eps = s_cfg.get("eps")
        eps = realized_fdr if eps is None else float(eps)
        return strat_mod.CoTeaching(eps=eps, ramp_epochs=int(s_cfg.get("ramp_epochs", 5)))
    raise ConfigError(f"unknown strategy {name!r}")


def cmd_inject(args) -> int:
    given = [f for f in ("level", "matrix", "rules") if getattr(args, f) is not None]
    if args.type in ("uniform", "sflip") and (args.matrix or args.rules):
        print("inject: --matrix/--rules conflict with parametric noise", file=sys.stderr)
        return EXIT_USAGE
    if args.type == "matrix" and (args.level is not None or args.rules or not args.matrix):
        print("inject: --type matrix takes exactly --matrix", file=sys.stderr)
        return EXIT_USAGE
    if args.type == "rules" and (args.level is not None or args.matrix or not args.rules):
        print("inject: --type rules takes exactly --rules", file=sys.stderr)
        return EXIT_USAGE

    ds = data_mod.load_jsonl(args.input, args.k)
    if ds.clean_labels is None:
        print("inject: input has no clean_label field", file=sys.stderr)
        return EXIT_FAILURE
    try:
        if args.type == "rules":
            rules = noise_mod.RuleSet.load_jsonl(args.rules)
            out = noise_mod.inject_rules(ds, rules)
            T = noise_mod.matrix_from_pairs(out.clean_labels, out.noisy_labels, ds.k)
        else:
            if args.type == "matrix":
                T = noise_mod.TransitionMatrix.load_csv(args.matrix)
            elif args.type == "uniform":
                T = noise_mod.uniform_matrix(args.k, args.level)
            else:
                T = noise_mod.single_flip_matrix(args.k, args.level)
            noisy = noise_mod.inject(ds.clean_labels, T, args.seed)
            out = dataclasses.replace(ds, noisy_labels=noisy)
    except NoisyLabError as e:
        print(f"inject: {e}", file=sys.stderr)
        return EXIT_FAILURE
    data_mod.write_jsonl(out, args.output)
    realized = noise_mod.fdr(out.clean_labels, out.noisy_labels)
    print(f"fdr: {realized:.4f}")
    print(f"diag_dominant: {str(noise_mod.diag_dominant(T)).lower()}")
    return EXIT_OK


def run_sweep(cfg: dict) -> int:
    """Train every strategy x trial and write artifacts; returns exit code."""
    splits, textual, ds_cfg = _build_dataset(cfg)
    splits, true_T, realized_fdr = _apply_noise(splits, textual, cfg.get("noise"), ds_cfg)
    train_ds, val_ds, test_ds = splits
    tcfg_dict = dict(cfg["train"])
    base_seed = int(tcfg_dict.pop("seed", 0))
    trials = int(cfg.get("trials", 1))
    out_root = Path(cfg["output_dir"])
    failures = 0
    for s_cfg in cfg["strategies"]:
        strategy = _build_strategy(s_cfg, true_T, realized_fdr)
        for trial in range(trials):
            run_dir = out_root / strategy.name / f"trial_{trial}"
            run_dir.mkdir(parents=True, exist_ok=True)
            tcfg = trainer_mod.TrainConfig(seed=base_seed + trial, **tcfg_dict)
            try:
                record, best_p, final_p = trainer_mod.train(
                    train_ds, val_ds, test_ds, strategy, tcfg
                )
                snap = diag_mod.snapshot_losses(best_p, train_ds, step=record.best_step)
                record.write_jsonl(run_dir / "record.jsonl")
                model_mod.save_checkpoint(best_p, run_dir / "best.npz")
                model_mod.save_checkpoint(final_p, run_dir / "final.npz")
                np.savez(
                    run_dir / "snapshot.npz",
                    losses=snap.losses,
                    is_wrong=snap.is_wrong,
                    step=snap.step,
                )
                summary = {"strategy": strategy.name, "trial": trial}
                summary.update(record.summary())
                try:
                    summary["auc"] = diag_mod.roc(snap).auc
                except DegenerateClassError:
                    summary["auc"] = None
                with open(run_dir / "summary.json", "w", encoding="utf-8") as f:
                    json.dump(summary, f, indent=2, sort_keys=True)
                    f.write("\n")
                marker = run_dir / FAILURE_MARKER
                if marker.exists():
                    marker.unlink()
            except NoisyLabError as e:
                (run_dir / FAILURE_MARKER).write_text(str(e) + "\n", encoding="utf-8")
                print(f"run {strategy.name}/trial_{trial} failed: {e}", file=sys.stderr)
                failures += 1
    return EXIT_FAILURE if failures else EXIT_OK


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except NoisyLabError as e:
        print(f"run: {e}", file=sys.stderr)
        return EXIT_USAGE
    return run_sweep(cfg)


def _collect_summaries(run_dirs):
    summaries = []
    for root in run_dirs:
        for path in sorted(Path(root).rglob("summary.json")):
            run_dir = path.parent
            if (run_dir / FAILURE_MARKER).exists():
                print(f"report: skipping failed run {run_dir}", file=sys.stderr)
                continue
            with open(path, encoding="utf-8") as f:
                summaries.append(json.load(f))
    return summaries


def aggregate_report(summaries: list[dict]) -> list[dict]:
    """Per strategy: mean +/- sample std of best clean-test accuracy (in %),
    mean memorization gap (best - final), and mean AUC."""
    by_strategy: dict[str, list[dict]] = {}
    for s in summaries:
        by_strategy.setdefault(s["strategy"], []).append(s)
    rows = []
    for name in sorted(by_strategy):
        group = by_strategy[name]
        accs = np.array([s["best_test_acc"] for s in group]) * 100.0
        gaps = np.array(
            [s["best_test_acc"] - s["final_test_acc"] for s in group]
        ) * 100.0
        aucs = [s["auc"] for s in group if s.get("auc") is not None]
        if len(accs) == 1:
            print(f"report: single trial for {name}; std reported as 0.00", file=sys.stderr)
            std = 0.0
        else:
            std = float(np.std(accs, ddof=1))
        rows.append(
            {
                "strategy": name,
                "trials": len(group),
                "best_test_acc": f"{float(np.mean(accs)):.2f}±{std:.2f}",
                "memorization_gap": f"{float(np.mean(gaps)):.2f}",
                "auc": f"{float(np.mean(aucs)):.4f}" if aucs else "",
            }
        )
    return rows


def cmd_report(args) -> int:
    summaries = _collect_summaries(args.run_dirs)
    if not summaries:
        print("report: no completed runs found", file=sys.stderr)
        return EXIT_FAILURE
    rows = aggregate_report(summaries)
    out = open(args.output, "w", newline="", encoding="utf-8") if args.output else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["strategy", "trials", "best_test_acc", "memorization_gap", "auc"])
        for r in rows:
            w.writerow(
                [r["strategy"], r["trials"], r["best_test_acc"], r["memorization_gap"], r["auc"]]
            )
    finally:
        if args.output:
            out.close()
    return EXIT_OK


def cmd_diagnose(args) -> int:
    run_dir = Path(args.run_dir)
    snap_path = run_dir / "snapshot.npz"
    if not snap_path.exists():
        print(f"diagnose: no loss snapshot in {run_dir}", file=sys.stderr)
        return EXIT_FAILURE
    with np.load(snap_path) as z:
        snap = diag_mod.LossSnapshot(
            losses=z["losses"], is_wrong=z["is_wrong"], step=int(z["step"])
        )
    diag_mod.write_histogram_csv(snap, run_dir / "histogram.csv", bins=args.bins)
    try:
        curve = diag_mod.roc(snap)
    except DegenerateClassError as e:
        print(f"diagnose: {e}", file=sys.stderr)
        return EXIT_DEGENERATE
    diag_mod.write_roc_csv(curve, run_dir / "roc.csv")
    summary_path = run_dir / "summary.json"
    if summary_path.exists():
        with open(summary_path, encoding="utf-8") as f:
            summary = json.load(f)
        record = trainer_mod.RunRecord(
            entries=[
                trainer_mod.EvalEntry(
                    step=summary["best_step"],
                    train_loss=math.nan,
                    val_acc=summary["best_val_acc"],
                    test_acc=summary["best_test_acc"],
                ),
                trainer_mod.EvalEntry(
                    step=summary["final_step"],
                    train_loss=math.nan,
                    val_acc=math.nan,
                    test_acc=summary["final_test_acc"],
                ),
            ],
            best_step=summary["best_step"],
            final_step=summary["final_step"],
        )
        rows = diag_mod.separability_report([(summary["strategy"], record, snap)])
        diag_mod.write_report_csv(rows, run_dir / "report.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noisylab", description="label-noise experiment runner"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inject", help="corrupt a clean JSONL dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--type", choices=["uniform", "sflip", "matrix", "rules"], required=True)
    p.add_argument("--level", type=float)
    p.add_argument("--matrix")
    p.add_argument("--rules")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("run", help="run a strategy sweep from a config file")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="aggregate run summaries into a CSV")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--output", default=os.environ.get("NOISYLAB_OUT"))
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("diagnose", help="histogram/ROC CSVs for a finished run")
    p.add_argument("run_dir")
    p.add_argument("--bins", type=int, default=50)
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
