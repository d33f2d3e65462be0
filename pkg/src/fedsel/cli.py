"""Experiment runner CLI.

Subcommands:

* ``run``      — train one configuration across repeated k-fold splits; writes
  a per-round metrics CSV, a JSON summary, and a budget ledger dump.
* ``audit``    — machine-check the privacy guarantees (exact ratio grid,
  normalization, sampler consistency, perturbation ratios); exit 1 on any
  violation.
* ``compare``  — run several configurations on the same data/seed protocol and
  tabulate accuracy gains against the first one.
* ``gen-data`` — write a synthetic dataset in the sparse text format.

Exit codes: 0 ok, 1 audit/assertion failure, 2 usage or configuration error.
Configs are flat ``key=value`` text files; command-line flags override them.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import audit
from .data import generate_synthetic, parse_dataset_spec, kfold_split, save_sparse_text, SyntheticSpec
from .models import MODEL_NAMES
from .perturbation import PERTURBATION_BACKENDS
from .selection import SELECTION_MECHANISMS
from .server import SOLUTIONS, TrainingConfig, metrics_to_csv, train

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

# experiment-level keys that sit outside TrainingConfig
_EXTRA_KEYS = {"dataset": str, "repeats": int, "folds": int, "out": str, "name": str}

_TRAINING_KEYS = {f.name: f for f in fields(TrainingConfig)}


class ConfigError(ValueError):
    pass


_STRING_KEYS = {"solution", "selection", "perturbation", "model", "dataset", "out", "name"}


def _coerce(key: str, text: str):
    if key in _STRING_KEYS:
        return text
    if key == "mu":
        return text if text == "auto" else float(text)
    if key == "batch_size":
        return None if text in ("none", "") else int(text)
    if key in ("epochs", "eval_every", "jobs", "seed", "repeats", "folds"):
        return int(text)
    if key == "control_full_value_budget":
        return text.lower() in ("1", "true", "yes")
    return float(text)


def read_config_file(path: str) -> dict:
    """Parse a flat key=value config file; '#' starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, text = (part.strip() for part in line.split("=", 1))
        if key not in _TRAINING_KEYS and key not in _EXTRA_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _coerce(key, text)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from None
    return values


def _merge_config(file_values: dict, args: argparse.Namespace) -> dict:
    merged = dict(file_values)
    for key in list(_TRAINING_KEYS) + list(_EXTRA_KEYS):
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    return merged


def _experiment(merged: dict) -> tuple[TrainingConfig, dict]:
    extras = {
        "dataset": merged.pop("dataset", None),
        "repeats": merged.pop("repeats", 1),
        "folds": merged.pop("folds", 5),
        "out": merged.pop("out", None),
        "name": merged.pop("name", None),
    }
    if not extras["dataset"]:
        raise ConfigError("no dataset given (use --dataset or a config file)")
    try:
        return TrainingConfig(**merged), extras
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--dataset", help="path to sparse text file, or syn:<d>,<n>,<c1>,<c2>[,<seed>]")
    parser.add_argument("--solution", choices=SOLUTIONS)
    parser.add_argument("--select", dest="selection", choices=SELECTION_MECHANISMS)
    parser.add_argument("--perturb", dest="perturbation", choices=PERTURBATION_BACKENDS)
    parser.add_argument("--model", choices=MODEL_NAMES)
    parser.add_argument("--eps", dest="epsilon", type=float)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--mu", type=lambda s: s if s == "auto" else float(s))
    parser.add_argument("--theta", type=float)
    parser.add_argument("--hpf-constant", dest="hpf_constant", type=float)
    parser.add_argument("--k-frac", dest="k_fraction", type=float)
    parser.add_argument("--eta", type=float)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--l2", type=float)
    parser.add_argument("--m-frac", dest="m_fraction", type=float)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--compression-ratio", dest="compression_ratio", type=float)
    parser.add_argument("--control", dest="control_full_value_budget", action="store_const", const=True)
    parser.add_argument("--eval-every", dest="eval_every", type=int)
    parser.add_argument("--jobs", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--repeats", type=int)
    parser.add_argument("--folds", type=int)


def _run_splits(cfg: TrainingConfig, extras: dict):
    """Train across repeated k-fold splits; returns per-split results and CSV text."""
    dataset = parse_dataset_spec(extras["dataset"])
    splits = kfold_split(len(dataset), extras["folds"], extras["repeats"], seed=cfg.seed)
    header_written = False
    csv_parts: list[str] = []
    results = []
    for index, (train_idx, test_idx) in enumerate(splits):
        repeat, fold = divmod(index, extras["folds"])
        split_cfg = TrainingConfig(**{**cfg.__dict__, "seed": (cfg.seed, repeat, fold)})
        result = train(split_cfg, dataset.subset(train_idx), dataset.subset(test_idx))
        results.append(result)
        text = metrics_to_csv(result.metrics, prefix={"repeat": repeat, "fold": fold})
        csv_parts.append(text if not header_written else text.split("\n", 1)[1])
        header_written = True
    return dataset, results, "".join(csv_parts)


def _summary(results) -> dict:
    final_acc = [r.metrics[-1].acc_test for r in results]
    final_mis = [r.metrics[-1].misclass for r in results]
    return {
        "runs": len(results),
        "mean_acc_test": float(np.mean(final_acc)),
        "std_acc_test": float(np.std(final_acc)),
        "mean_misclass": float(np.mean(final_mis)),
        "std_misclass": float(np.std(final_mis)),
        "mu": results[0].mu,
        "batch_size": results[0].batch_size,
        "iterations": results[0].metrics[-1].t,
    }


def _cmd_run(args) -> int:
    merged = _merge_config(read_config_file(args.config) if args.config else {}, args)
    cfg, extras = _experiment(merged)
    dataset, results, csv_text = _run_splits(cfg, extras)
    summary = _summary(results)
    summary["dataset"] = dataset.name
    summary["solution"] = cfg.solution

    out_dir = Path(extras["out"] or "fedsel-out")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.csv").write_text(csv_text, encoding="utf-8")
    (out_dir / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    (out_dir / "ledger.txt").write_text(results[0].ledger.dump(), encoding="utf-8")
    print(
        f"{cfg.solution} on {dataset.name}: acc_test "
        f"{summary['mean_acc_test']:.4f} +- {summary['std_acc_test']:.4f} "
        f"({summary['runs']} runs) -> {out_dir}"
    )
    return EXIT_OK


def _cmd_audit(args) -> int:
    failures = 0
    print("== selection LDP ratio grid ==")
    print(f"{'mech':>5} {'d':>3} {'k':>3} {'eps1':>6} {'max_ratio':>14} {'bound':>14} result")
    for row in audit.selection_grid(
        ds=args.d, ks=args.k, eps_values=args.eps1, mechanisms=tuple(args.mechanisms)
    ):
        ok = row.passed
        failures += 0 if ok else 1
        print(
            f"{row.mechanism:>5} {row.d:>3} {row.k:>3} {row.epsilon1:>6.2f} "
            f"{row.max_ratio:>14.9f} {row.bound:>14.9f} {'pass' if ok else 'FAIL'}"
        )

    print("== distribution normalization ==")
    for mechanism in args.mechanisms:
        err = audit.normalization_error(mechanism, d=6, k=2, epsilon1=1.0)
        ok = err <= audit.NORM_TOL
        failures += 0 if ok else 1
        print(f"{mechanism:>5} max |sum - 1| = {err:.3e} {'pass' if ok else 'FAIL'}")

    if args.samples > 0:
        print(f"== sampler vs exact distribution ({args.samples} draws) ==")
        rng = np.random.default_rng(args.seed if args.seed is not None else 0)
        for mechanism in args.mechanisms:
            dev = audit.sampling_consistency(mechanism, d=6, k=2, epsilon1=1.0, draws=args.samples, rng=rng)
            ok = dev <= 4.0
            failures += 0 if ok else 1
            print(f"{mechanism:>5} max deviation = {dev:.2f} standard errors {'pass' if ok else 'FAIL'}")

    print("== perturbation LDP ratios ==")
    for eps in args.eps2:
        for name in ("duchi", "pm", "hm"):
            ratio = audit.perturbation_ratio_check(name, eps)
            ok = ratio <= math.exp(eps) + audit.RATIO_TOL
            failures += 0 if ok else 1
            print(f"{name:>5} eps={eps:<5g} ratio {ratio:.9f} <= {math.exp(eps):.9f} {'pass' if ok else 'FAIL'}")

    print(f"{'AUDIT FAILED: ' + str(failures) + ' violation(s)' if failures else 'audit passed'}")
    return EXIT_FAILURE if failures else EXIT_OK


def _cmd_compare(args) -> int:
    configs = []
    for path in args.configs:
        merged = _merge_config(read_config_file(path), argparse.Namespace())
        cfg, extras = _experiment(merged)
        extras["name"] = extras["name"] or Path(path).stem
        configs.append((cfg, extras))
    reference = configs[0]
    for cfg, extras in configs[1:]:
        for key in ("dataset", "folds", "repeats"):
            if extras[key] != reference[1][key]:
                raise ConfigError(
                    f"configs disagree on {key}: {extras[key]!r} vs {reference[1][key]!r}"
                )
        if cfg.seed != reference[0].seed:
            raise ConfigError(f"configs disagree on seed: {cfg.seed} vs {reference[0].seed}")

    rows = []
    for cfg, extras in configs:
        _, results, _ = _run_splits(cfg, extras)
        summary = _summary(results)
        rows.append((extras["name"], summary["mean_acc_test"], summary["std_acc_test"]))

    base_acc = rows[0][1]
    print(f"{'config':<24} {'acc_test':>10} {'std':>10} {'gain_pp':>10}")
    for name, acc, std in rows:
        print(f"{name:<24} {acc:>10.4f} {std:>10.4f} {100 * (acc - base_acc):>+10.4f}")
    return EXIT_OK


def _cmd_gen_data(args) -> int:
    spec_text = args.spec
    if not spec_text.startswith("syn:"):
        raise ConfigError(f"gen-data expects a syn: spec, got {spec_text!r}")
    fields_ = spec_text[len("syn:") :].split(",")
    if len(fields_) not in (4, 5):
        raise ConfigError("expected syn:<d>,<n>,<c1>,<c2>[,<seed>]")
    spec = SyntheticSpec(
        d=int(fields_[0]),
        n=int(fields_[1]),
        c1=float(fields_[2]),
        c2=float(fields_[3]),
        seed=int(fields_[4]) if len(fields_) == 5 else 0,
    )
    dataset = generate_synthetic(spec)
    save_sparse_text(dataset, args.out)
    positive = float(np.mean(dataset.y > 0))
    print(f"wrote {dataset.name}: n={len(dataset)}, d={dataset.d}, positive fraction {positive:.3f} -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsel", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="train one configuration over CV splits")
    _add_config_flags(run_parser)
    run_parser.add_argument("--out", help="output directory (metrics.csv, summary.json, ledger.txt)")
    run_parser.set_defaults(func=_cmd_run)

    audit_parser = sub.add_parser("audit", help="machine-check the privacy guarantees")
    audit_parser.add_argument("--d", type=int, nargs="+", default=list(audit.DEFAULT_GRID_D))
    audit_parser.add_argument("--k", type=int, nargs="+", default=list(audit.DEFAULT_GRID_K))
    audit_parser.add_argument("--eps1", type=float, nargs="+", default=list(audit.DEFAULT_GRID_EPS))
    audit_parser.add_argument("--eps2", type=float, nargs="+", default=[0.5, 1.0, 2.0, 4.0])
    audit_parser.add_argument("--mechanisms", nargs="+", default=list(SELECTION_MECHANISMS))
    audit_parser.add_argument("--samples", type=int, default=1_000_000,
                              help="sampler-consistency draws per mechanism (0 skips)")
    audit_parser.add_argument("--seed", type=int)
    audit_parser.set_defaults(func=_cmd_audit)

    compare_parser = sub.add_parser("compare", help="tabulate accuracy gains between configs")
    compare_parser.add_argument("configs", nargs="+", help="config files sharing dataset and seed")
    compare_parser.set_defaults(func=_cmd_compare)

    gen_parser = sub.add_parser("gen-data", help="write a synthetic dataset file")
    gen_parser.add_argument("--spec", required=True, help="syn:<d>,<n>,<c1>,<c2>[,<seed>]")
    gen_parser.add_argument("--out", required=True)
    gen_parser.set_defaults(func=_cmd_gen_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
