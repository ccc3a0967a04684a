"""Config-driven runner: ``run``, ``compare`` and ``print-defaults``.

Configs are INI files with sections ``data``, ``noise``, ``model``, ``train``,
``vista`` and ``output``. Keys set to ``auto`` take the clean-label defaults
when no noise is configured and the noisy-label defaults otherwise.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from vista.analysis import (
    trajectory_report,
    write_eot_csv,
    write_lifespans_csv,
    write_trajectory_csv,
)
from vista.coverage import verify_claim1, write_predictions
from vista.data import (
    Dataset,
    NoiseSpec,
    SplitSpec,
    load_csv,
    make_gaussian_clusters,
    prepare_splits,
)
from vista.trainer import ExperimentResult, TrainConfig, oracle_early_stop, run_experiment

log = logging.getLogger("vista")

SCHEMA_VERSION = 1

# section -> key -> default (as config text)
DEFAULTS: dict[str, dict[str, str]] = {
    "data": {
        "source": "synthetic",
        "path": "",
        "num_classes": "3",
        "per_class": "200",
        "dim": "8",
        "spread": "1.0",
        "center_scale": "1.5",
        "data_seed": "100",
        "train_fraction": "0.8",
        "val_fraction": "0.1",
        "test_fraction": "0.1",
    },
    "noise": {"kind": "none", "rate": "0.0", "permutation": ""},
    "model": {"hidden": "32", "activation": "relu"},
    "train": {
        "method": "vista",
        "epochs": "100",
        "batch_size": "auto",
        "lr": "auto",
        "momentum": "0.9",
        "weight_decay": "5e-4",
        "lr_schedule": "auto",
        "lr_period": "40",
        "min_lr": "0.0",
        "per_batch_lr": "auto",
        "seed": "0",
    },
    "vista": {
        "weighting": "coverage",
        "smoothing_window": "3",
        "tau": "0.0",
        "tau_denominator": "validation",
        "beta": "exp:2",
        "ema": "false",
        "ema_blend": "0.01",
    },
    "output": {"out": "out", "name": "run", "diagnostics": "true", "spill_predictions": "false"},
}

REGIME_DEFAULTS = {
    "clean": {"batch_size": 32, "lr": 0.01, "lr_schedule": "cosine", "per_batch_lr": False},
    "noisy": {"batch_size": 64, "lr": 0.1, "lr_schedule": "cosine-warm-restarts", "per_batch_lr": True},
}

COMMENTS = {
    ("data", "source"): "synthetic | csv",
    ("data", "path"): "csv file with header f0,...,f{d-1},label (source = csv)",
    ("noise", "kind"): "none | symmetric | asymmetric",
    ("noise", "permutation"): "comma-separated class map for asymmetric noise; empty = c -> c+1 mod K",
    ("model", "hidden"): "comma-separated hidden layer widths",
    ("train", "method"): "vanilla | vista | vista-light",
    ("train", "batch_size"): "auto = 32 clean / 64 noisy",
    ("train", "lr"): "auto = 0.01 clean / 0.1 noisy",
    ("train", "lr_schedule"): "constant | cosine | cosine-warm-restarts; auto = cosine clean / warm restarts noisy",
    ("train", "per_batch_lr"): "auto = false clean / true noisy",
    ("vista", "weighting"): "coverage | accuracy-only | chronological-coverage | smoothed-coverage",
    ("vista", "tau_denominator"): "validation (delta/|V|) | gains (delta/sum delta)",
    ("vista", "beta"): "exp:<k> | linear | cosine | fix-<c>",
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    train: TrainConfig
    data: dict
    noise: NoiseSpec
    split: SplitSpec
    out: str = "out"
    name: str = "run"
    spill_predictions: bool = False
    sections: dict = field(default_factory=dict)

    def fingerprint(self) -> str:
        payload = json.dumps({"data": self.data, "noise": self.sections.get("noise", {})}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def defaults_text() -> str:
    lines = []
    for section, keys in DEFAULTS.items():
        lines.append(f"[{section}]")
        for key, value in keys.items():
            note = COMMENTS.get((section, key))
            lines.append(f"{key} = {value}" + (f"  ; {note}" if note else ""))
        lines.append("")
    return "\n".join(lines)


def _parse_bool(section: str, key: str, value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"[{section}] {key}: expected a boolean, got {value!r}")


def _num(section: str, key: str, value: str, kind=float):
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected {kind.__name__}, got {value!r}") from None


def parse_config_text(text: str) -> ExperimentSpec:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    raw: dict[str, dict[str, str]] = {s: dict(keys) for s, keys in DEFAULTS.items()}
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]")
        for key, value in parser.items(section):
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            raw[section][key] = value.strip()
    return _build_spec(raw)


def parse_config(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config_text(path.read_text())


def _build_spec(raw: dict[str, dict[str, str]]) -> ExperimentSpec:
    d, nz, mdl, tr, vi, out = (raw[s] for s in ("data", "noise", "model", "train", "vista", "output"))

    if d["source"] not in ("synthetic", "csv"):
        raise ConfigError(f"[data] source: expected synthetic or csv, got {d['source']!r}")
    if d["source"] == "csv" and not d["path"]:
        raise ConfigError("[data] path is required when source = csv")
    fractions = [_num("data", k, d[k]) for k in ("train_fraction", "val_fraction", "test_fraction")]
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"[data] split fractions must sum to 1, got {sum(fractions)}")
    if any(f <= 0 for f in fractions):
        raise ConfigError("[data] split fractions must be positive")
    data = {
        "source": d["source"],
        "path": d["path"],
        "num_classes": _num("data", "num_classes", d["num_classes"], int),
        "per_class": _num("data", "per_class", d["per_class"], int),
        "dim": _num("data", "dim", d["dim"], int),
        "spread": _num("data", "spread", d["spread"]),
        "center_scale": _num("data", "center_scale", d["center_scale"]),
        "data_seed": _num("data", "data_seed", d["data_seed"], int),
        "fractions": fractions,
    }

    perm = None
    if nz["permutation"]:
        perm = tuple(_num("noise", "permutation", p.strip(), int) for p in nz["permutation"].split(","))
    try:
        noise = NoiseSpec(nz["kind"], _num("noise", "rate", nz["rate"]), perm)
    except ValueError as exc:
        raise ConfigError(f"[noise] {exc}") from None
    regime = REGIME_DEFAULTS["noisy" if noise.kind != "none" and noise.rate > 0 else "clean"]

    def auto(key, kind):
        value = tr[key]
        if value == "auto":
            return regime[key]
        if kind is bool:
            return _parse_bool("train", key, value)
        return value if kind is str else _num("train", key, value, kind)

    if mdl["activation"] != "relu":
        raise ConfigError(f"[model] activation: only relu is supported, got {mdl['activation']!r}")
    try:
        hidden = tuple(int(h) for h in mdl["hidden"].split(",") if h.strip())
    except ValueError:
        raise ConfigError(f"[model] hidden: expected comma-separated integers, got {mdl['hidden']!r}") from None

    tau = _num("vista", "tau", vi["tau"])
    if tau < 0:
        raise ConfigError("[vista] tau must be >= 0")
    try:
        train = TrainConfig(
            method=tr["method"],
            weighting=vi["weighting"],
            smoothing_window=_num("vista", "smoothing_window", vi["smoothing_window"], int),
            tau=tau,
            tau_denominator=vi["tau_denominator"],
            beta=vi["beta"],
            epochs=_num("train", "epochs", tr["epochs"], int),
            hidden=hidden,
            batch_size=auto("batch_size", int),
            lr=auto("lr", float),
            momentum=_num("train", "momentum", tr["momentum"]),
            weight_decay=_num("train", "weight_decay", tr["weight_decay"]),
            lr_schedule=auto("lr_schedule", str),
            lr_period=_num("train", "lr_period", tr["lr_period"], int),
            min_lr=_num("train", "min_lr", tr["min_lr"]),
            per_batch_lr=auto("per_batch_lr", bool),
            seed=_num("train", "seed", tr["seed"], int),
            enable_ema_variant=_parse_bool("vista", "ema", vi["ema"]),
            ema_blend=_num("vista", "ema_blend", vi["ema_blend"]),
            diagnostics=_parse_bool("output", "diagnostics", out["diagnostics"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if train.tau_denominator not in ("validation", "gains"):
        raise ConfigError(f"[vista] tau_denominator: expected validation or gains, got {train.tau_denominator!r}")

    return ExperimentSpec(
        train=train,
        data=data,
        noise=noise,
        split=SplitSpec(*fractions),
        out=out["out"],
        name=out["name"],
        spill_predictions=_parse_bool("output", "spill_predictions", out["spill_predictions"]),
        sections=raw,
    )


def base_dataset(spec: ExperimentSpec) -> Dataset:
    d = spec.data
    if d["source"] == "csv":
        return load_csv(d["path"])
    return make_gaussian_clusters(
        d["num_classes"], d["per_class"], d["dim"], d["spread"], d["data_seed"], center_scale=d["center_scale"]
    )


def seeded_splits(spec: ExperimentSpec, seed: int, dataset: Dataset | None = None):
    """Train/val/test for one run seed; the seed drives split and noise draws."""
    dataset = base_dataset(spec) if dataset is None else dataset
    split_seed, noise_seed = (int(x) for x in np.random.SeedSequence(seed).generate_state(2))
    return prepare_splits(dataset, replace(spec.split, seed=split_seed), replace(spec.noise, seed=noise_seed))


def summarize(result: ExperimentResult, seed: int) -> dict:
    report = trajectory_report(result.coverage_history, result.sweep_history, result.active_history) if result.coverage_history else None
    best_epoch, best_test = oracle_early_stop(result.logs)
    final = result.logs[-1]
    return {
        "seed": seed,
        "status": "ok",
        "final_test_acc": final.test_accuracy,
        "final_val_acc": final.val_accuracy,
        "oracle_epoch": best_epoch,
        "oracle_test_acc": best_test,
        "mean_deviation_gap": report.mean_deviation_gap if report else None,
        "max_active_set": max(result.active_history, default=0),
        "claim1_holds": verify_claim1(result.sweep_history),
    }


def write_run_dir(result: ExperimentResult, run_dir: Path, seed: int, spill: bool = False) -> dict:
    run_dir.mkdir(parents=True, exist_ok=True)
    with (run_dir / "epochs.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = ["epoch", "train_loss", "train_acc", "val_acc", "test_acc", "beta", "active_set_size", "degenerate"]
        w.writerow(cols)
        for entry in result.logs:
            row = entry.row()
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
    if result.coverage_history:
        report = trajectory_report(result.coverage_history, result.sweep_history, result.active_history)
        write_trajectory_csv(report, run_dir / "trajectory.csv")
        write_lifespans_csv(result.sweep_history, run_dir / "lifespans.csv")
        write_eot_csv(result.coverage_history, report.eot_gains, run_dir / "eot_coverage.csv")
    if spill:
        ckpt_dir = run_dir / "ckpts"
        ckpt_dir.mkdir(exist_ok=True)
        if result.pool is not None:
            for epoch, rec in sorted(result.pool.records.items()):
                if rec.train_predictions is not None:
                    write_predictions(ckpt_dir / f"ckpt_{epoch}.pred", epoch, rec.train_predictions)
        for epoch, _, cov in result.coverage_history:
            (ckpt_dir / f"cov_{epoch}.bits").write_bytes(cov.to_bytes())
    summary = summarize(result, seed)
    on_disk = {**summary, "config": result.config.to_dict()}
    (run_dir / "summary.json").write_text(json.dumps(on_disk, indent=2, sort_keys=True) + "\n")
    return summary


def _mean_se(values: list[float]) -> dict:
    n = len(values)
    if n == 0:
        return {"mean": None, "se": None, "n": 0}
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return {"mean": mean, "se": se, "n": n}


AGGREGATED = ("final_test_acc", "oracle_test_acc", "mean_deviation_gap", "max_active_set")


def _run_one(spec: ExperimentSpec, seed: int, run_dir: Path) -> dict:
    train, val, test = seeded_splits(spec, seed)
    result = run_experiment(replace(spec.train, seed=seed), train, val, test)
    return write_run_dir(result, run_dir, seed, spec.spill_predictions)


def run_suite(spec: ExperimentSpec, seeds: list[int], out: str | Path | None = None, jobs: int = 1) -> dict:
    """Run every seed, write per-seed directories and ``manifest.json``."""
    if not seeds:
        raise ValueError("at least one seed is required")
    root = Path(out if out is not None else spec.out) / spec.name
    root.mkdir(parents=True, exist_ok=True)
    summaries: list[dict] = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_one, spec, s, root / str(s)) for s in seeds]
            outcomes = []
            for s, fut in zip(seeds, futures):
                try:
                    outcomes.append(fut.result())
                except Exception as exc:  # noqa: BLE001 - recorded in the manifest
                    outcomes.append({"seed": s, "status": "failed", "error": f"{type(exc).__name__}: {exc}"})
        summaries = outcomes
    else:
        for s in seeds:
            try:
                summaries.append(_run_one(spec, s, root / str(s)))
            except Exception as exc:  # noqa: BLE001 - recorded in the manifest
                log.error("seed %d failed: %s", s, exc)
                summaries.append({"seed": s, "status": "failed", "error": f"{type(exc).__name__}: {exc}"})
    ok = [s for s in summaries if s["status"] == "ok"]
    aggregate = {}
    for key in AGGREGATED:
        vals = [s[key] for s in ok if s.get(key) is not None]
        aggregate[key] = _mean_se(vals)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "name": spec.name,
        "method": spec.train.method,
        "dataset_fingerprint": spec.fingerprint(),
        "config": spec.sections,
        "seeds": list(seeds),
        "runs": summaries,
        "aggregate": aggregate,
        "status": "ok" if len(ok) == len(summaries) else "failed",
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


COMPARE_COLUMNS = ("name", "method", "final_acc", "final_acc_se", "oracle_es_acc", "oracle_es_acc_se",
                   "mean_deviation_gap", "max_active_set", "delta_final_acc", "delta_oracle_es_acc")


def compare(manifest_paths: list[str | Path]) -> list[dict]:
    """One row per manifest, in input order, with deltas against the first."""
    if len(manifest_paths) < 2:
        raise ValueError("compare needs at least two manifests")
    manifests = [json.loads(Path(p).read_text()) for p in manifest_paths]
    prints = {m["dataset_fingerprint"] for m in manifests}
    if len(prints) > 1:
        raise ValueError(f"incompatible dataset fingerprints: {sorted(prints)}")
    rows = []
    base = manifests[0]["aggregate"]
    for m in manifests:
        agg = m["aggregate"]
        rows.append({
            "name": m["name"],
            "method": m["method"],
            "final_acc": agg["final_test_acc"]["mean"],
            "final_acc_se": agg["final_test_acc"]["se"],
            "oracle_es_acc": agg["oracle_test_acc"]["mean"],
            "oracle_es_acc_se": agg["oracle_test_acc"]["se"],
            "mean_deviation_gap": agg["mean_deviation_gap"]["mean"],
            "max_active_set": agg["max_active_set"]["mean"],
            "delta_final_acc": agg["final_test_acc"]["mean"] - base["final_test_acc"]["mean"],
            "delta_oracle_es_acc": agg["oracle_test_acc"]["mean"] - base["oracle_test_acc"]["mean"],
        })
    return rows


def format_table(rows: list[dict]) -> str:
    def cell(v):
        if v is None:
            return "-"
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    table = [list(COMPARE_COLUMNS)] + [[cell(r[c]) for c in COMPARE_COLUMNS] for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(COMPARE_COLUMNS))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in table)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(COMPARE_COLUMNS), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vista", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one config over one or more seeds")
    run.add_argument("config")
    run.add_argument("--seeds", type=_parse_seeds, default=None, help="comma-separated, e.g. 1,2,3")
    run.add_argument("--out", default=None, help="output root (overrides [output] out)")
    run.add_argument("--name", default=None, help="run name (overrides [output] name)")
    run.add_argument("--jobs", type=int, default=1, help="seeds to run in parallel")

    cmp_ = sub.add_parser("compare", help="side-by-side table of manifests")
    cmp_.add_argument("manifests", nargs="+")
    cmp_.add_argument("--csv", default=None, help="write the CSV table here instead of stdout")

    sub.add_parser("print-defaults", help="print the default config")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")

    if args.command == "print-defaults":
        sys.stdout.write(defaults_text())
        return 0

    if args.command == "run":
        try:
            spec = parse_config(args.config)
        except ConfigError as exc:
            log.error("%s", exc)
            return 2
        if args.name:
            spec.name = args.name
        seeds = args.seeds or [spec.train.seed]
        manifest = run_suite(spec, seeds, args.out, args.jobs)
        for r in manifest["runs"]:
            if r["status"] == "ok":
                log.info("seed %d: final test %.4f, oracle-ES test %.4f (epoch %d), max |A_t| %d",
                         r["seed"], r["final_test_acc"], r["oracle_test_acc"], r["oracle_epoch"], r["max_active_set"])
        return 0 if manifest["status"] == "ok" else 1

    try:
        rows = compare(args.manifests)
    except (ValueError, OSError, KeyError) as exc:
        log.error("%s", exc)
        return 2
    print(format_table(rows))
    text = rows_to_csv(rows)
    if args.csv:
        Path(args.csv).write_text(text)
    else:
        print()
        print(text, end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
