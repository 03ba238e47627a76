"""Command-line interface: ``mirrams <command> [options]``.

Options may also come from an INI config file (``--config FILE``) whose
``[run]`` section uses the option names with underscores, for example::

    [run]
    dataset = synthetic
    alpha_tr = 0.1
    alpha_ts = 0.1, 0.3
    r = 0, 0.3
    lambda1 = 1
    seeds = 0, 1, 2

Flags given on the command line override the file.  List-valued options
take comma-separated values.  Every run writes ``manifest.json`` next to its
outputs; ``mirrams replay`` reruns a manifest and checks that each output
file is reproduced byte for byte.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import shutil
import sys
import tempfile
import time
from pathlib import Path

from . import __version__
from .benchmarks import BENCHMARKS, DatasetUnavailable, load_benchmark, make_surrogate
from .data import (
    DataError,
    SchemaError,
    SplitSpec,
    fit_apply_preprocessor,
    format_schema,
    load_csv,
    load_schema,
    make_synthetic,
    save_split_manifest,
    split_indices,
)
from .milab import run_suite
from .missingness import Ar1Copula, ShiftScenario, sample_shift_masks, save_mask
from .model import MirramsModel
from .objective import LossConfig, loss_grid
from .report import load_records, write_report
from .trainer import ExperimentSpec, TrainConfig, evaluate, prepare, run_experiment, summarize

MANIFEST = "manifest.json"
INCOMPLETE = "INCOMPLETE"

# Option defaults; strings are parsed by the converters below.
DEFAULTS = {
    "dataset": None,
    "schema": None,
    "scenario": None,
    "alpha_tr": "0.1",
    "alpha_ts": "0.1",
    "alpha": None,
    "rho": "0.7",
    "r": None,
    "lambda1": None,
    "lambda2": None,
    "tau": None,
    "seed": "0",
    "seeds": None,
    "epochs": "200",
    "labeled_frac": "0.1",
    "lr": "1e-4",
    "batch_size": None,
    "patience": "30",
    "preset": "desk",
    "split_seed": "0",
    "n": None,
    "p": None,
    "checkpoint": None,
    "threads": None,
}

# Single-run defaults for the loss, and the full grids for ``grid``.
TRAIN_LOSS = {"r": "0.3", "lambda1": "1", "lambda2": "1", "tau": "0.9"}
GRID_LOSS = {"r": "0, 0.1, 0.2, 0.3, 0.4", "lambda1": "0, 1, 5, 10, 15, 20",
             "lambda2": "0, 1, 5, 10, 15, 20", "tau": "0.8, 0.9, 0.95, 0.99"}


class UsageError(Exception):
    pass


def floats(text) -> list[float]:
    return [float(t) for t in str(text).split(",") if t.strip()]


def ints(text) -> list[int]:
    return [int(t) for t in str(text).split(",") if t.strip()]


def sha256(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# -- option resolution ------------------------------------------------------------


def resolve(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS)
    if args.command in ("train", "ssl"):
        cfg.update(TRAIN_LOSS)
    elif args.command == "grid":
        cfg.update(GRID_LOSS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        parser.read(path)
        if "run" not in parser:
            raise UsageError(f"{path}: missing [run] section")
        for key, value in parser["run"].items():
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise UsageError(f"{path}: unknown option {key!r}")
            cfg[key] = value
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def load_dataset(cfg: dict):
    """Resolve ``--dataset``: a CSV path, a benchmark name, ``surrogate:NAME`` or ``synthetic``.

    Returns the dataset and a description of the inputs for the manifest.
    """
    name = cfg["dataset"]
    if not name:
        raise UsageError("--dataset is required")
    if name == "synthetic":
        return make_synthetic(n=600, p_cont=6, p_cat=2, seed=0), {"dataset": "synthetic"}
    if name.startswith("surrogate:"):
        key = name.split(":", 1)[1]
        if key not in BENCHMARKS:
            raise UsageError(f"unknown surrogate {key!r}; known: {sorted(BENCHMARKS)}")
        return make_surrogate(key), {"dataset": name}
    if name in BENCHMARKS and not cfg["schema"]:
        ds = load_benchmark(name)
        return ds, {"dataset": name}
    path = Path(name)
    if not path.is_file():
        raise UsageError(f"dataset file not found: {path}")
    if not cfg["schema"]:
        raise UsageError("--schema is required with a CSV dataset")
    schema_path = Path(cfg["schema"])
    if not schema_path.is_file():
        raise UsageError(f"schema file not found: {schema_path}")
    ds, _ = load_csv(path, load_schema(schema_path))
    inputs = {"dataset": {"path": str(path), "sha256": sha256(path)},
              "schema": {"path": str(schema_path), "sha256": sha256(schema_path)}}
    return ds, inputs


def scenario_params(cfg: dict) -> dict:
    """rho, alpha_tr, alpha_ts and scenario seed, from ``--scenario`` JSON or flags."""
    if cfg["scenario"]:
        scen = ShiftScenario.load(cfg["scenario"])
        ts = floats(cfg["alpha_ts"]) if cfg["alpha_ts"] != DEFAULTS["alpha_ts"] else [scen.alpha_ts]
        return {"rho": scen.rho, "alpha_tr": scen.alpha_tr, "alpha_ts": ts, "scenario_seed": scen.seed}
    return {"rho": float(cfg["rho"]), "alpha_tr": float(cfg["alpha_tr"]),
            "alpha_ts": floats(cfg["alpha_ts"]), "scenario_seed": int(cfg["seed"])}


def experiment_spec(cfg: dict, grid: list[LossConfig], mode: str, p: int) -> ExperimentSpec:
    seeds = ints(cfg["seeds"]) if cfg["seeds"] else [int(cfg["seed"])]
    batch = int(cfg["batch_size"]) if cfg["batch_size"] else (64 if p > 100 else 256)
    tc = TrainConfig(lr=float(cfg["lr"]), batch_size=batch, max_epochs=int(cfg["epochs"]),
                     patience=int(cfg["patience"]))
    return ExperimentSpec(grid=tuple(grid), seeds=tuple(seeds), mode=mode,
                          labeled_frac=float(cfg["labeled_frac"]), preset=cfg["preset"], train=tc,
                          split_seed=int(cfg["split_seed"]), dataset=str(cfg["dataset"]),
                          **scenario_params(cfg))


def loss_configs(cfg: dict, single: bool) -> list[LossConfig]:
    grid = loss_grid(floats(cfg["r"]), floats(cfg["lambda1"]), floats(cfg["lambda2"]), floats(cfg["tau"]))
    if single and len(grid) > 1:
        raise UsageError("train/ssl take one value per loss option; use `grid` for several")
    return grid


# -- commands ---------------------------------------------------------------------


def cmd_prepare(cfg: dict, out: Path) -> dict:
    ds, inputs = load_dataset(cfg)
    spec = SplitSpec(seed=int(cfg["split_seed"]))
    parts = split_indices(ds.y, spec)
    pre, *_ = fit_apply_preprocessor(*(ds.subset(i) for i in parts))
    save_split_manifest(out / "split.json", parts, spec)
    (out / "preprocessor.json").write_text(json.dumps(pre.to_dict(), indent=2))
    (out / "schema.schema").write_text(format_schema(ds.schema))
    print(f"prepared {ds.n} rows: train {parts[0].size}, val {parts[1].size}, test {parts[2].size}")
    return inputs


def cmd_simulate(cfg: dict, out: Path) -> dict:
    seed = int(cfg["seed"])
    if cfg["alpha"] is not None:
        if cfg["p"] is None or cfg["n"] is None:
            raise UsageError("simulate --alpha needs --p and --n")
        p, n = int(cfg["p"]), int(cfg["n"])
        scen = ShiftScenario(p, float(cfg["rho"]), float(cfg["alpha"]), float(cfg["alpha"]), seed)
        cop = Ar1Copula(p, scen.rho, float(cfg["alpha"]), scen.perm_tr, seed)
        mask = sample_shift_masks(cop, n)
        save_mask(out / "mask.csv", mask)
        scen.save(out / "scenario.json")
        print(f"mask {n}x{p}: missing rate {1 - mask.mean():.4f}")
        return {}
    ds, inputs = load_dataset(cfg)
    params = scenario_params(cfg)
    spec = ExperimentSpec(grid=(LossConfig(),), alpha_ts=params["alpha_ts"], rho=params["rho"],
                          alpha_tr=params["alpha_tr"], scenario_seed=params["scenario_seed"],
                          split_seed=int(cfg["split_seed"]))
    prep = prepare(ds, spec)
    save_mask(out / "train_mask.csv", prep.train.mask)
    save_mask(out / "val_mask.csv", prep.val.mask)
    for a, t in prep.tests.items():
        save_mask(out / f"test_mask_{a:g}.csv", t.mask)
    prep.scenario.save(out / "scenario.json")
    print(f"masks written for {ds.n} rows, p={ds.p}")
    return inputs


def _run(cfg: dict, out: Path, mode: str, single: bool, method: str) -> dict:
    ds, inputs = load_dataset(cfg)
    spec = experiment_spec(cfg, loss_configs(cfg, single), mode, ds.p)
    threads = int(cfg["threads"]) if cfg["threads"] else None

    def save(seed, res):
        d = out / f"seed{seed}"
        d.mkdir(exist_ok=True)
        res.model.save(d / "model.npz")
        res.train_result.log.write_csv(d / "train_log.csv")

    result = run_experiment(ds, spec, threads=threads, on_seed=save)
    record = {"method": method, "alpha_tr": spec.alpha_tr, "dataset": spec.dataset, "mode": mode,
              "test": result.summary(), "val": summarize(result.val_auc()),
              "selected": {str(o.seed): o.selected.to_dict() for o in result.outcomes}}
    (out / "results.json").write_text(json.dumps([record], indent=2))
    if not single:
        with (out / "grid.csv").open("w", newline="") as fh:
            fields = ["seed", "r", "lambda1", "lambda2", "tau", "share_mask", "val", "best_epoch",
                      "selected", "error"]
            w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
            w.writeheader()
            for o in result.outcomes:
                for row in o.grid:
                    w.writerow({"seed": o.seed, **row, "val": repr(row["val"])})
    timing = {str(o.seed): round(o.seconds, 2) for o in result.outcomes}
    (out / "timing.txt").write_text(json.dumps(timing) + "\n")
    for a, st in record["test"].items():
        print(f"alpha_ts={a}: test AUC {st['mean']:.4f} +/- {st['std']:.4f} over {len(st['values'])} seed(s)")
    return {**inputs, "spec": spec.to_dict()}


def cmd_train(cfg: dict, out: Path) -> dict:
    return _run(cfg, out, "supervised", True, "MIRRAMS")


def cmd_grid(cfg: dict, out: Path) -> dict:
    return _run(cfg, out, "supervised", False, "MIRRAMS (grid)")


def cmd_ssl(cfg: dict, out: Path) -> dict:
    return _run(cfg, out, "ssl", True, "SSL-MIRRAMS")


def cmd_eval(cfg: dict, out: Path) -> dict:
    if not cfg["checkpoint"]:
        raise UsageError("eval needs --checkpoint")
    ckpt = Path(cfg["checkpoint"])
    if not ckpt.is_file():
        raise UsageError(f"checkpoint not found: {ckpt}")
    ds, inputs = load_dataset(cfg)
    model = MirramsModel.load(ckpt)
    params = scenario_params(cfg)
    spec = ExperimentSpec(grid=(LossConfig(),), split_seed=int(cfg["split_seed"]), **params)
    prep = prepare(ds, spec)
    metrics = {f"{a:g}": {"auc": r.auc, "accuracy": r.accuracy}
               for a, r in ((a, evaluate(model, t)) for a, t in prep.tests.items())}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2))
    for a, m in metrics.items():
        print(f"alpha_ts={a}: AUC {m['auc']:.4f}, accuracy {m['accuracy']:.4f}")
    return {**inputs, "checkpoint": {"path": str(ckpt), "sha256": sha256(ckpt)}}


def cmd_verify_theory(systems: int, seed: int) -> int:
    reports = run_suite(systems, seed)
    passed = sum(r.passed for r in reports)
    worst = max(r.identity_gap for r in reports)
    print(f"{passed}/{systems} pass (largest |Delta - E[KL]| = {worst:.2e})")
    return 0 if passed == systems else 1


def cmd_report(inputs: list[str], out: Path) -> None:
    records = load_records(inputs)
    table, chart = write_report(records, out)
    print(f"wrote {table} and {chart}")


COMMANDS = {"prepare": cmd_prepare, "simulate": cmd_simulate, "train": cmd_train, "grid": cmd_grid,
            "ssl": cmd_ssl, "eval": cmd_eval}


# -- manifests ----------------------------------------------------------------------


def run_tracked(command: str, cfg: dict, out: Path) -> Path:
    """Run a command into ``out`` and write its manifest.

    An ``INCOMPLETE`` marker sits in ``out`` until the run succeeds.
    """
    out.mkdir(parents=True, exist_ok=True)
    marker = out / INCOMPLETE
    marker.write_text(f"{command} started\n")
    t0 = time.perf_counter()
    inputs = COMMANDS[command](cfg, out)
    outputs = {str(p.relative_to(out)): sha256(p) for p in sorted(out.rglob("*"))
               if p.is_file() and p.name not in (MANIFEST, INCOMPLETE, "timing.txt")}
    seeds = ints(cfg["seeds"]) if cfg.get("seeds") else [int(cfg["seed"])]
    manifest = {"format": "mirrams-manifest", "version": 1, "package": __version__, "command": command,
                "config": cfg, "seeds": seeds, "inputs": inputs, "outputs": outputs,
                "seconds": round(time.perf_counter() - t0, 2)}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, default=str))
    marker.unlink()
    return out / MANIFEST


def replay(manifest_path: Path, out: Path | None) -> int:
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "mirrams-manifest":
        raise UsageError(f"{manifest_path}: not a run manifest")
    tmp = None
    if out is None:
        tmp = tempfile.mkdtemp(prefix="mirrams-replay-")
        out = Path(tmp)
    try:
        run_tracked(manifest["command"], manifest["config"], out)
        fresh = json.loads((out / MANIFEST).read_text())["outputs"]
        bad = 0
        for name, digest in manifest["outputs"].items():
            ok = fresh.get(name) == digest
            bad += not ok
            print(f"{'same' if ok else 'DIFFERS'}  {name}")
        extra = sorted(set(fresh) - set(manifest["outputs"]))
        for name in extra:
            print(f"NEW  {name}")
        print("replay: bit-exact" if not bad and not extra else f"replay: {bad + len(extra)} file(s) differ")
        return 0 if not bad and not extra else 1
    finally:
        if tmp is not None:
            shutil.rmtree(tmp, ignore_errors=True)


# -- argument parsing ---------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run options (override --config)")
    g.add_argument("--config", help="INI file with a [run] section")
    g.add_argument("--dataset", help="CSV path, benchmark name, surrogate:NAME or 'synthetic'")
    g.add_argument("--schema", help="schema file for a CSV dataset")
    g.add_argument("--scenario", help="scenario JSON (rho, alpha_tr, alpha_ts, seed, permutations)")
    g.add_argument("--alpha-tr", dest="alpha_tr", help="training missing rate")
    g.add_argument("--alpha-ts", dest="alpha_ts", help="test missing rate(s), comma-separated")
    g.add_argument("--rho", help="AR(1) correlation (default 0.7)")
    g.add_argument("--r", help="extra masking ratio(s)")
    g.add_argument("--lambda1", help="weight(s) of the masked-view cross-entropy")
    g.add_argument("--lambda2", help="weight(s) of the consistency term")
    g.add_argument("--tau", help="confidence threshold(s)")
    g.add_argument("--seed", help="scenario seed, and run seed when --seeds is absent")
    g.add_argument("--seeds", help="run seeds, comma-separated")
    g.add_argument("--epochs", help="maximum epochs (default 200)")
    g.add_argument("--labeled-frac", dest="labeled_frac", help="labeled share in ssl mode (default 0.1)")
    g.add_argument("--lr", help="Adam learning rate (default 1e-4)")
    g.add_argument("--batch-size", dest="batch_size", help="default 256, or 64 when p > 100")
    g.add_argument("--patience", help="early-stopping patience in epochs (default 30)")
    g.add_argument("--preset", help="architecture preset (default desk)")
    g.add_argument("--split-seed", dest="split_seed", help="seed of the train/val/test split")
    g.add_argument("--threads", help="parallel grid cells (default $MIRRAMS_THREADS or 1)")
    g.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mirrams", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"mirrams {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "prepare": "split a dataset and fit the preprocessor",
        "simulate": "write missingness masks (one copula with --alpha, or a full scenario)",
        "train": "train one configuration over one or more seeds",
        "grid": "grid search over r, lambda1, lambda2, tau with validation selection",
        "ssl": "semi-supervised training with a labeled fraction",
        "eval": "evaluate a checkpoint on the test split under the test scenario",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        _common(p)
        if name == "simulate":
            p.add_argument("--alpha", help="missing rate of a single copula")
            p.add_argument("--n", help="rows")
            p.add_argument("--p", help="columns")
        if name == "eval":
            p.add_argument("--checkpoint", help="model.npz written by train/grid/ssl")
    p = sub.add_parser("verify-theory", help="check the information-loss identity on random systems")
    p.add_argument("--systems", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p = sub.add_parser("report", help="results.json files -> table CSV and AUC chart SVG")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p = sub.add_parser("replay", help="rerun a manifest and compare every output")
    p.add_argument("manifest")
    p.add_argument("--out", help="directory for the rerun (default: a temporary one)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        if args.command == "verify-theory":
            return cmd_verify_theory(args.systems, args.seed)
        if args.command == "report":
            cmd_report(args.inputs, Path(args.out))
            return 0
        if args.command == "replay":
            path = Path(args.manifest)
            if not path.is_file():
                raise UsageError(f"manifest not found: {path}")
            return replay(path, Path(args.out) if args.out else None)
        cfg = resolve(args)
        run_tracked(args.command, cfg, Path(args.out))
        return 0
    except (UsageError, DataError, SchemaError, DatasetUnavailable, ValueError, KeyError) as exc:
        print(f"mirrams {args.command}: error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, UsageError) else 1


if __name__ == "__main__":
    sys.exit(main())
