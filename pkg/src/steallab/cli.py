"""Command-line entry point: ``steallab {train-victim,attack,sweep,report,replay}``.

Every command materializes its full configuration (built-in defaults, then the
task preset, then the config file, then flags) and writes it to
``manifest.json`` in the output directory before doing any work.
``steallab replay manifest.json`` re-executes a run from that file alone.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import itertools
import json
import logging
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import datasets as ds
from .attack import AttackConfig, AttackDiverged, EvalSet, run_attack, run_random_noise_baseline
from .metrics import REPORT_COLUMNS, MetricRow, ReportSchemaError, accuracy, append_rows, median, read_report
from .models import ClassifierSpec, GeneratorSpec, build_classifier, build_generator, load_model, save_model
from .oracle import VictimOracle
from .presets import get_preset
from .seeding import subseed
from .training import VictimTrainConfig, train_classifier

log = logging.getLogger("steallab")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3


class ConfigError(ValueError):
    """Invalid or incomplete configuration; the message names the field."""


# ---------------------------------------------------------------------------
# configuration layering
# ---------------------------------------------------------------------------

def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _drop_none(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


def load_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path}: top level must be an object")
    return data


def _check_section(cfg: dict, section: str, allowed: Sequence[str]) -> None:
    sec = cfg.get(section)
    if not isinstance(sec, dict):
        raise ConfigError(f"{section} must be an object")
    for key in sec:
        if key not in allowed:
            raise ConfigError(f"{section}.{key} is not a known field")


def _base_victim_defaults() -> dict:
    return {
        "preset": None,
        "seed": 0,
        "task": {},
        "unbalanced_counts": None,
        "victim": {"capacity": "small", "family": "mlp"},
        "victim_training": asdict(VictimTrainConfig()),
    }


def materialize_victim_config(preset: Optional[str], file_cfg: dict, flags: dict) -> dict:
    cfg = _base_victim_defaults()
    name = flags.get("preset") or file_cfg.get("preset") or preset
    if name:
        p = get_preset(name)
        cfg = deep_merge(cfg, {k: p[k] for k in ("task", "victim", "victim_training", "unbalanced_counts") if k in p})
        cfg["preset"] = name
    cfg = deep_merge(cfg, file_cfg)
    cfg = deep_merge(cfg, _drop_none(flags))
    task = cfg["task"]
    if "family" not in task:
        raise ConfigError("task.family is required")
    _check_section(cfg, "task", [f.name for f in fields(ds.TaskSpec)])
    _check_section(cfg, "victim", ("capacity", "family"))
    _check_section(cfg, "victim_training", [f.name for f in fields(VictimTrainConfig)])
    task.setdefault("seed", int(cfg["seed"]))
    try:
        spec = ds.TaskSpec(**task)
        cfg["task"] = asdict(spec)
        ClassifierSpec(spec.input_shape, spec.num_classes, **cfg["victim"])
        VictimTrainConfig(**cfg["victim_training"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _base_attack_defaults() -> dict:
    gen = {f.name: f.default for f in fields(GeneratorSpec) if f.name != "output_shape"}
    atk = {f.name: f.default for f in fields(AttackConfig) if f.name != "budget"}
    atk["generator_betas"] = list(atk["generator_betas"])
    atk["lr_milestones"] = list(atk["lr_milestones"])
    return {
        "preset": None,
        "victim_path": None,
        "eval_data_path": None,
        "baseline": None,
        "wall_clock": False,
        "clone": {"capacity": "small", "family": None},
        "generator": gen,
        "attack": atk,
    }


_ATTACK_FLAG_FIELDS = {
    "budget": "budget", "batch_size": "batch_size", "ng": "n_g", "nc": "n_c", "diversity": "diversity",
    "clone_loss": "clone_loss", "seed": "seed", "eval_every": "eval_every", "label_gradient": "label_gradient",
}


def attack_flag_overrides(ns: argparse.Namespace) -> dict:
    over: dict = {"attack": {}}
    for flag, name in _ATTACK_FLAG_FIELDS.items():
        val = getattr(ns, flag, None)
        if val is not None:
            over["attack"][name] = val
    for key in ("victim_path", "eval_data_path", "baseline", "preset"):
        val = getattr(ns, key, None)
        if val is not None:
            over[key] = val
    if getattr(ns, "wall_clock", False):
        over["wall_clock"] = True
    if getattr(ns, "clone_capacity", None):
        over["clone"] = {"capacity": ns.clone_capacity}
    if getattr(ns, "gen_blocks", None) is not None:
        over["generator"] = {"num_conv_blocks": ns.gen_blocks}
    return over


def _victim_manifest_preset(victim_path) -> Optional[str]:
    if not victim_path:
        return None
    mpath = Path(victim_path).parent / "manifest.json"
    if mpath.exists():
        try:
            return json.loads(mpath.read_text())["config"].get("preset")
        except (ValueError, KeyError):
            return None
    return None


def materialize_attack_config(file_cfg: dict, flags: dict) -> dict:
    cfg = _base_attack_defaults()
    victim_path = flags.get("victim_path") or file_cfg.get("victim_path")
    name = flags.get("preset") or file_cfg.get("preset") or _victim_manifest_preset(victim_path)
    if name:
        p = get_preset(name)
        cfg = deep_merge(cfg, {"clone": p["clone"], "generator": p["generator"], "attack": p["attack"]})
        cfg["preset"] = name
    cfg = deep_merge(cfg, file_cfg)
    cfg = deep_merge(cfg, flags)
    _check_section(cfg, "attack", [f.name for f in fields(AttackConfig)])
    _check_section(cfg, "generator", [f.name for f in fields(GeneratorSpec) if f.name != "output_shape"])
    _check_section(cfg, "clone", ("capacity", "family"))
    if cfg["victim_path"] is None:
        raise ConfigError("victim_path is required (--victim)")
    if "budget" not in cfg["attack"]:
        raise ConfigError("attack.budget is required (--budget)")
    if cfg["baseline"] not in (None, "random-noise"):
        raise ConfigError(f"baseline must be random-noise, got {cfg['baseline']!r}")
    cfg["victim_path"] = str(Path(cfg["victim_path"]).resolve())
    if cfg["eval_data_path"] is None:
        cfg["eval_data_path"] = str(Path(cfg["victim_path"]).parent / "test.stld")
    cfg["eval_data_path"] = str(Path(cfg["eval_data_path"]).resolve())
    try:
        cfg["attack"] = AttackConfig.from_dict(cfg["attack"]).to_dict()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"attack: {exc}") from None
    return cfg


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def write_manifest(out: Path, command: str, config: dict, artifacts: dict) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "tool_version": __version__,
        "seed": config.get("seed", config.get("attack", {}).get("seed")),
        "config": config,
        "artifacts": artifacts,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# train-victim
# ---------------------------------------------------------------------------

def execute_train_victim(cfg: dict, out: Path) -> dict:
    out = Path(out)
    artifacts = {"victim": str(out / "victim.stlm"), "train_data": str(out / "train.stld"),
                 "test_data": str(out / "test.stld"), "report": str(out / "victim_metrics.json")}
    write_manifest(out, "train-victim", cfg, artifacts)
    seed = int(cfg["seed"])
    spec = ds.TaskSpec(**cfg["task"])
    train, test = ds.generate(spec)
    if cfg.get("unbalanced_counts"):
        train = ds.make_unbalanced(train, cfg["unbalanced_counts"], subseed(seed, "unbalance"))
    ds.save(train, artifacts["train_data"])
    ds.save(test, artifacts["test_data"])
    model = build_classifier(ClassifierSpec(spec.input_shape, spec.num_classes, **cfg["victim"]),
                             subseed(seed, "victim-init"))
    train_acc = train_classifier(model, train, VictimTrainConfig(**cfg["victim_training"]),
                                 np.random.default_rng(subseed(seed, "victim-train")))
    test_acc = accuracy(model, test)
    digest = save_model(model, artifacts["victim"])
    result = {"train_accuracy": train_acc, "test_accuracy": test_acc, "victim_sha256": digest}
    Path(artifacts["report"]).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    log.info("victim train accuracy %.4f test accuracy %.4f", train_acc, test_acc)
    return result


# ---------------------------------------------------------------------------
# attack
# ---------------------------------------------------------------------------

def _zero_clock() -> float:
    return 0.0


def execute_attack(cfg: dict, out: Path) -> list[MetricRow]:
    out = Path(out)
    baseline = cfg["baseline"] == "random-noise"
    artifacts = {"victim": cfg["victim_path"], "dataset": cfg["eval_data_path"],
                 "clone": str(out / "clone.stlm"), "report": str(out / "metrics.csv"),
                 "generator": None if baseline else str(out / "generator.stlm")}
    write_manifest(out, "attack", cfg, artifacts)
    report = Path(artifacts["report"])
    if report.exists():
        report.unlink()

    config = AttackConfig.from_dict(cfg["attack"])
    victim = load_model(cfg["victim_path"])
    test = ds.load(cfg["eval_data_path"])
    eval_set = EvalSet.from_victim(victim, test)
    oracle = VictimOracle(victim, config.budget)

    clone_cfg = dict(cfg["clone"])
    if clone_cfg.get("family") is None:
        clone_cfg["family"] = victim.spec.family
    clone = build_classifier(ClassifierSpec(victim.spec.input_shape, victim.spec.num_classes, **clone_cfg),
                             subseed(config.seed, "clone-init"))
    clock = time.monotonic if cfg["wall_clock"] else _zero_clock
    extra = {"clone": clone_cfg, "victim_sha256": _file_digest(cfg["victim_path"])}

    def on_row(row: MetricRow) -> None:
        append_rows([row], report)

    common = dict(clock=clock, on_row=on_row, checkpoint_dir=out)
    if baseline:
        result = run_random_noise_baseline(config, oracle, clone, eval_set, run_id=f"random-noise-s{config.seed}",
                                           fingerprint_extra=extra, **common)
    else:
        extra["generator"] = cfg["generator"]
        gen = build_generator(GeneratorSpec(output_shape=victim.spec.input_shape, **cfg["generator"]),
                              subseed(config.seed, "generator-init"))
        result = run_attack(config, oracle, clone, gen, eval_set, run_id=f"db-dfms-s{config.seed}",
                            fingerprint_extra=extra, **common)
    return result.trace


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def parse_grid_items(items: Sequence[str]) -> dict[str, list]:
    grid: dict[str, list] = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"grid entry {item!r} must look like field=v1,v2")
        key, vals = item.split("=", 1)
        grid[key.strip()] = [json.loads(v) if _looks_json(v) else v for v in vals.split(",") if v != ""]
    return grid


def _looks_json(v: str) -> bool:
    try:
        json.loads(v)
        return True
    except ValueError:
        return False


def _grid_path(key: str) -> tuple[str, ...]:
    # bare names address attack fields; dotted names address any section
    return tuple(key.split(".")) if "." in key else ("attack", key)


def _slug(value) -> str:
    return re.sub(r"[^A-Za-z0-9.+-]", "_", str(value))


def expand_grid(base: dict, grid: dict[str, list]) -> list[tuple[str, dict]]:
    """Cartesian product of ``grid`` over ``base``; returns (cell name, override) pairs."""
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigError("sweep grid is empty")
    keys = list(grid)
    cells = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        over: dict = {}
        for key, val in zip(keys, combo):
            node = over
            path = _grid_path(key)
            for part in path[:-1]:
                node = node.setdefault(part, {})
            node[path[-1]] = val
        name = "_".join(f"{_grid_path(k)[-1]}={_slug(v)}" for k, v in zip(keys, combo))
        cells.append((name, deep_merge(base, over)))
    return cells


def plan_sweep(file_cfg: dict, flags: dict, grid: dict[str, list], out: Path) -> list[tuple[Path, dict]]:
    base = deep_merge(file_cfg, flags)
    plan = []
    seen: dict[Path, str] = {}
    for name, cell in expand_grid(base, grid):
        path = (out / name).resolve()
        if path in seen:
            raise ConfigError(f"sweep cells {seen[path]!r} and {name!r} would share output path {path}")
        seen[path] = name
        plan.append((out / name, materialize_attack_config(cell, {})))
    return plan


def _sweep_worker(args: tuple[dict, str]) -> str:
    cfg, out = args
    _setup_logging()
    execute_attack(cfg, Path(out))
    return str(Path(out) / "metrics.csv")


def execute_sweep(plan: list[tuple[Path, dict]], out: Path, jobs: int, command_cfg: dict) -> Path:
    out = Path(out)
    write_manifest(out, "sweep", command_cfg, {"cells": [str(p) for p, _ in plan],
                                                  "report": str(out / "combined.csv")})
    tasks = [(cfg, str(p)) for p, cfg in plan]
    if jobs <= 1:
        reports = [_sweep_worker(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_sweep_worker, tasks))
    combined = out / "combined.csv"
    if combined.exists():
        combined.unlink()
    for rpath in reports:
        append_rows(read_report(rpath), combined)
    return combined


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

SUMMARY_COLUMNS = ("config_fingerprint", "runs", "queries_used", "accuracy", "agreement",
                   "entropy_nats", "elapsed_s", "best_run_id", "best_agreement")


def summarize(rows: Sequence[MetricRow]) -> list[dict]:
    """Median of each run's final row, grouped by config fingerprint."""
    finals: dict[tuple[str, str], MetricRow] = {}
    for row in rows:
        key = (row.config_fingerprint, row.run_id)
        if key not in finals or row.queries_used >= finals[key].queries_used:
            finals[key] = row
    groups: dict[str, list[MetricRow]] = {}
    for (fp, _), row in sorted(finals.items()):
        groups.setdefault(fp, []).append(row)
    out = []
    for fp, runs in groups.items():
        best = max(runs, key=lambda r: (r.agreement, [-ord(c) for c in r.run_id]))
        out.append({
            "config_fingerprint": fp,
            "runs": len(runs),
            "queries_used": int(median([r.queries_used for r in runs])),
            "accuracy": median([r.accuracy for r in runs]),
            "agreement": median([r.agreement for r in runs]),
            "entropy_nats": median([r.entropy_nats for r in runs]),
            "elapsed_s": median([r.elapsed_s for r in runs]),
            "best_run_id": best.run_id,
            "best_agreement": best.agreement,
        })
    return out


def write_summary(summary: list[dict], stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for rec in summary:
        writer.writerow([f"{rec[c]:.6g}" if isinstance(rec[c], float) else rec[c] for c in SUMMARY_COLUMNS])


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_attack_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", dest="preset", help="task preset supplying desk-scale defaults")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--victim", dest="victim_path", help="victim model file from train-victim")
    p.add_argument("--eval-data", dest="eval_data_path", help="held-out dataset (default: test.stld beside the victim)")
    p.add_argument("--budget", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--ng", type=int)
    p.add_argument("--nc", type=int)
    p.add_argument("--diversity", choices=("batch", "sample", "label"))
    p.add_argument("--label-gradient", choices=("straight_through", "soft"))
    p.add_argument("--clone-loss", choices=("l1", "l2", "kl"))
    p.add_argument("--clone-capacity", choices=("tiny", "small", "medium"))
    p.add_argument("--gen-blocks", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--baseline", choices=("random-noise",))
    p.add_argument("--wall-clock", action="store_true",
                   help="record wall time in elapsed_s (metric CSVs are then not byte-reproducible)")
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="steallab", description="Data-free model stealing lab")
    parser.add_argument("--version", action="version", version=f"steallab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    tv = sub.add_parser("train-victim", help="train a victim classifier on a synthetic task")
    tv.add_argument("--task", dest="preset")
    tv.add_argument("--config")
    tv.add_argument("--seed", type=int)
    tv.add_argument("--out", required=True)

    _add_attack_flags(sub.add_parser("attack", help="steal a victim with DB-DFMS or the noise baseline"))

    sw = sub.add_parser("sweep", help="run a grid of attacks")
    _add_attack_flags(sw)
    sw.add_argument("--grid", action="append", default=[], metavar="FIELD=V1,V2",
                    help="grid axis; bare names are attack fields, dotted names address sections")
    sw.add_argument("--jobs", type=int, default=1)

    rp = sub.add_parser("report", help="merge metric CSVs and summarize medians over seeds")
    rp.add_argument("reports", nargs="+")
    rp.add_argument("--out", help="write the summary CSV here as well as to stdout")

    rr = sub.add_parser("replay", help="re-run a manifest")
    rr.add_argument("manifest")
    rr.add_argument("--out", help="output directory (default: the manifest's own directory)")
    return parser


def _setup_logging() -> None:
    level = os.environ.get("STEALLAB_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _replay(manifest_path: str, out: Optional[str]) -> int:
    manifest = json.loads(Path(manifest_path).read_text())
    target = Path(out) if out else Path(manifest_path).parent
    cmd, cfg = manifest["command"], manifest["config"]
    if cmd == "train-victim":
        execute_train_victim(cfg, target)
    elif cmd == "attack":
        execute_attack(cfg, target)
    elif cmd == "sweep":
        plan = plan_sweep(cfg["base"], {}, cfg["grid"], target)
        execute_sweep(plan, target, cfg.get("jobs", 1), cfg)
    else:
        raise ConfigError(f"manifest command {cmd!r} cannot be replayed")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    ns = build_parser().parse_args(argv)
    try:
        if ns.command == "train-victim":
            file_cfg = load_config_file(ns.config) if ns.config else {}
            cfg = materialize_victim_config(None, file_cfg, {"preset": ns.preset, "seed": ns.seed})
            result = execute_train_victim(cfg, Path(ns.out))
            print(json.dumps(result, sort_keys=True))
        elif ns.command == "attack":
            file_cfg = load_config_file(ns.config) if ns.config else {}
            cfg = materialize_attack_config(file_cfg, attack_flag_overrides(ns))
            rows = execute_attack(cfg, Path(ns.out))
            print(json.dumps(asdict(rows[-1]), sort_keys=True))
        elif ns.command == "sweep":
            file_cfg = load_config_file(ns.config) if ns.config else {}
            grid = dict(file_cfg.pop("grid", {}))
            grid.update(parse_grid_items(ns.grid))
            flags = attack_flag_overrides(ns)
            plan = plan_sweep(file_cfg, flags, grid, Path(ns.out))
            base = deep_merge(file_cfg, flags)
            combined = execute_sweep(plan, Path(ns.out), ns.jobs, {"base": base, "grid": grid, "jobs": ns.jobs})
            print(combined)
        elif ns.command == "report":
            rows: list[MetricRow] = []
            for path in ns.reports:
                rows.extend(read_report(path))
            if not rows:
                raise ConfigError("reports contain no rows")
            writer = csv.writer(sys.stdout, lineterminator="\n")
            writer.writerow(REPORT_COLUMNS)
            for row in rows:
                rec = asdict(row)
                writer.writerow([f"{rec[c]:.6g}" if isinstance(rec[c], float) else rec[c] for c in REPORT_COLUMNS])
            print()
            summary = summarize(rows)
            write_summary(summary, sys.stdout)
            if ns.out:
                with open(ns.out, "w", newline="") as fh:
                    write_summary(summary, fh)
        elif ns.command == "replay":
            return _replay(ns.manifest, ns.out)
    except (ConfigError, ReportSchemaError) as exc:
        print(f"steallab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AttackDiverged as exc:
        print(f"steallab: diverged: {exc}; checkpoints: {', '.join(exc.checkpoints)}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
