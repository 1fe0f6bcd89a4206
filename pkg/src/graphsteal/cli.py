"""Command-line entry point.

Settings come from built-in defaults, then the YAML file given by ``--config``,
then individual flags; later sources win.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import attacks
from .attacks import AttackConfig, canonical_strategy
from .datasets import TuBundle, TuFormatError, default_output_root, generate_triangles_like, load_tu, write_tu
from .gnn import ModelConfig, load_checkpoint, save_checkpoint
from .graph import Dataset, Graph, make_graph, make_splits
from .stats import STAT_COLUMNS, stat_gap
from .steal import CSV_COLUMNS, LoopConfig, RunReport, rows_to_csv, run_attack, summarize, train_target

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

DEFAULTS = {
    "dataset": {"source": "synthetic", "path": None, "name": None, "num_graphs": 600, "classes": 3,
                "nodes": [12, 24], "seed": 0, "seed_fraction": 0.1, "split_seed": 1},
    "model": {"layer_kind": "gcn", "num_layers": 3, "hidden_width": 32, "pooling": "average"},
    "target": {"epochs": 200, "seed": 0, "lr": 0.01},
    "clone": {},
    "attack": {"strategies": [attacks.MSA_REAL, attacks.MSA_AU, attacks.MSA_AD, attacks.MSA_AUD],
               "alpha": 0.05, "gamma": 0.1, "metric": "margin", "uncertainty_cap": None,
               "stat_cap": 0.05, "literal_grad_mask": False, "stat_breach": "skip",
               "baseline_lambda": 0.6, "trnd_steps": 3},
    "loop": {"rounds": 10, "pretrain_epochs": 100, "epochs_per_round": 100, "lr": 0.01,
             "batch_size": 32, "scratch": False, "eval_split": "eval"},
    "defense": {"noise": 0.0},
    "seeds": [0, 1, 2, 3, 4],
    "out": None,
}

SWEEP_PARAMS = ("alpha", "gamma", "noise", "pooling", "metric", "clone-arch")
SWEEP_COLUMNS = ("parameter", "value", "strategy", "seed", "final_fidelity", "final_accuracy",
                 "queries_used", "degree_gap_mean")


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def load_spec(args) -> dict:
    spec = copy.deepcopy(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        spec = _merge(spec, loaded)
    a = spec["attack"]
    if getattr(args, "strategy", None):
        a["strategies"] = _csv_list(args.strategy)
    for key in ("alpha", "gamma", "metric"):
        if getattr(args, key, None) is not None:
            a[key] = getattr(args, key)
    if getattr(args, "literal_grad_mask", False):
        a["literal_grad_mask"] = True
    if getattr(args, "rounds", None) is not None:
        spec["loop"]["rounds"] = args.rounds
    if getattr(args, "pooling", None):
        spec["model"]["pooling"] = args.pooling
    if getattr(args, "noise", None) is not None:
        spec["defense"]["noise"] = args.noise
    if getattr(args, "seed_list", None):
        try:
            spec["seeds"] = [int(s) for s in _csv_list(args.seed_list)]
        except ValueError:
            raise ConfigError(f"bad --seed-list {args.seed_list!r}") from None
    if getattr(args, "out", None):
        spec["out"] = args.out
    if spec["out"] is None:
        spec["out"] = str(default_output_root())
    check_spec(spec)
    return spec


def check_spec(spec: dict) -> None:
    if not spec["seeds"]:
        raise ConfigError("seed list is empty")
    try:
        attack_config(spec)
        model_config(spec, 2, 1)
        [canonical_strategy(s) for s in spec["attack"]["strategies"]]
        loop_config(spec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if spec["loop"]["rounds"] < 0:
        raise ConfigError("rounds must be non-negative")
    if not 0.0 <= float(spec["defense"]["noise"]) <= 1.0:
        raise ConfigError("noise must lie in [0, 1]")
    if spec["dataset"]["source"] not in ("synthetic", "tu"):
        raise ConfigError(f"unknown dataset source {spec['dataset']['source']!r}")


def attack_config(spec: dict) -> AttackConfig:
    a = {k: v for k, v in spec["attack"].items() if k != "strategies"}
    return AttackConfig(**a)


def model_config(spec: dict, num_classes: int, feat_dim: int) -> ModelConfig:
    return ModelConfig(num_classes=num_classes, feat_dim=feat_dim, **spec["model"])


def loop_config(spec: dict, clone: Optional[ModelConfig] = None) -> LoopConfig:
    lp = dict(spec["loop"])
    lp.pop("rounds", None)
    return LoopConfig(rounds=spec["loop"]["rounds"], noise_rate=float(spec["defense"]["noise"]),
                      clone_config=clone, **lp)


def build_dataset(spec: dict) -> Dataset:
    d = spec["dataset"]
    if d["source"] == "tu":
        if not d.get("path"):
            raise ConfigError("dataset.path is required for TU datasets")
        path = Path(d["path"])
        if not path.is_dir():
            raise ConfigError(f"dataset path not found: {path}")
        ds = load_tu(TuBundle.from_dir(path, d.get("name")))
    else:
        ds = generate_triangles_like(int(d["num_graphs"]), int(d["classes"]), d["nodes"],
                                     np.random.default_rng(int(d["seed"])))
    return make_splits(ds, float(d["seed_fraction"]), np.random.default_rng(int(d["split_seed"])))


def _clone_config(spec: dict, target_cfg: ModelConfig) -> Optional[ModelConfig]:
    if not spec.get("clone"):
        return None
    return replace(target_cfg, **spec["clone"])


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# --------------------------------------------------------------------------- verbs

def cmd_gen_dataset(spec: dict) -> int:
    ds = build_dataset(spec)
    out = Path(spec["out"]) / "dataset"
    write_tu(ds, out, "DS")
    _write(out / "splits.json", json.dumps(list(ds.splits)))
    print(f"wrote {len(ds)} graphs to {out}")
    return EXIT_OK


def _train(spec: dict, ds: Dataset, model_cfg: ModelConfig, path: Path):
    t = spec["target"]
    target, acc = train_target(ds, model_cfg, int(t["epochs"]), int(t["seed"]), float(t["lr"]))
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(target, path)
    return target, acc


def cmd_train_target(spec: dict) -> int:
    ds = build_dataset(spec)
    out = Path(spec["out"])
    ckpt = out / "target.npz"
    out.mkdir(parents=True, exist_ok=True)
    _, acc = _train(spec, ds, model_config(spec, ds.num_classes, ds.feat_dim), ckpt)
    _write(out / "target_metrics.json", json.dumps({"eval_accuracy": acc, "checkpoint": ckpt.name,
                                                    "model": spec["model"], "epochs": spec["target"]["epochs"]},
                                                   indent=2, sort_keys=True))
    print(f"eval_accuracy={acc:.4f} checkpoint={ckpt}")
    return EXIT_OK


def _load_target(spec: dict):
    ckpt = Path(spec["out"]) / "target.npz"
    if not ckpt.is_file():
        raise ConfigError(f"target checkpoint not found: {ckpt} (run train-target first)")
    return load_checkpoint(ckpt)


def _graph_record(g: Graph) -> dict:
    return {"n": g.n, "edges": sorted([list(e) for e in g.edge_set()])}


def _graph_from_record(rec: dict) -> Graph:
    n = int(rec["n"])
    adj = np.zeros((n, n), dtype=np.uint8)
    for i, j in rec["edges"]:
        adj[i, j] = adj[j, i] = 1
    return make_graph(adj, np.ones((n, 1)))


def _run_cell(args):
    ds, target, strategy, cfg, rounds, seed, loop, want_corpus = args
    corpus = [] if want_corpus else None
    report = run_attack(ds, target, strategy, cfg, rounds, seed, loop, corpus)
    lines = []
    for rnd, idx, orig, gen in corpus or ():
        lines.append(json.dumps({"strategy": report.strategy, "seed": seed, "round": rnd, "index": idx,
                                 "original": _graph_record(orig), "generated": _graph_record(gen)},
                                sort_keys=True))
    return report, lines


def _map(cells, jobs: int):
    if jobs <= 1 or len(cells) <= 1:
        return [_run_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_run_cell, cells))


def cmd_attack(spec: dict, jobs: int = 1) -> int:
    ds = build_dataset(spec)
    target = _load_target(spec)
    cfg = attack_config(spec)
    loop = loop_config(spec, _clone_config(spec, target.config))
    strategies = [canonical_strategy(s) for s in spec["attack"]["strategies"]]
    cells = [(ds, target, s, cfg, spec["loop"]["rounds"], seed, loop, True)
             for s in strategies for seed in spec["seeds"]]
    results = _map(cells, jobs)
    out = Path(spec["out"]) / "attack"
    reports = []
    corpus: dict = {}
    for report, lines in results:
        reports.append(report)
        stem = out / report.strategy / f"seed{report.seed}"
        _write(stem.with_suffix(".json"), report.to_json())
        _write(stem.with_suffix(".csv"), report.to_csv())
        corpus.setdefault(report.strategy, []).extend(lines)
    for strategy, lines in corpus.items():
        _write(out / "corpus" / f"{strategy}.jsonl", "".join(line + "\n" for line in lines))
    all_rows = [row for r in reports for row in r.csv_rows()]
    _write(out / "rounds.csv", rows_to_csv(all_rows, CSV_COLUMNS))
    summary = summarize(reports)
    cols = ("strategy", "runs", "fidelity_mean", "fidelity_std", "queries_mean")
    _write(out / "summary.csv", rows_to_csv([{k: _fmt(r[k]) for k in cols} for r in summary], cols))
    for r in summary:
        print(f"{r['strategy']:10s} fidelity {r['fidelity_mean']:.4f} +- {r['fidelity_std']:.4f}")
    return EXIT_OK


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(param: str, text: str):
    if param in ("alpha", "gamma", "noise"):
        return float(text)
    return text


def cmd_sweep(spec: dict, param: str, values: list, jobs: int = 1) -> int:
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"unknown sweep parameter {param!r}; expected one of {SWEEP_PARAMS}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    ds = build_dataset(spec)
    out = Path(spec["out"]) / "sweep" / param
    base_target = None
    cells, keys = [], []
    for raw in values:
        value = _parse_value(param, raw)
        cell_spec = copy.deepcopy(spec)
        if param in ("alpha", "gamma", "metric"):
            cell_spec["attack"][param] = value
        elif param == "noise":
            cell_spec["defense"]["noise"] = value
        elif param == "pooling":
            cell_spec["model"]["pooling"] = value
        elif param == "clone-arch":
            cell_spec["clone"] = dict(cell_spec.get("clone") or {}, layer_kind=value)
        check_spec(cell_spec)
        if param == "pooling":
            ckpt = out / f"target-{value}.npz"
            if ckpt.is_file():
                target = load_checkpoint(ckpt)
            else:
                target, _ = _train(cell_spec, ds, model_config(cell_spec, ds.num_classes, ds.feat_dim), ckpt)
        else:
            base_target = base_target or _load_target(spec)
            target = base_target
        cfg = attack_config(cell_spec)
        loop = loop_config(cell_spec, _clone_config(cell_spec, target.config))
        for s in cell_spec["attack"]["strategies"]:
            for seed in cell_spec["seeds"]:
                cells.append((ds, target, canonical_strategy(s), cfg, cell_spec["loop"]["rounds"], seed, loop, False))
                keys.append(raw)
    rows = []
    for raw, (report, _) in zip(keys, _map(cells, jobs)):
        last = report.rounds[-1]
        gaps = [r.degree_gap_mean for r in report.rounds if r.degree_gap_mean is not None]
        rows.append({"parameter": param, "value": raw, "strategy": report.strategy, "seed": report.seed,
                     "final_fidelity": _fmt(last.fidelity), "final_accuracy": _fmt(last.accuracy),
                     "queries_used": last.queries_used,
                     "degree_gap_mean": _fmt(float(np.mean(gaps))) if gaps else ""})
    _write(out / "sweep.csv", rows_to_csv(rows, SWEEP_COLUMNS))
    print(f"wrote {len(rows)} rows to {out / 'sweep.csv'}")
    return EXIT_OK


def stats_table(corpus_dir) -> list[dict]:
    """Mean per-statistic gap per strategy over every recorded (original, generated) pair."""
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise ConfigError(f"corpus directory not found: {corpus_dir}")
    sums: dict = {}
    for path in sorted(corpus_dir.glob("*.jsonl")):
        for line in path.read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            gap = stat_gap(_graph_from_record(rec["original"]), _graph_from_record(rec["generated"]))
            acc = sums.setdefault(rec["strategy"], {"count": 0, **{c: 0.0 for c in STAT_COLUMNS}})
            acc["count"] += 1
            for c in STAT_COLUMNS:
                acc[c] += gap[c]
    if not sums:
        raise RuntimeError(f"empty corpus in {corpus_dir}")
    return [{"strategy": s, "pairs": acc["count"], **{c: acc[c] / acc["count"] for c in STAT_COLUMNS}}
            for s, acc in sums.items()]


def cmd_stats(spec: dict, corpus_dir: Optional[str]) -> int:
    corpus_dir = Path(corpus_dir) if corpus_dir else Path(spec["out"]) / "attack" / "corpus"
    rows = stats_table(corpus_dir)
    cols = ("strategy", "pairs") + STAT_COLUMNS
    text = rows_to_csv([{k: _fmt(r[k]) for k in cols} for r in rows], cols)
    _write(Path(spec["out"]) / "stats.csv", text)
    sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment file")
    common.add_argument("--out", help="output directory (default: $GRAPHSTEAL_OUT or ./results)")
    common.add_argument("--seed-list", help="comma-separated run seeds")
    common.add_argument("--jobs", type=int, default=1, help="parallel runs")
    common.add_argument("--strategy", help="comma-separated strategies")
    common.add_argument("--alpha", type=float)
    common.add_argument("--gamma", type=float)
    common.add_argument("--rounds", type=int)
    common.add_argument("--metric")
    common.add_argument("--pooling")
    common.add_argument("--noise", type=float)
    common.add_argument("--literal-grad-mask", action="store_true")

    p = argparse.ArgumentParser(prog="graphsteal", description="Model-stealing experiments on graph classifiers.")
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("gen-dataset", parents=[common], help="write the configured dataset in TU format")
    sub.add_parser("train-target", parents=[common], help="train and save the target model")
    sub.add_parser("attack", parents=[common], help="run attacks for every strategy and seed")
    sw = sub.add_parser("sweep", parents=[common], help="cross-product runs over one parameter")
    sw.add_argument("parameter", choices=SWEEP_PARAMS)
    sw.add_argument("values", help="comma-separated values")
    st = sub.add_parser("stats", parents=[common], help="structural gap table from an attack corpus")
    st.add_argument("corpus", nargs="?", help="corpus directory (default: OUT/attack/corpus)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        spec = load_spec(args)
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        if args.verb == "gen-dataset":
            return cmd_gen_dataset(spec)
        if args.verb == "train-target":
            return cmd_train_target(spec)
        if args.verb == "attack":
            return cmd_attack(spec, args.jobs)
        if args.verb == "sweep":
            return cmd_sweep(spec, args.parameter, _csv_list(args.values), args.jobs)
        return cmd_stats(spec, args.corpus)
    except (ConfigError, TuFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
