"""Attack orchestration: oracle, sample pool, round loop and reports."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import attacks
from .attacks import AttackConfig, canonical_strategy
from .defense import noisy_label
from .gnn import GnnModel, ModelConfig, fit, init_model, predict_hard_batch
from .graph import ATTACKER_SEED, EVAL, TARGET_TRAIN, Dataset, Graph, PairRegistry
from .metrics import accuracy, diversity_stat, fidelity
from .stats import degree_distribution_distance

REPORT_SCHEMA_PATH = Path(__file__).with_name("report.schema.json")
CSV_COLUMNS = ("strategy", "seed", "round", "fidelity", "accuracy", "queries_used", "pool_size",
               "degree_gap_mean", "degree_gap_max", "changed_entries_mean", "diversity_mean", "truncated")


class BudgetExhausted(RuntimeError):
    pass


class QueryOracle:
    """Hard-label interface to the target. Only class indices leave this object."""

    def __init__(self, target: GnnModel, noise_rate: float = 0.0,
                 rng: Optional[np.random.Generator] = None, budget: Optional[int] = None):
        self._target = target
        self.num_classes = target.config.num_classes
        self.noise_rate = float(noise_rate)
        self._rng = rng if rng is not None else np.random.default_rng(0)
        self.budget = budget
        self.queries_used = 0

    def query(self, graphs: Sequence[Graph]) -> list[int]:
        graphs = list(graphs)
        if self.budget is not None and self.queries_used + len(graphs) > self.budget:
            raise BudgetExhausted(f"{self.queries_used} of {self.budget} queries used, "
                                  f"{len(graphs)} more requested")
        labels = predict_hard_batch(self._target, graphs).tolist() if graphs else []
        self.queries_used += len(graphs)
        if self.noise_rate > 0:
            labels = [noisy_label(y, self.num_classes, self.noise_rate, self._rng) for y in labels]
        return [int(y) for y in labels]


@dataclass
class SamplePool:
    graphs: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    provenance: list = field(default_factory=list)

    def add(self, graphs: Sequence[Graph], labels: Sequence[int], tag: str) -> None:
        if len(graphs) != len(labels):
            raise ValueError("graph/label count mismatch")
        self.graphs.extend(graphs)
        self.labels.extend(int(y) for y in labels)
        self.provenance.extend([tag] * len(graphs))

    def pairs(self) -> list[tuple[Graph, int]]:
        return list(zip(self.graphs, self.labels))

    def __len__(self) -> int:
        return len(self.graphs)


@dataclass
class RoundRecord:
    round: int
    fidelity: float
    accuracy: float
    queries_used: int
    pool_size: int
    degree_gap_mean: Optional[float] = None
    degree_gap_max: Optional[float] = None
    changed_entries_mean: Optional[float] = None
    diversity_mean: Optional[float] = None
    wall_clock_s: float = 0.0


@dataclass
class RunReport:
    strategy: str
    seed: int
    rounds: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    truncated: bool = False
    wall_clock_s: float = 0.0

    @property
    def final_fidelity(self) -> float:
        return self.rounds[-1].fidelity

    @property
    def queries_used(self) -> int:
        return self.rounds[-1].queries_used

    def to_dict(self) -> dict:
        return {"strategy": self.strategy, "seed": self.seed, "truncated": self.truncated,
                "wall_clock_s": self.wall_clock_s, "config": self.config,
                "rounds": [asdict(r) for r in self.rounds]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_rows(self) -> list[dict]:
        rows = []
        for r in self.rounds:
            row = {"strategy": self.strategy, "seed": self.seed, "truncated": int(self.truncated)}
            for col in CSV_COLUMNS:
                if col not in row:
                    row[col] = getattr(r, col)
            rows.append({k: _fmt(row[k]) for k in CSV_COLUMNS})
        return rows

    def to_csv(self) -> str:
        """One row per round; wall-clock is left out so reruns are byte-identical."""
        return rows_to_csv(self.csv_rows(), CSV_COLUMNS)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def load_report_schema() -> dict:
    return json.loads(REPORT_SCHEMA_PATH.read_text())


# --------------------------------------------------------------------------- target

def train_target(ds: Dataset, config: ModelConfig, epochs: int, seed: int,
                 lr: float = 0.01) -> tuple[GnnModel, float]:
    """Fit a model on the target-train split with true labels; returns it with eval accuracy."""
    train = ds.split(TARGET_TRAIN)
    if not train:
        raise ValueError("dataset has no target-train split")
    init_rng, fit_rng = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)]
    model = init_model(config, init_rng)
    fit(model, [(g, g.label) for g in train], epochs, lr, fit_rng)
    held = ds.split(EVAL)
    return model, (accuracy(model, held) if held else float("nan"))


# --------------------------------------------------------------------------- attack loop

@dataclass
class LoopConfig:
    rounds: int = 10
    pretrain_epochs: int = 100
    epochs_per_round: int = 100
    lr: float = 0.01
    batch_size: int = 32
    scratch: bool = False
    eval_split: str = EVAL
    noise_rate: float = 0.0
    budget: Optional[int] = None
    clone_config: Optional[ModelConfig] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["clone_config"] = None if self.clone_config is None else self.clone_config.to_dict()
        return d


class _Generator:
    def __init__(self, strategy: str, seeds: list, cfg: AttackConfig, rng: np.random.Generator):
        self.strategy = strategy
        self.seeds = seeds
        self.cfg = cfg
        self.rng = rng
        self.registry = PairRegistry()
        self.pagerank_cache: dict = {}

    def __call__(self, clone: GnnModel) -> list[Graph]:
        s, cfg, rng = self.strategy, self.cfg, self.rng
        if s == attacks.RANDOM:
            return attacks.random_gen(self.seeds, len(self.seeds), rng)
        out = []
        for i, g in enumerate(self.seeds):
            if s == attacks.MSA_AU:
                out.append(attacks.au_gen(g, clone, cfg))
            elif s == attacks.MSA_AD:
                out.append(attacks.ad_gen(g, self.seeds, self.registry, cfg, rng, self.pagerank_cache, i))
            elif s == attacks.MSA_AUD:
                out.append(attacks.aud_gen(g, clone, self.seeds, self.registry, cfg, rng,
                                           self.pagerank_cache, i))
            elif s == attacks.JBDA:
                out.append(attacks.jbda_gen(g, clone, cfg))
            elif s == attacks.T_RND:
                out.append(attacks.trnd_gen(g, clone, cfg, rng))
            else:
                raise ValueError(f"strategy {s!r} generates no samples")
        return out


def run_attack(ds: Dataset, target: GnnModel, strategy: str, cfg: AttackConfig, rounds: int,
               seed: int, loop: Optional[LoopConfig] = None, corpus: Optional[list] = None) -> RunReport:
    """Grow a labelled pool from the seed split and train a clone on it round by round.

    ``corpus``, when given, receives ``(round, seed_index, original, generated)``
    tuples for later statistics.
    """
    strategy = canonical_strategy(strategy)
    loop = LoopConfig() if loop is None else loop
    if rounds < 0:
        raise ValueError("rounds must be non-negative")
    if strategy == attacks.MSA_REAL:
        rounds = 0
    seeds = ds.split(ATTACKER_SEED)
    if not seeds:
        raise ValueError("dataset has no attacker-seed split")
    eval_set = ds.split(loop.eval_split)
    if not eval_set:
        raise ValueError(f"dataset has no {loop.eval_split!r} split")
    streams = np.random.SeedSequence(seed).spawn(4)
    init_rng, train_rng, gen_rng, noise_rng = [np.random.default_rng(s) for s in streams]
    clone_cfg = loop.clone_config or target.config
    oracle = QueryOracle(target, loop.noise_rate, noise_rng, loop.budget)
    report = RunReport(strategy, seed, config={"attack": cfg.to_dict(), "loop": loop.to_dict(), "rounds": rounds})
    t0 = time.perf_counter()

    pool = SamplePool()
    attacker_seeds = [g.with_label(None) for g in seeds]
    try:
        pool.add(attacker_seeds, oracle.query(attacker_seeds), "seed")
    except BudgetExhausted:
        report.truncated = True
        report.wall_clock_s = time.perf_counter() - t0
        return report
    clone = init_model(clone_cfg, init_rng)
    fit(clone, pool.pairs(), loop.pretrain_epochs, loop.lr, train_rng, loop.batch_size)

    def snapshot(i, gaps=None, changed=None, div=None):
        report.rounds.append(RoundRecord(
            round=i, fidelity=fidelity(clone, target, eval_set),
            accuracy=accuracy(clone, eval_set) if all(g.label is not None for g in eval_set) else float("nan"),
            queries_used=oracle.queries_used, pool_size=len(pool),
            degree_gap_mean=None if gaps is None else float(np.mean(gaps)),
            degree_gap_max=None if gaps is None else float(np.max(gaps)),
            changed_entries_mean=None if changed is None else float(np.mean(changed)),
            diversity_mean=div, wall_clock_s=time.perf_counter() - t0))

    snapshot(0)
    generate = _Generator(strategy, attacker_seeds, cfg, gen_rng)
    previous = None
    for i in range(1, rounds + 1):
        new = generate(clone)
        try:
            labels = oracle.query(new)
        except BudgetExhausted:
            report.truncated = True
            break
        pool.add(new, labels, f"round-{i}:{strategy}")
        if strategy == attacks.RANDOM:
            gaps = changed = None
        else:
            gaps = [degree_distribution_distance(o, g) for o, g in zip(attacker_seeds, new)]
            changed = [int((o.adj != g.adj).sum() // 2) if o.n == g.n else -1
                       for o, g in zip(attacker_seeds, new)]
        if corpus is not None:
            corpus.extend((i, k, o, g) for k, (o, g) in enumerate(zip(attacker_seeds, new)))
        # researcher-side diagnostic, reads target logits outside the attacker's view
        div = None if previous is None else float(np.mean(diversity_stat(target, previous, new)))
        previous = new
        if loop.scratch:
            clone = init_model(clone_cfg, np.random.default_rng(np.random.SeedSequence([seed, i])))
            fit(clone, pool.pairs(), loop.pretrain_epochs, loop.lr, train_rng, loop.batch_size)
        else:
            fit(clone, pool.pairs(), loop.epochs_per_round, loop.lr, train_rng, loop.batch_size)
        snapshot(i, gaps, changed, div)
    report.wall_clock_s = time.perf_counter() - t0
    return report


def summarize(reports: Sequence[RunReport]) -> list[dict]:
    """Mean and population std of final fidelity per strategy, in first-seen order."""
    groups: dict = {}
    for r in reports:
        groups.setdefault(r.strategy, []).append(r)
    rows = []
    for strategy, rs in groups.items():
        finals = np.array([r.final_fidelity for r in rs])
        rows.append({"strategy": strategy, "runs": len(rs), "fidelity_mean": float(finals.mean()),
                     "fidelity_std": float(finals.std()),
                     "queries_mean": float(np.mean([r.queries_used for r in rs]))})
    return rows
