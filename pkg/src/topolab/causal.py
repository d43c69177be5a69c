"""Counterfactual influence of single agents and whole topologies.

CAPE for agent ``i`` is the indicator that forcing ``i``'s output flips the
correctness of the system answer. TCTE averages CAPE over agents with a
``1/sqrt(degree)`` weight. Factual and counterfactual runs share random
streams, so CAPE is a deterministic bit for each (task, seed, topology).
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .agents import (
    AgentSpec,
    Intervention,
    TaskItem,
    ValidationError,
    answer_distribution,
    apply_intervention,
)
from .protocol import Outcome, RunConfig, aggregate, aggregate_batch, run_dialogue, simulate_batch
from .rng import derive_seed, seed_block
from .topology import SweepPath, Topology, TopologyKind, build_named, degrees, sparsity

DIRECTIONS = {"error": "error", "insight": "answer"}  # sweep direction -> intervention mode


@dataclass(frozen=True)
class CapeRecord:
    agent: int
    flipped: int
    y_orig: int
    y_cf: int


@dataclass(frozen=True)
class TcteRecord:
    topology_sparsity: float
    tcte: float
    accuracy: float
    n_queries: int
    edges: int = 0


@dataclass
class SweepReport:
    direction: str  # "error" or "insight"
    rows: list[TcteRecord] = field(default_factory=list)
    seed: int = 0

    CSV_HEADER = "direction,sparsity,tcte,accuracy,n_queries,seed"

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for r in self.rows:
            lines.append(
                f"{self.direction},{r.topology_sparsity:.10f},{r.tcte:.10f},{r.accuracy:.10f},{r.n_queries},{self.seed}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "SweepReport":
        lines = [l for l in text.splitlines() if l.strip()]
        if not lines or lines[0] != cls.CSV_HEADER:
            raise ValidationError(f"unexpected sweep CSV header: {lines[0] if lines else '(empty)'}")
        report = None
        for line in lines[1:]:
            direction, sp, tc, acc, nq, seed = line.split(",")
            if report is None:
                report = cls(direction, seed=int(seed))
            report.rows.append(TcteRecord(float(sp), float(tc), float(acc), int(nq)))
        return report or cls("error")


def task_seed(cfg: RunConfig, task: TaskItem) -> int:
    """Seed of the factual run for a task; shared by pool filtering and sweeps."""
    return derive_seed(cfg.seed, "task", task.id)


def run_counterfactual_pair(t, agents, task, cfg: RunConfig, iv: Intervention) -> tuple[Outcome, Outcome]:
    return run_dialogue(t, agents, task, cfg), run_dialogue(t, agents, task, cfg, iv)


def cape(pair: tuple[Outcome, Outcome]) -> int:
    orig, cf = pair
    return int(orig.correct != cf.correct)


def tcte(capes: Sequence[tuple[int, int]], t: Topology) -> float:
    """``(1/N) * sum_i CAPE_i / sqrt(max(d_i, 1))`` with total degree ``d_i``."""
    flips = dict(capes)
    missing = sorted(set(range(t.n)) - set(flips))
    if missing:
        raise ValidationError(f"no CAPE for agents {missing}")
    d = np.maximum(degrees(t), 1)
    return float(sum(flips[i] / math.sqrt(d[i]) for i in range(t.n)) / t.n)


def _weights(t: Topology) -> np.ndarray:
    return 1.0 / np.sqrt(np.maximum(degrees(t), 1)) / t.n


def _check_alphabet(tasks: Sequence[TaskItem]) -> int:
    k = tasks[0].alphabet_size
    if any(task.alphabet_size != k for task in tasks):
        raise ValidationError("all tasks in a sweep must share one alphabet size")
    return k


def per_task_tcte(t: Topology, agents, tasks: Sequence[TaskItem], cfg: RunConfig, mode: str):
    """Per-task TCTE and factual correctness under ``mode`` interventions.

    Returns ``(tcte (T,), y_orig (T,), capes (T, N))``. The synthetic backend is
    evaluated in one vectorized batch; other backends run dialogue pairs.
    """
    n = t.n
    if cfg.backend != "synthetic":
        rows, ys, capes = [], [], []
        for task in tasks:
            c = cfg.with_seed(task_seed(cfg, task))
            orig = run_dialogue(t, agents, task, c)
            flips = [int(run_dialogue(t, agents, task, c, Intervention(i, mode)).correct != orig.correct) for i in range(n)]
            rows.append(tcte(list(enumerate(flips)), t))
            ys.append(orig.correct)
            capes.append(flips)
        return np.array(rows), np.array(ys), np.array(capes)
    k = _check_alphabet(tasks)
    gold = np.array([task.gold for task in tasks])
    seeds = np.array([task_seed(cfg, task) for task in tasks], dtype=np.uint64)
    num = len(tasks)
    # row layout: block 0 = factual, block 1 + i = intervention on agent i
    g = np.tile(gold, n + 1)
    s = np.tile(seeds, n + 1)
    target = np.repeat(np.arange(-1, n), num)
    forced = np.array([apply_intervention(Intervention(0, mode), task) for task in tasks])
    answers = simulate_batch(t.adj, agents, k, g, s, cfg.rounds, target, np.tile(forced, n + 1))
    correct = (aggregate_batch(answers[:, -1, :], cfg.aggregation, k) == g).astype(int).reshape(n + 1, num)
    y_orig = correct[0]
    capes = (correct[1:] != y_orig).astype(int).T
    return capes @ _weights(t), y_orig, capes


def natural_accuracy(t: Topology, agents, tasks: Sequence[TaskItem], cfg: RunConfig, reps: int = 1) -> float:
    """Un-intervened accuracy on fresh streams (independent of pool filtering)."""
    if cfg.backend != "synthetic":
        hits = [
            run_dialogue(t, agents, task, cfg.with_seed(derive_seed(cfg.seed, "accuracy", task.id, r))).correct
            for task in tasks
            for r in range(reps)
        ]
        return float(np.mean(hits))
    k = _check_alphabet(tasks)
    gold = np.repeat([task.gold for task in tasks], reps)
    seeds = np.array(
        [derive_seed(cfg.seed, "accuracy", task.id, r) for task in tasks for r in range(reps)], dtype=np.uint64
    )
    answers = simulate_batch(t.adj, agents, k, gold, seeds, cfg.rounds)
    return float(np.mean(aggregate_batch(answers[:, -1, :], cfg.aggregation, k) == gold))


def _sweep(direction, agents, tasks, cfg, path: SweepPath, reverify, accuracy_reps) -> SweepReport:
    if not tasks:
        raise ValidationError("sweep needs at least one task")
    mode = DIRECTIONS[direction]
    want = 1 if direction == "error" else 0
    report = SweepReport(direction, seed=cfg.seed)
    for t in path:
        values, y_orig, _ = per_task_tcte(t, agents, tasks, cfg, mode)
        if reverify:
            keep = y_orig == want
            values = values[keep]
        n_q = int(values.shape[0])
        report.rows.append(
            TcteRecord(
                topology_sparsity=sparsity(t) if t.n > 1 else 0.0,
                tcte=float(values.mean()) if n_q else float("nan"),
                accuracy=natural_accuracy(t, agents, tasks, cfg, accuracy_reps),
                n_queries=n_q,
                edges=t.num_edges,
            )
        )
    report.rows.sort(key=lambda r: r.topology_sparsity)
    return report


def sweep_error_propagation(agents, tasks_correct, cfg, path: SweepPath, reverify=False, accuracy_reps=1) -> SweepReport:
    """Force a wrong answer on each agent in turn along a Full -> Chain path."""
    if path.direction != "sparsify":
        raise ValidationError("error propagation sweeps run along a sparsify path")
    return _sweep("error", agents, tasks_correct, cfg, path, reverify, accuracy_reps)


def sweep_insight_propagation(agents, tasks_incorrect, cfg, path: SweepPath, reverify=False, accuracy_reps=1) -> SweepReport:
    """Force the gold answer on each agent in turn along a Chain -> Full path."""
    if path.direction != "densify":
        raise ValidationError("insight propagation sweeps run along a densify path")
    return _sweep("insight", agents, tasks_incorrect, cfg, path, reverify, accuracy_reps)


@dataclass(frozen=True)
class BaselineRow:
    kind: str
    sparsity: float
    error_tcte: float
    insight_tcte: float
    accuracy: float

    CSV_HEADER = "kind,sparsity,error_tcte,insight_tcte,accuracy"

    def csv(self) -> str:
        return f"{self.kind},{self.sparsity:.10f},{self.error_tcte:.10f},{self.insight_tcte:.10f},{self.accuracy:.10f}"


def baseline_suite(
    agents, tasks_correct, tasks_incorrect, cfg: RunConfig, kinds: Sequence[TopologyKind], accuracy_reps: int = 1
) -> list[BaselineRow]:
    """Error and insight TCTE plus natural accuracy for each named topology."""
    if not kinds:
        raise ValidationError("baseline suite needs at least one topology kind")
    n = len(agents)
    rows = []
    for kind in kinds:
        rng = np.random.default_rng(derive_seed(cfg.seed, "baseline", kind.label()))
        t = build_named(kind, n, rng)
        err = per_task_tcte(t, agents, tasks_correct, cfg, "error")[0].mean()
        ins = per_task_tcte(t, agents, tasks_incorrect, cfg, "answer")[0].mean()
        acc = natural_accuracy(t, agents, list(tasks_correct) + list(tasks_incorrect), cfg, accuracy_reps)
        rows.append(BaselineRow(kind.label(), sparsity(t) if n > 1 else 0.0, float(err), float(ins), acc))
    return rows


# --- exact oracle -------------------------------------------------------------


MAX_JOINT_ASSIGNMENTS = 4096
MAX_ROUNDS = 3


def coupled_pmf(p: np.ndarray, q: np.ndarray) -> dict[tuple[int, int], float]:
    """Joint law of two inverse-CDF draws that share one uniform.

    ``P(a, b)`` is the length of the overlap between answer ``a``'s interval
    under ``p`` and answer ``b``'s interval under ``q``; the last interval of
    each runs to 1, matching the sampler's clamp.
    """
    def edges(dist):
        cdf = np.cumsum(dist)
        lo = np.concatenate([[0.0], cdf[:-1]])
        hi = cdf.copy()
        hi[-1] = 1.0
        return lo, hi

    plo, phi = edges(p)
    qlo, qhi = edges(q)
    out = {}
    for a in range(len(p)):
        for b in range(len(q)):
            width = min(phi[a], qhi[b]) - max(plo[a], qlo[b])
            if width > 0:
                out[(a, b)] = width
    return out


def exact_flip_probability(
    t: Topology,
    agents: Sequence[AgentSpec],
    task: TaskItem,
    cfg: RunConfig,
    iv: Intervention,
    condition: str | None = None,
) -> float:
    """Exact probability that the factual and intervened runs differ in correctness.

    Enumerates the joint answers of both processes agent by agent in
    topological order, round by round. Draws are independent across agents
    and rounds; the two processes are coupled through their shared uniforms
    exactly as in :func:`run_dialogue`. ``condition`` restricts to factual
    runs that were ``"correct"`` or ``"incorrect"``.
    """
    k, n = task.alphabet_size, t.n
    if k**n > MAX_JOINT_ASSIGNMENTS or cfg.rounds > MAX_ROUNDS:
        raise ValidationError(f"enumeration needs k^n <= {MAX_JOINT_ASSIGNMENTS} and K <= {MAX_ROUNDS}")
    if cfg.backend != "synthetic":
        raise ValidationError("exact enumeration needs the synthetic backend")
    forced = apply_intervention(iv, task)
    if not isinstance(forced, int):
        raise ValidationError("exact enumeration needs an answer-index intervention")
    nbrs = [t.in_neighbors(i) for i in range(n)]
    order = list(range(n))
    # state: (previous-round orig row, previous-round cf row, current orig row, current cf row)
    states: dict[tuple, float] = {((), (), (), ()): 1.0}
    for rnd in range(1, cfg.rounds + 1):
        for i in order:
            nxt: dict[tuple, float] = defaultdict(float)
            for (po, pc, co, cc), prob in states.items():
                inc_o = [co[j] for j in nbrs[i]] + ([po[i]] if rnd >= 2 else [])
                p = answer_distribution(agents[i], task, inc_o)
                if i == iv.target:
                    joint = {(a, forced): w for a, w in enumerate(p) if w > 0}
                else:
                    inc_c = [cc[j] for j in nbrs[i]] + ([pc[i]] if rnd >= 2 else [])
                    joint = coupled_pmf(p, answer_distribution(agents[i], task, inc_c))
                for (a, b), w in joint.items():
                    nxt[(po, pc, co + (a,), cc + (b,))] += prob * w
            states = nxt
        rolled: dict[tuple, float] = defaultdict(float)
        for (_, _, co, cc), prob in states.items():
            rolled[(co, cc, (), ())] += prob
        states = rolled
    flip = base = 0.0
    for (ro, rc, _, _), prob in states.items():
        y_o = int(aggregate(list(ro), cfg.aggregation, k) == task.gold)
        y_c = int(aggregate(list(rc), cfg.aggregation, k) == task.gold)
        if condition == "correct" and not y_o or condition == "incorrect" and y_o:
            continue
        base += prob
        flip += prob * (y_o != y_c)
    if condition is None:
        return flip
    if base == 0:
        raise ValidationError(f"factual run is never {condition} for this instance")
    return flip / base


def monte_carlo_flip_rate(
    t: Topology,
    agents: Sequence[AgentSpec],
    task: TaskItem,
    cfg: RunConfig,
    iv: Intervention,
    n_seeds: int,
    condition: str | None = None,
) -> tuple[float, int]:
    """Flip rate over ``n_seeds`` paired runs; returns ``(rate, runs counted)``."""
    seeds = seed_block(derive_seed(cfg.seed, "mc", task.id), n_seeds)
    gold = np.full(n_seeds, task.gold)
    forced = apply_intervention(iv, task)
    orig = simulate_batch(t.adj, agents, task.k, gold, seeds, cfg.rounds)
    cf = simulate_batch(
        t.adj, agents, task.k, gold, seeds, cfg.rounds, np.full(n_seeds, iv.target), np.full(n_seeds, forced)
    )
    y_o = aggregate_batch(orig[:, -1, :], cfg.aggregation, task.k) == task.gold
    y_c = aggregate_batch(cf[:, -1, :], cfg.aggregation, task.k) == task.gold
    keep = np.ones(n_seeds, dtype=bool)
    if condition == "correct":
        keep = y_o
    elif condition == "incorrect":
        keep = ~y_o
    count = int(keep.sum())
    return (float(np.mean(y_o[keep] != y_c[keep])) if count else float("nan")), count
