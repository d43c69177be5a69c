"""REINFORCE training and inference for the dual-view generator."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..agents import AgentSpec, TaskItem
from ..protocol import RunConfig, aggregate_batch, run_dialogue, simulate_batch
from ..rng import derive_seed
from ..topology import Topology
from .encoder import encode_query, node_features
from .model import ABLATIONS, EibModel, backward, forward, log_prob_grad, sample_adjacency, sample_topology

log = logging.getLogger(__name__)

# env(adjs (R, N, N), tasks (R,), seeds (R,)) -> rewards (R,) in {0, 1}
Env = Callable[[np.ndarray, Sequence[TaskItem], np.ndarray], np.ndarray]


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    samples_per_query: int = 4
    learning_rate: float = 0.05
    momentum: float = 0.9
    queries_per_batch: int = 60
    epochs: int = 1
    max_steps: int | None = None
    seed: int = 0
    ablation: str = "full"

    def __post_init__(self):
        if self.samples_per_query < 1 or self.queries_per_batch < 1 or self.epochs < 1:
            raise ValueError("sample, batch and epoch counts must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}")


class SyntheticEnv:
    """Vectorized synthetic-agent rollouts scored by the configured aggregation."""

    def __init__(self, agents: Sequence[AgentSpec], run: RunConfig):
        self.agents = list(agents)
        self.run = run

    def __call__(self, adjs, tasks, seeds):
        k = tasks[0].alphabet_size
        if any(t.alphabet_size != k for t in tasks):
            raise ValueError("a rollout batch must share one alphabet size")
        gold = np.array([t.gold for t in tasks])
        answers = simulate_batch(adjs, self.agents, k, gold, seeds, self.run.rounds)
        final = aggregate_batch(answers[:, -1, :], self.run.aggregation, k)
        return (final == gold).astype(float)


class DialogueEnv:
    """One :func:`run_dialogue` per rollout; works with any backend."""

    def __init__(self, agents: Sequence[AgentSpec], run: RunConfig):
        self.agents = list(agents)
        self.run = run

    def __call__(self, adjs, tasks, seeds):
        rewards = []
        for adj, task, seed in zip(adjs, tasks, seeds):
            out = run_dialogue(Topology(len(self.agents), adj), self.agents, task, self.run.with_seed(int(seed)))
            rewards.append(float(out.correct))
        return np.array(rewards)


class _FeatureCache:
    def __init__(self, model: EibModel, agents):
        self.model, self.agents, self._cache = model, agents, {}

    def __call__(self, task: TaskItem):
        if task.id not in self._cache:
            enc = self.model.encoder
            self._cache[task.id] = (node_features(self.agents, task, enc), encode_query(task, enc))
        return self._cache[task.id]


@dataclass
class StepStats:
    step: int
    mean_reward: float
    baseline: float
    grad_norm: float
    mean_alpha_dense: float
    mean_edge_prob: float


@dataclass
class Trainer:
    """SGD-with-momentum ascent on the REINFORCE surrogate."""

    model: EibModel
    agents: Sequence[AgentSpec]
    env: Env
    cfg: TrainConfig
    velocity: dict = field(default_factory=dict)
    step_count: int = 0

    def __post_init__(self):
        self.features = _FeatureCache(self.model, self.agents)
        if not self.velocity:
            self.velocity = {k: np.zeros_like(v) for k, v in self.model.params.items()}

    def gradient(self, tasks: Sequence[TaskItem], step: int) -> tuple[dict, StepStats]:
        cfg = self.cfg
        s = cfg.samples_per_query
        fwds, adjs, roll_tasks, seeds = [], [], [], []
        for task in tasks:
            x, q = self.features(task)
            fwd = forward(self.model, x, q, cfg.ablation)
            rng = np.random.default_rng(derive_seed(cfg.seed, "sample", step, task.id))
            fwds.append(fwd)
            adjs.append(sample_adjacency(fwd.m_final, rng, s))
            roll_tasks.extend([task] * s)
            seeds.extend(derive_seed(cfg.seed, "rollout", step, task.id, m) for m in range(s))
        all_adj = np.concatenate(adjs)
        rewards = np.asarray(self.env(all_adj, roll_tasks, np.array(seeds, dtype=np.uint64)), dtype=float)
        baseline = float(rewards.mean())
        adv = (rewards - baseline).reshape(len(tasks), s)
        scale = 1.0 / (len(tasks) * s)
        grads = {k: np.zeros_like(v) for k, v in self.model.params.items()}
        for fwd, adj, a in zip(fwds, adjs, adv):
            if not np.any(a):
                continue
            d_final = scale * sum(w * log_prob_grad(fwd.m_final, g) for w, g in zip(a, adj))
            for k, g in backward(self.model, fwd, d_final).items():
                grads[k] += g
        norm = float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))
        if not np.isfinite(norm):
            bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
            raise TrainingError(f"non-finite gradient at step {step} in {bad}")
        stats = StepStats(
            step=step,
            mean_reward=float(rewards.mean()),
            baseline=baseline,
            grad_norm=norm,
            mean_alpha_dense=float(np.mean([f.alpha[0] for f in fwds])),
            mean_edge_prob=float(np.mean([f.m_final[np.tril_indices_from(f.m_final, -1)].mean() for f in fwds])),
        )
        return grads, stats

    def apply(self, grads: dict) -> None:
        for k, g in grads.items():
            v = self.velocity[k]
            v *= self.cfg.momentum
            v += g
            self.model.params[k] += self.cfg.learning_rate * v

    def step(self, tasks: Sequence[TaskItem]) -> StepStats:
        grads, stats = self.gradient(tasks, self.step_count)
        self.apply(grads)
        self.step_count += 1
        return stats


def policy_gradient_step(model: EibModel, tasks, env: Env, cfg: TrainConfig, agents, velocity=None, step: int = 0):
    """One update; returns the updated model, the velocity buffers and stats."""
    trainer = Trainer(model, agents, env, cfg, velocity or {}, step)
    stats = trainer.step(tasks)
    return trainer.model, trainer.velocity, stats


def train(model: EibModel, agents, tasks: Sequence[TaskItem], env: Env, cfg: TrainConfig, on_step=None) -> list[StepStats]:
    """Epochs over ``tasks`` in fixed order, ``queries_per_batch`` per update."""
    trainer = Trainer(model, agents, env, cfg)
    history = []
    b = cfg.queries_per_batch
    for _ in range(cfg.epochs):
        for start in range(0, len(tasks), b):
            if cfg.max_steps is not None and trainer.step_count >= cfg.max_steps:
                return history
            stats = trainer.step(tasks[start : start + b])
            history.append(stats)
            if on_step is not None:
                on_step(stats)
            log.debug("step %d reward %.3f alpha_dense %.3f", stats.step, stats.mean_reward, stats.mean_alpha_dense)
    return history


def final_mask(model: EibModel, agents, task: TaskItem, ablation: str = "full"):
    enc = model.encoder
    return forward(model, node_features(agents, task, enc), encode_query(task, enc), ablation)


def design_topology(model: EibModel, agents, task: TaskItem, rng: np.random.Generator, ablation: str = "full"):
    """Sample a topology for ``task``; also returns the gate weights and final mask."""
    fwd = final_mask(model, agents, task, ablation)
    topo = sample_topology(fwd.m_final, rng)
    return topo, {"alpha": fwd.alpha, "m_final": fwd.m_final}


def evaluate(
    model: EibModel | None,
    agents,
    tasks: Sequence[TaskItem],
    env: Env,
    samples: int,
    seed: int,
    ablation: str = "full",
    constant: float | None = None,
) -> float:
    """Mean reward over ``samples`` sampled topologies per task.

    With ``constant`` set, every edge probability is that constant and the
    model is ignored (the untrained all-0.5 reference).
    """
    adjs, roll_tasks, seeds = [], [], []
    n = len(agents)
    for task in tasks:
        if constant is not None:
            m = np.full((n, n), float(constant))
        else:
            m = final_mask(model, agents, task, ablation).m_final
        rng = np.random.default_rng(derive_seed(seed, "eval-sample", task.id))
        adjs.append(sample_adjacency(m, rng, samples))
        roll_tasks.extend([task] * samples)
        seeds.extend(derive_seed(seed, "eval-rollout", task.id, s) for s in range(samples))
    rewards = env(np.concatenate(adjs), roll_tasks, np.array(seeds, dtype=np.uint64))
    return float(np.mean(rewards))
