"""K-round message passing over a topology, and answer aggregation.

Within a round agents act in topological order and read their in-neighbors'
current-round answers; from round 2 on each agent also reads its own previous
answer. Agent ``i``'s draw in round ``t`` uses ``stream_uniform(seed, i, t)``,
so a factual and an intervened run with the same seed share every draw except
the target's.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .agents import (
    AgentSpec,
    Intervention,
    Prompt,
    TaskItem,
    ValidationError,
    apply_intervention,
    compose_prompt,
    parse_answer,
    render_answer,
    synthetic_respond,
)
from .llm import EndpointConfig, llm_respond
from .rng import stream_uniform
from .topology import Topology, topological_sort


@dataclass(frozen=True)
class Aggregation:
    """``majority``, ``last`` (last agent in execution order) or ``judge``."""

    mode: str = "majority"
    judge: int | None = None

    def __post_init__(self):
        if self.mode not in ("majority", "last", "judge"):
            raise ValidationError(f"unknown aggregation {self.mode!r}")
        if self.mode == "judge" and (self.judge is None or self.judge < 0):
            raise ValidationError("judge aggregation needs a non-negative agent index")

    @classmethod
    def parse(cls, text: str) -> "Aggregation":
        mode, _, arg = text.partition(":")
        return cls(mode, int(arg)) if arg else cls(mode)

    def label(self) -> str:
        return f"judge:{self.judge}" if self.mode == "judge" else self.mode


@dataclass(frozen=True)
class RunConfig:
    rounds: int = 3
    aggregation: Aggregation = field(default_factory=Aggregation)
    seed: int = 0
    backend: str = "synthetic"
    endpoint: EndpointConfig | None = None
    keep_prompts: bool = False

    def __post_init__(self):
        if self.rounds < 1:
            raise ValidationError(f"rounds must be >= 1, got {self.rounds}")
        if self.backend not in ("synthetic", "llm"):
            raise ValidationError(f"unknown backend {self.backend!r}")
        if self.backend == "llm" and self.endpoint is None:
            raise ValidationError("llm backend needs an endpoint configuration")

    def with_seed(self, seed: int) -> "RunConfig":
        return RunConfig(self.rounds, self.aggregation, seed, self.backend, self.endpoint, self.keep_prompts)


@dataclass
class Transcript:
    answers: list[list]  # K rows x N columns
    prompts: list[tuple[int, int, Prompt]] | None = None
    message_chars: int = 0


@dataclass
class Outcome:
    final: int
    correct: int
    transcript: Transcript

    def to_dict(self, task_id: str, seed: int) -> dict:
        return {
            "task_id": task_id,
            "seed": seed,
            "answers": self.transcript.answers,
            "final": self.final,
            "correct": self.correct,
            "message_chars": self.transcript.message_chars,
        }

    def to_json(self, task_id: str, seed: int) -> str:
        return json.dumps(self.to_dict(task_id, seed), separators=(",", ":"))


def aggregate(answers: Sequence[int], agg: Aggregation, k: int, order: Sequence[int] | None = None) -> int:
    """Combine final-round answers. Majority ties go to the smallest answer index.

    Unparseable answers (negative values) are ignored by the majority vote.
    """
    if len(answers) == 0:
        raise ValidationError("cannot aggregate an empty answer list")
    if agg.mode == "judge":
        if agg.judge >= len(answers):
            raise ValidationError(f"judge {agg.judge} out of range for {len(answers)} agents")
        return int(answers[agg.judge])
    if agg.mode == "last":
        last = order[-1] if order is not None else len(answers) - 1
        return int(answers[last])
    valid = [a for a in answers if a >= 0]
    if not valid:
        return -1
    return int(np.argmax(np.bincount(valid, minlength=k)))


def aggregate_batch(answers: np.ndarray, agg: Aggregation, k: int) -> np.ndarray:
    """Vectorized :func:`aggregate` over rows of a ``(B, N)`` answer matrix."""
    if agg.mode == "judge":
        return answers[:, agg.judge]
    if agg.mode == "last":
        return answers[:, -1]
    counts = (answers[:, :, None] == np.arange(k)).sum(axis=1)
    return counts.argmax(axis=1)


def _check(t: Topology, agents: Sequence[AgentSpec], cfg: RunConfig, iv: Intervention | None):
    if len(agents) != t.n:
        raise ValidationError(f"{len(agents)} agents for a topology over {t.n}")
    if cfg.aggregation.mode == "judge" and cfg.aggregation.judge >= t.n:
        raise ValidationError(f"judge {cfg.aggregation.judge} out of range for n={t.n}")
    if iv is not None and iv.target >= t.n:
        raise ValidationError(f"intervention target {iv.target} out of range for n={t.n}")


def run_dialogue(
    t: Topology,
    agents: Sequence[AgentSpec],
    task: TaskItem,
    cfg: RunConfig,
    iv: Intervention | None = None,
    client=None,
) -> Outcome:
    """Run one K-round dialogue and aggregate the last round."""
    _check(t, agents, cfg, iv)
    order = topological_sort(t)
    forced_answer, forced_text = -1, ""
    if iv is not None:
        forced = apply_intervention(iv, task)
        forced_text = render_answer(forced)
        forced_answer = forced if isinstance(forced, int) else _parsed(forced, task.k)
        if cfg.backend == "synthetic" and forced_answer < 0:
            raise ValidationError("synthetic agents can only be forced to an answer index")
    neighbors = [t.in_neighbors(i) for i in range(t.n)]
    texts: list[list[str]] = []
    answers: list[list[int]] = []
    prompts = [] if cfg.keep_prompts else None
    chars = 0
    for rnd in range(1, cfg.rounds + 1):
        row = [0] * t.n
        row_text = [""] * t.n
        for i in order:
            msgs = [(j, row_text[j]) for j in neighbors[i]]
            chars += sum(len(m) for _, m in msgs)
            if iv is not None and i == iv.target:
                row[i], row_text[i] = forced_answer, forced_text
                continue
            needs_prompt = cfg.backend == "llm" or prompts is not None
            prompt = None
            if needs_prompt:
                history = [texts[r][i] for r in range(rnd - 1)]
                prompt = compose_prompt(agents[i], task, msgs, rnd, history)
                if prompts is not None:
                    prompts.append((rnd, i, prompt))
            if cfg.backend == "llm":
                reply = llm_respond(agents[i], prompt, cfg.endpoint, client=client)
                row_text[i] = reply
                row[i] = _parsed(reply, task.k)
            else:
                incoming = [row[j] for j in neighbors[i]]
                if rnd >= 2:
                    incoming.append(answers[-1][i])
                u = float(stream_uniform(cfg.seed, i, rnd))
                row[i] = synthetic_respond(agents[i], task, incoming, u)
                row_text[i] = render_answer(row[i])
        answers.append(row)
        texts.append(row_text)
    final = aggregate(answers[-1], cfg.aggregation, task.k, order)
    transcript = Transcript(answers=answers, prompts=prompts, message_chars=chars)
    return Outcome(final=final, correct=int(final == task.gold), transcript=transcript)


def _parsed(text: str, k: int) -> int:
    a = parse_answer(text, k)
    return -1 if a is None else a


def _batch_params(agents: Sequence[AgentSpec]) -> tuple[np.ndarray, np.ndarray]:
    c = np.array([a.competence for a in agents], dtype=float)
    lam = np.array([a.social_weight for a in agents], dtype=float)
    return c, lam


def simulate_batch(
    adj: np.ndarray,
    agents: Sequence[AgentSpec],
    k: int,
    gold: np.ndarray,
    seeds: np.ndarray,
    rounds: int,
    target: np.ndarray | None = None,
    forced: np.ndarray | None = None,
) -> np.ndarray:
    """Synthetic dialogues for a batch of (gold, seed, intervention) rows.

    Reproduces :func:`run_dialogue` draw for draw. ``adj`` is either one
    ``(N, N)`` receive matrix shared by the batch or a ``(B, N, N)`` stack;
    ``target[b] = -1`` means no intervention in row ``b``. Returns answers of
    shape ``(B, rounds, N)``.
    """
    adj = np.asarray(adj, dtype=bool)
    n = adj.shape[-1]
    gold = np.asarray(gold, dtype=np.int64)
    seeds = np.asarray(seeds, dtype=np.uint64)
    b = gold.shape[0]
    shared = adj.ndim == 2
    if target is None:
        target = np.full(b, -1, dtype=np.int64)
        forced = np.zeros(b, dtype=np.int64)
    c, lam = _batch_params(agents)
    rows = np.arange(b)
    is_gold = np.zeros((b, k), dtype=bool)
    is_gold[rows, gold] = True
    out = np.zeros((b, rounds, n), dtype=np.int64)
    for rnd in range(1, rounds + 1):
        cur = out[:, rnd - 1, :]
        for i in range(n):  # canonical order is a valid topological order
            counts = np.zeros((b, k))
            for j in range(i):
                if shared:
                    if adj[i, j]:
                        counts[rows, cur[:, j]] += 1.0
                else:
                    counts[rows, cur[:, j]] += adj[:, i, j]
            if rnd >= 2:
                counts[rows, out[:, rnd - 2, i]] += 1.0
            prior = np.where(is_gold, c[i], (1.0 - c[i]) / (k - 1))
            total = counts.sum(axis=1, keepdims=True)
            social = (1.0 - lam[i]) * prior + lam[i] * (counts / np.maximum(total, 1.0))
            p = np.where(total > 0, social, prior)
            u = stream_uniform(seeds, i, rnd)
            cdf = np.cumsum(p, axis=1)
            a = np.minimum((u[:, None] >= cdf).sum(axis=1), k - 1)
            cur[:, i] = np.where(target == i, forced, a)
    return out


def message_char_count(t: Topology, answers: Sequence[Sequence[int]]) -> int:
    """Characters delivered over all edges given a synthetic answer matrix."""
    return sum(len(render_answer(row[j])) for row in answers for i, j in t.edges)
