"""Agents, tasks, prompts, and the do-style intervention.

The synthetic agent answers a multiple-choice task by sampling from a mixture
of its own competence-shaped prior and the empirical distribution of the
answers it received::

    p(a) = (1 - social_weight) * prior(a) + social_weight * freq_incoming(a)

with ``prior(gold) = competence`` and the remainder spread evenly over the
wrong answers. Draws use inverse-CDF sampling of one uniform, which is what
makes common-random-number pairing and exact enumeration possible.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

LETTERS = string.ascii_uppercase


class ValidationError(ValueError):
    """Bad user-supplied data (tasks, configs, interventions)."""


@dataclass(frozen=True)
class AgentSpec:
    index: int
    role_text: str = ""
    competence: float = 0.5
    social_weight: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.competence <= 1.0:
            raise ValidationError(f"agent {self.index}: competence {self.competence} outside [0, 1]")
        if not 0.0 <= self.social_weight <= 1.0:
            raise ValidationError(f"agent {self.index}: social_weight {self.social_weight} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "role_text": self.role_text,
            "competence": self.competence,
            "social_weight": self.social_weight,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AgentSpec":
        return cls(
            index=int(data["index"]),
            role_text=str(data.get("role_text", "")),
            competence=float(data.get("competence", 0.5)),
            social_weight=float(data.get("social_weight", 0.5)),
        )


def homogeneous_agents(n: int, competence: float, social_weight: float, roles: Sequence[str] | None = None) -> list[AgentSpec]:
    roles = roles or [f"Agent {i}: a careful generalist who reasons step by step." for i in range(n)]
    return [AgentSpec(i, roles[i], competence, social_weight) for i in range(n)]


@dataclass(frozen=True)
class TaskItem:
    id: str
    question: str
    alphabet_size: int
    gold: int
    choices: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.alphabet_size < 2:
            raise ValidationError(f"task {self.id}: alphabet size must be >= 2, got {self.alphabet_size}")
        if not 0 <= self.gold < self.alphabet_size:
            raise ValidationError(f"task {self.id}: gold {self.gold} outside [0, {self.alphabet_size})")
        if self.choices is not None:
            object.__setattr__(self, "choices", tuple(self.choices))
            if len(self.choices) != self.alphabet_size:
                raise ValidationError(
                    f"task {self.id}: {len(self.choices)} choices for alphabet size {self.alphabet_size}"
                )

    @property
    def k(self) -> int:
        return self.alphabet_size

    def render(self) -> str:
        """Question text followed by lettered choices, if any."""
        if not self.choices:
            return self.question
        lines = [self.question] + [f"({LETTERS[a]}) {c}" for a, c in enumerate(self.choices)]
        return "\n".join(lines)


@dataclass(frozen=True)
class Prompt:
    system_text: str
    user_text: str

    def messages(self) -> list[dict]:
        return [
            {"role": "system", "content": self.system_text},
            {"role": "user", "content": self.user_text},
        ]


def render_answer(answer: int | str) -> str:
    if isinstance(answer, str):
        return answer
    return f"The answer is ({LETTERS[answer]})."


def compose_prompt(
    spec: AgentSpec,
    task: TaskItem,
    neighbor_msgs: Sequence[tuple[int, str]],
    round_: int = 1,
    history: Sequence[str] = (),
) -> Prompt:
    """Build the system/user prompt pair for one agent turn.

    The user text starts with the question and lists neighbor messages in
    ascending sender order; the system text carries the role and the agent's
    own earlier responses.
    """
    system = spec.role_text
    if history:
        past = "\n".join(f"[round {r + 1}] {text}" for r, text in enumerate(history))
        system = f"{system}\nYour previous responses:\n{past}"
    user = task.render()
    for sender, text in sorted(neighbor_msgs, key=lambda m: m[0]):
        user += f"\nAgent {sender} says: {text}"
    return Prompt(system, user)


def prior(spec: AgentSpec, task: TaskItem) -> np.ndarray:
    k = task.alphabet_size
    p = np.full(k, (1.0 - spec.competence) / (k - 1))
    p[task.gold] = spec.competence
    return p


def answer_distribution(spec: AgentSpec, task: TaskItem, incoming: Sequence[int]) -> np.ndarray:
    """Mixture of the agent's prior and the empirical incoming-answer distribution."""
    k = task.alphabet_size
    base = prior(spec, task)
    counts = np.bincount(np.asarray(incoming, dtype=int), minlength=k).astype(float)
    if counts.shape[0] != k:
        raise ValidationError(f"incoming answer outside alphabet of size {k}")
    total = counts.sum()
    if total == 0:
        return base
    lam = spec.social_weight
    return (1.0 - lam) * base + lam * (counts / total)


def sample_answer(p: np.ndarray, u):
    """Inverse-CDF draw: the smallest ``a`` with ``u < cdf[a]``.

    Works on a single distribution ``(k,)`` with scalar ``u`` or on a batch
    ``(B, k)`` with ``u`` of shape ``(B,)``.
    """
    cdf = np.cumsum(p, axis=-1)
    k = p.shape[-1]
    if p.ndim == 1:
        return min(int(np.count_nonzero(u >= cdf)), k - 1)
    return np.minimum((np.asarray(u)[:, None] >= cdf).sum(axis=1), k - 1)


def synthetic_respond(spec: AgentSpec, task: TaskItem, incoming: Sequence[int], rng) -> int:
    """Sample one answer. ``rng`` is a numpy Generator or an already-drawn uniform."""
    u = rng.random() if isinstance(rng, np.random.Generator) else float(rng)
    return sample_answer(answer_distribution(spec, task, incoming), u)


@dataclass(frozen=True)
class Intervention:
    """Force one agent's output in every round.

    ``mode`` is ``"error"`` (a fixed wrong answer), ``"answer"`` (the gold
    answer) or ``"custom"`` (``value`` is an answer index or a free text, the
    latter modelling an adversarial prompt injection).
    """

    target: int
    mode: str
    value: int | str | None = field(default=None)

    MODES = ("error", "answer", "custom")

    def __post_init__(self):
        if self.mode not in self.MODES:
            raise ValidationError(f"unknown intervention mode {self.mode!r}")
        if self.mode == "custom" and self.value is None:
            raise ValidationError("custom intervention needs a value")
        if self.target < 0:
            raise ValidationError(f"intervention target {self.target} is negative")

    def to_dict(self) -> dict:
        return {"target": self.target, "mode": self.mode, "value": self.value}


def apply_intervention(iv: Intervention, task: TaskItem) -> int | str:
    """The value the targeted agent is forced to emit for this task."""
    if iv.mode == "answer":
        return task.gold
    if iv.mode == "error":
        return (task.gold + 1) % task.alphabet_size
    if isinstance(iv.value, str):
        return iv.value
    value = int(iv.value)
    if not 0 <= value < task.alphabet_size:
        raise ValidationError(f"custom answer {value} outside alphabet of size {task.alphabet_size}")
    return value


def parse_answer(text: str, k: int) -> int | None:
    """Extract a choice letter from a free-text response, ``None`` if absent."""
    import re

    letters = LETTERS[:k]
    m = re.search(r"answer is\s*\(?([%s])\)?" % letters, text, flags=re.IGNORECASE)
    if m is None:
        m = re.search(r"\(([%s])\)" % letters, text)
    if m is None:
        m = re.search(r"\b([%s])\b" % letters, text)
    return None if m is None else letters.index(m.group(1).upper())
