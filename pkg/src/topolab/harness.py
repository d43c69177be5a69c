"""Task loading, pool filtering, experiment configs and run artifacts."""

from __future__ import annotations

import hashlib
import json
import logging
import platform
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .agents import LETTERS, AgentSpec, TaskItem, ValidationError, homogeneous_agents
from .causal import BaselineRow, SweepReport, task_seed
from .llm import EndpointConfig
from .protocol import Aggregation, RunConfig, aggregate_batch, run_dialogue, simulate_batch
from .topology import Topology

log = logging.getLogger(__name__)


class ShortfallError(RuntimeError):
    """A correctness pool stayed empty after every task was tried."""


def _parse_gold(raw, k: int, where: str) -> int:
    if isinstance(raw, bool):
        raise ValidationError(f"{where}: gold must be an index or a letter")
    if isinstance(raw, int):
        return raw
    if isinstance(raw, str) and len(raw.strip()) == 1 and raw.strip().upper() in LETTERS[:k]:
        return LETTERS.index(raw.strip().upper())
    raise ValidationError(f"{where}: cannot read gold answer {raw!r}")


def load_tasks(path: str | Path) -> list[TaskItem]:
    """Read JSONL tasks with fields ``id``, ``question``, ``choices``, ``gold``.

    ``alphabet_size`` defaults to the number of choices. ``gold`` may be a
    0-based index or a choice letter.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"task file not found: {path}")
    tasks, seen = [], set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        where = f"{path}:{lineno}"
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{where}: invalid JSON ({exc.msg})") from None
        if not isinstance(row, dict):
            raise ValidationError(f"{where}: expected a JSON object")
        missing = [f for f in ("id", "question", "gold") if f not in row]
        if missing:
            raise ValidationError(f"{where}: missing field(s) {', '.join(missing)}")
        choices = tuple(str(c) for c in row.get("choices", ()))
        k = int(row.get("alphabet_size", len(choices)))
        try:
            task = TaskItem(str(row["id"]), str(row["question"]), k, _parse_gold(row["gold"], k, where), choices)
        except ValidationError as exc:
            raise ValidationError(f"{where}: {exc}") from None
        if task.id in seen:
            raise ValidationError(f"{where}: duplicate task id {task.id!r}")
        seen.add(task.id)
        tasks.append(task)
    if not tasks:
        raise ValidationError(f"{path}: no tasks")
    return tasks


_SUBJECTS = ("algebra", "biology", "chemistry", "history", "law", "logic", "medicine", "physics")


def generate_synthetic_tasks(count: int, k: int = 4, seed: int = 0) -> list[TaskItem]:
    """Deterministic multiple-choice stand-ins with ids ``syn-0000`` onward."""
    if count < 1 or k < 2:
        raise ValidationError("need count >= 1 and alphabet size >= 2")
    rng = np.random.default_rng(seed)
    golds = rng.integers(0, k, size=count)
    subjects = rng.integers(0, len(_SUBJECTS), size=count)
    codes = rng.integers(0, 16**6, size=count)
    tasks = []
    for i in range(count):
        subject = _SUBJECTS[subjects[i]]
        question = f"A {subject} question, item {codes[i]:06x}: which option is correct?"
        choices = tuple(f"{subject} option {LETTERS[a].lower()}" for a in range(k))
        tasks.append(TaskItem(f"syn-{i:04d}", question, k, int(golds[i]), choices))
    return tasks


def check_answer(final: int, task: TaskItem) -> int:
    """1 if ``final`` is the gold index, else 0; out-of-alphabet answers are errors."""
    if isinstance(final, bool) or not isinstance(final, (int, np.integer)) or not 0 <= final < task.alphabet_size:
        raise ValidationError(f"answer {final!r} outside alphabet of size {task.alphabet_size}")
    return int(final == task.gold)


def factual_correctness(t: Topology, agents, tasks: Sequence[TaskItem], cfg: RunConfig) -> np.ndarray:
    """Correctness of the un-intervened run of each task on its own task seed."""
    if cfg.backend == "synthetic" and len({task.alphabet_size for task in tasks}) == 1:
        k = tasks[0].alphabet_size
        gold = np.array([task.gold for task in tasks])
        seeds = np.array([task_seed(cfg, task) for task in tasks], dtype=np.uint64)
        answers = simulate_batch(t.adj, agents, k, gold, seeds, cfg.rounds)
        return aggregate_batch(answers[:, -1, :], cfg.aggregation, k) == gold
    return np.array([run_dialogue(t, agents, task, cfg.with_seed(task_seed(cfg, task))).correct for task in tasks])


def partition_by_correctness(
    t: Topology,
    agents,
    tasks: Sequence[TaskItem],
    cfg: RunConfig,
    target_correct: int,
    target_incorrect: int,
) -> tuple[list[TaskItem], list[TaskItem]]:
    """Fill the correct and incorrect pools up to their targets, in task order."""
    if not tasks:
        raise ValidationError("no tasks to partition")
    hits = factual_correctness(t, agents, tasks, cfg)
    correct = [task for task, h in zip(tasks, hits) if h][:target_correct]
    incorrect = [task for task, h in zip(tasks, hits) if not h][:target_incorrect]
    for name, pool, target in (("correct", correct, target_correct), ("incorrect", incorrect, target_incorrect)):
        if target > 0 and not pool:
            raise ShortfallError(f"{name} pool is empty after all {len(tasks)} tasks")
        if len(pool) < target:
            log.warning("%s pool short: %d of %d", name, len(pool), target)
    return correct, incorrect


# --- configuration ----------------------------------------------------------


@dataclass
class ExperimentConfig:
    agents: list[AgentSpec] = field(default_factory=lambda: homogeneous_agents(6, 0.9, 0.7))
    rounds: int = 3
    aggregation: str = "majority"
    backend: str = "synthetic"
    endpoint: dict | None = None
    alphabet_size: int = 4
    task_file: str | None = None
    task_count: int = 10000
    task_seed: int = 0
    pool_size: int = 500
    sweep_seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    accuracy_reps: int = 1
    reverify: bool = False
    baselines: list[str] = field(default_factory=lambda: ["chain", "star", "tree:2", "layered:3", "random:0.5", "full"])
    train: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    output_dir: str = "out"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown config key(s): {', '.join(unknown)}")
        data = dict(data)
        if "agents" in data:
            data["agents"] = [AgentSpec.from_dict(a) for a in data["agents"]]
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not self.agents:
            raise ValidationError("config needs at least one agent")
        if [a.index for a in self.agents] != list(range(len(self.agents))):
            raise ValidationError("agent indices must be 0..N-1 in order")
        if self.pool_size < 1 or self.task_count < 1 or self.accuracy_reps < 1:
            raise ValidationError("pool_size, task_count and accuracy_reps must be >= 1")
        if not self.sweep_seeds:
            raise ValidationError("sweep_seeds must not be empty")
        if self.backend not in ("synthetic", "llm"):
            raise ValidationError(f"unknown backend {self.backend!r}")
        RunConfig(self.rounds, Aggregation.parse(self.aggregation))

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"config file not found: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc.msg})") from None
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: {exc}") from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["agents"] = [a.to_dict() for a in self.agents]
        return d

    def digest(self) -> str:
        return config_digest(self.to_dict())

    def run_config(self, seed: int = 0) -> RunConfig:
        endpoint = EndpointConfig.from_env(**self.endpoint) if self.backend == "llm" else None
        return RunConfig(self.rounds, Aggregation.parse(self.aggregation), seed, self.backend, endpoint)

    def tasks(self) -> list[TaskItem]:
        if self.task_file:
            return load_tasks(self.task_file)
        return generate_synthetic_tasks(self.task_count, self.alphabet_size, self.task_seed)


def config_digest(data: dict) -> str:
    return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    seed: int
    config: dict
    config_digest: str
    agents: list[dict]
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    version: str = __version__
    python: str = platform.python_version()
    numpy: str = np.__version__
    started: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))
    finished: str | None = None

    def finish(self) -> "RunManifest":
        self.finished = datetime.now(timezone.utc).isoformat(timespec="seconds")
        return self

    @classmethod
    def for_config(cls, command: str, seed: int, cfg: ExperimentConfig, inputs=None) -> "RunManifest":
        return cls(command, seed, cfg.to_dict(), cfg.digest(), [a.to_dict() for a in cfg.agents], dict(inputs or {}))

    def verify(self) -> bool:
        """True when the stored config still hashes to the stored digest."""
        return config_digest(self.config) == self.config_digest

    def write(self, out_dir: str | Path) -> Path:
        path = Path(out_dir) / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def write_text(path: Path, text: str) -> Path:
    """Write with fixed newlines so artifacts are byte-identical across runs."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def sweep_filename(report: SweepReport) -> str:
    return f"sweep_{report.direction}_seed{report.seed}.csv"


def summarize_sweeps(reports: Sequence[SweepReport]) -> str:
    """Seed-averaged TCTE and accuracy per sparsity level, as a text table."""
    lines = []
    for direction in sorted({r.direction for r in reports}):
        group = [r for r in reports if r.direction == direction]
        levels = sorted({round(row.topology_sparsity, 10) for r in group for row in r.rows})
        lines.append(f"{direction} propagation over {len(group)} seed(s)")
        lines.append(f"{'sparsity':>9} {'tcte':>8} {'accuracy':>9} {'queries':>8}")
        for s in levels:
            rows = [row for r in group for row in r.rows if round(row.topology_sparsity, 10) == s]
            lines.append(
                f"{s:9.4f} {np.mean([x.tcte for x in rows]):8.4f} "
                f"{np.mean([x.accuracy for x in rows]):9.4f} {sum(x.n_queries for x in rows):8d}"
            )
        lines.append("")
    return "\n".join(lines)


def summarize_baselines(rows: Sequence[BaselineRow]) -> str:
    lines = [f"{'kind':<12} {'sparsity':>9} {'error':>8} {'insight':>8} {'accuracy':>9}"]
    for r in rows:
        lines.append(f"{r.kind:<12} {r.sparsity:9.4f} {r.error_tcte:8.4f} {r.insight_tcte:8.4f} {r.accuracy:9.4f}")
    return "\n".join(lines) + "\n"


def write_report(
    reports: Sequence[SweepReport],
    out_dir: str | Path,
    manifest: RunManifest,
    baselines: Sequence[BaselineRow] = (),
) -> list[Path]:
    """Write one CSV per sweep, an optional baseline CSV, a summary and the manifest."""
    out = Path(out_dir)
    paths = [write_text(out / sweep_filename(r), r.to_csv()) for r in reports]
    summary = summarize_sweeps(reports) if reports else ""
    if baselines:
        body = BaselineRow.CSV_HEADER + "\n" + "".join(r.csv() + "\n" for r in baselines)
        paths.append(write_text(out / "baselines.csv", body))
        summary += summarize_baselines(baselines)
    paths.append(write_text(out / "summary.txt", summary))
    manifest.outputs = sorted(p.name for p in paths)
    paths.append(manifest.finish().write(out))
    return paths


def read_reports(out_dir: str | Path) -> list[SweepReport]:
    files = sorted(Path(out_dir).glob("sweep_*.csv"))
    if not files:
        raise ValidationError(f"no sweep CSVs in {out_dir}")
    return [SweepReport.from_csv(f.read_text(encoding="utf-8")) for f in files]
