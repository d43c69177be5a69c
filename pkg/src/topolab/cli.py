"""Command-line entry points: ``topolab <command> [options]``.

Exit status is 0 on success, 1 on invalid input or usage, 2 on runtime or
backend failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .agents import Intervention, TaskItem, ValidationError
from .causal import baseline_suite, sweep_error_propagation, sweep_insight_propagation
from .eib.model import ABLATIONS, EibModel, Hyper
from .eib.train import DialogueEnv, SyntheticEnv, TrainConfig, TrainingError, design_topology, train
from .harness import (
    ExperimentConfig,
    RunManifest,
    ShortfallError,
    file_digest,
    partition_by_correctness,
    read_reports,
    summarize_sweeps,
    write_report,
    write_text,
)
from .llm import BackendError
from .protocol import run_dialogue
from .rng import as_seed, derive_seed
from .topology import Topology, TopologyKind, build_named, chain, densify_path, full, sparsify_path

log = logging.getLogger("topolab")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="experiment config (JSON)")
    parser.add_argument("--seed", type=int, default=default, help="master seed (overrides config)")
    parser.add_argument("--out", default=default, help="output directory (overrides config)")
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="topolab", description="Communication-topology experiments for multi-agent systems.")
    _global_flags(parser, suppress=False)
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen", parents=[common], help="emit a named topology as JSON")
    p.add_argument("--kind", required=True, help="full, chain, star, layered:L, random:P or tree:B")
    p.add_argument("--n", type=int, help="number of agents (defaults to the config's)")

    p = sub.add_parser("run", parents=[common], help="run one dialogue")
    p.add_argument("--kind", default="full")
    p.add_argument("--topology", help="topology JSON file (overrides --kind)")
    p.add_argument("--task-id", help="task to run (default: the first)")
    p.add_argument("--intervene", help="AGENT:MODE[:VALUE], MODE in error/answer/custom")

    p = sub.add_parser("sweep", parents=[common], help="error or insight propagation along a sweep path")
    p.add_argument("--mode", choices=("error", "insight"), required=True)

    sub.add_parser("baselines", parents=[common], help="TCTE and accuracy for the named topologies")

    p = sub.add_parser("train", parents=[common], help="train the topology generator")
    p.add_argument("--steps", type=int, help="maximum update steps")
    p.add_argument("--ablation", choices=ABLATIONS)

    p = sub.add_parser("design", parents=[common], help="design a topology for one query")
    p.add_argument("--model", help="checkpoint (default: <out>/model.json)")
    p.add_argument("--task-id")
    p.add_argument("--question", help="free-text query instead of a task id")
    p.add_argument("--ablation", choices=ABLATIONS, default="full")

    sub.add_parser("report", parents=[common], help="re-render the summary of sweep CSVs in --out")
    return parser


def _load_config(args) -> ExperimentConfig:
    return ExperimentConfig.load(args.config) if args.config else ExperimentConfig()


def _out_dir(args, cfg) -> Path:
    return Path(args.out or cfg.output_dir)


def _inputs(args, cfg) -> dict:
    inputs = {}
    if args.config:
        inputs[str(args.config)] = file_digest(args.config)
    if cfg.task_file:
        inputs[str(cfg.task_file)] = file_digest(cfg.task_file)
    return inputs


def _pick_task(tasks, task_id) -> TaskItem:
    if task_id is None:
        return tasks[0]
    for task in tasks:
        if task.id == task_id:
            return task
    raise ValidationError(f"unknown task id {task_id!r}")


def _parse_intervention(text: str) -> Intervention:
    parts = text.split(":", 2)
    if len(parts) < 2:
        raise ValidationError(f"intervention must look like AGENT:MODE[:VALUE], got {text!r}")
    value = parts[2] if len(parts) == 3 else None
    if value is not None and value.isdigit():
        value = int(value)
    try:
        return Intervention(int(parts[0]), parts[1], value)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def cmd_gen(args, cfg) -> int:
    n = args.n if args.n is not None else len(cfg.agents)
    rng = np.random.default_rng(as_seed(args.seed or 0))
    topo = build_named(TopologyKind.parse(args.kind), n, rng)
    text = topo.to_json()
    print(text)
    if args.out:
        write_text(Path(args.out) / "topology.json", text + "\n")
    return EXIT_OK


def cmd_run(args, cfg) -> int:
    run = cfg.run_config(as_seed(args.seed or 0))
    n = len(cfg.agents)
    if args.topology:
        topo = Topology.from_json(Path(args.topology).read_text(encoding="utf-8"))
    else:
        topo = build_named(TopologyKind.parse(args.kind), n, np.random.default_rng(run.seed))
    task = _pick_task(cfg.tasks(), args.task_id)
    iv = _parse_intervention(args.intervene) if args.intervene else None
    outcome = run_dialogue(topo, cfg.agents, task, run, iv)
    text = outcome.to_json(task.id, run.seed)
    print(text)
    if args.out:
        write_text(Path(args.out) / "outcome.json", text + "\n")
    return EXIT_OK


def _sweep_seeds(args, cfg) -> list[int]:
    return [as_seed(args.seed)] if args.seed is not None else [as_seed(s) for s in cfg.sweep_seeds]


def cmd_sweep(args, cfg) -> int:
    tasks = cfg.tasks()
    n = len(cfg.agents)
    reports = []
    for seed in _sweep_seeds(args, cfg):
        run = cfg.run_config(seed)
        rng = np.random.default_rng(derive_seed(seed, "path"))
        if args.mode == "error":
            pool, _ = partition_by_correctness(full(n), cfg.agents, tasks, run, cfg.pool_size, 0)
            report = sweep_error_propagation(cfg.agents, pool, run, sparsify_path(n, rng), cfg.reverify, cfg.accuracy_reps)
        else:
            _, pool = partition_by_correctness(chain(n), cfg.agents, tasks, run, 0, cfg.pool_size)
            report = sweep_insight_propagation(cfg.agents, pool, run, densify_path(n, rng), cfg.reverify, cfg.accuracy_reps)
        log.info("%s sweep seed %d: %d queries", args.mode, seed, len(pool))
        reports.append(report)
    out = _out_dir(args, cfg)
    manifest = RunManifest.for_config(f"sweep --mode {args.mode}", reports[0].seed, cfg, _inputs(args, cfg))
    write_report(reports, out, manifest)
    print(summarize_sweeps(reports), end="")
    return EXIT_OK


def cmd_baselines(args, cfg) -> int:
    tasks = cfg.tasks()
    n = len(cfg.agents)
    seed = _sweep_seeds(args, cfg)[0]
    run = cfg.run_config(seed)
    correct, _ = partition_by_correctness(full(n), cfg.agents, tasks, run, cfg.pool_size, 0)
    _, incorrect = partition_by_correctness(chain(n), cfg.agents, tasks, run, 0, cfg.pool_size)
    kinds = [TopologyKind.parse(k) for k in cfg.baselines]
    rows = baseline_suite(cfg.agents, correct, incorrect, run, kinds, cfg.accuracy_reps)
    paths = write_report([], _out_dir(args, cfg), RunManifest.for_config("baselines", seed, cfg, _inputs(args, cfg)), rows)
    print(Path(paths[-2]).read_text(encoding="utf-8"), end="")
    return EXIT_OK


def _env(cfg, run):
    return SyntheticEnv(cfg.agents, run) if run.backend == "synthetic" else DialogueEnv(cfg.agents, run)


def _hyper(cfg) -> tuple[Hyper, str]:
    opts = dict(cfg.model)
    salt = str(opts.pop("salt", "topolab"))
    try:
        return Hyper(**opts), salt
    except TypeError as exc:
        raise ValidationError(f"bad model options: {exc}") from None


def cmd_train(args, cfg) -> int:
    opts = dict(cfg.train)
    if args.seed is not None:
        opts["seed"] = as_seed(args.seed)
    if args.steps is not None:
        opts["max_steps"] = args.steps
    if args.ablation:
        opts["ablation"] = args.ablation
    try:
        tcfg = TrainConfig(**opts)
    except TypeError as exc:
        raise ValidationError(f"bad train options: {exc}") from None
    hyper, salt = _hyper(cfg)
    model = EibModel.init(hyper, derive_seed(tcfg.seed, "init"), salt)
    run = cfg.run_config(tcfg.seed)
    history = train(model, cfg.agents, cfg.tasks(), _env(cfg, run), tcfg)
    out = _out_dir(args, cfg)
    model.save(out / "model.json")
    lines = ["step,mean_reward,grad_norm,alpha_dense,edge_prob"]
    lines += [
        f"{h.step},{h.mean_reward:.10f},{h.grad_norm:.10f},{h.mean_alpha_dense:.10f},{h.mean_edge_prob:.10f}" for h in history
    ]
    write_text(out / "train_log.csv", "\n".join(lines) + "\n")
    manifest = RunManifest.for_config("train", tcfg.seed, cfg, _inputs(args, cfg))
    manifest.outputs = ["model.json", "train_log.csv"]
    manifest.finish().write(out)
    last = history[-1] if history else None
    print(f"trained {len(history)} steps" + (f", last mean reward {last.mean_reward:.4f}" if last else ""))
    return EXIT_OK


def cmd_design(args, cfg) -> int:
    out = _out_dir(args, cfg)
    model = EibModel.load(Path(args.model) if args.model else out / "model.json")
    if args.question:
        task = TaskItem("query", args.question, cfg.alphabet_size, 0)
    else:
        task = _pick_task(cfg.tasks(), args.task_id)
    rng = np.random.default_rng(derive_seed(as_seed(args.seed or 0), "design", task.id))
    topo, info = design_topology(model, cfg.agents, task, rng, args.ablation)
    write_text(out / "topology.json", topo.to_json() + "\n")
    detail = {"task_id": task.id, "alpha": info["alpha"].tolist(), "edge_probs": info["m_final"].tolist()}
    write_text(out / "design.json", json.dumps(detail, indent=2) + "\n")
    print(topo.to_json())
    return EXIT_OK


def cmd_report(args, cfg) -> int:
    out = _out_dir(args, cfg)
    text = summarize_sweeps(read_reports(out))
    write_text(out / "summary.txt", text)
    print(text, end="")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "baselines": cmd_baselines,
    "train": cmd_train,
    "design": cmd_design,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "topolab: error: a command is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        return COMMANDS[args.command](args, _load_config(args))
    except (BackendError, TrainingError, ShortfallError, OSError) as exc:
        print(f"topolab: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:  # ValidationError, TopologyError, CheckpointError
        print(f"topolab: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
