#!/usr/bin/env python3
"""Command-line entry point: generate, trace, train, eval, report and run.

Exit codes: 0 success, 1 bad input or usage, 2 internal error.
"""

import argparse
import logging
import sys
from pathlib import Path

from data.algorithms import AlgorithmId, parse_algorithm
from utils.config import ExperimentConfig, config_hash, load_config
from utils.errors import InvalidArgument, WorkbenchError
from utils.experiment import evaluate, pool_graphs, run_experiment, train_regime
from utils.graphgen import DatasetSpec, generate_dataset, parse_family
from utils.serialize import (
    make_header,
    read_checkpoint,
    read_graphs,
    read_metrics,
    write_checkpoint,
    write_graphs,
    write_metrics,
    write_train_report,
    write_traces,
)
from utils.trace_oracle import build_traces

logger = logging.getLogger("workbench")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _base_config(args) -> ExperimentConfig:
    return load_config(args.config) if args.config else ExperimentConfig()


def _training_overrides(args):
    return {
        "regime": args.regime,
        "arch": args.arch,
        "target": args.target,
        "base": args.base,
        "seed": args.seed,
        "lr": args.lr,
        "batch": args.batch,
        "patience": args.patience,
        "trajectories": args.trajectories,
        "trajectory_aggregate": args.aggregate,
        "max_epochs": args.max_epochs,
        "hidden_dim": args.hidden_dim,
        "na_selection_bce": True if args.na_selection_bce else None,
    }


def _graph_files(data):
    path = Path(data)
    if path.is_dir():
        files = sorted(path.glob("*.jsonl"))
        if not files:
            raise InvalidArgument(f"no .jsonl graph files in {path}")
        return files
    return [path]


def _load_graphs(data):
    return pool_graphs([read_graphs(f)[1] for f in _graph_files(data)])


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args):
    cfg = _base_config(args)
    spec = DatasetSpec(
        parse_family(args.family),
        args.nodes if args.nodes is not None else cfg.train_nodes,
        args.count if args.count is not None else cfg.train_count,
        args.seed if args.seed is not None else cfg.seed,
        args.ba_attachment if args.ba_attachment is not None else cfg.ba_attachment,
    )
    header = make_header("graphs", spec.master_seed, config_hash(cfg), family=spec.graph_family.value, n=spec.n)
    path = write_graphs(args.out, generate_dataset(spec), header)
    logger.info("wrote %d graphs to %s", spec.count, path)
    return 0


def cmd_trace(args):
    algo = parse_algorithm(args.algo)
    cfg = _base_config(args)
    seed = args.seed if args.seed is not None else cfg.seed
    graphs = _load_graphs(args.data)
    traces = build_traces(algo, graphs)
    header = make_header("traces", seed, config_hash(cfg), algo=algo.value)
    path = write_traces(args.out, traces, header)
    logger.info("wrote %d %s traces to %s", len(traces), algo.value, path)
    return 0


def cmd_train(args):
    cfg = _base_config(args).with_overrides(**_training_overrides(args))
    rc = cfg.regime_config()
    graphs = _load_graphs(args.data)
    tasks = {rc.target_task, *(b for b in [rc.base_task] if b is not None)}
    tasks |= {parse_algorithm(b) for b in cfg.extra_bases}
    traces = {task: build_traces(task, graphs) for task in tasks}
    params, report, base_params, base_report = train_regime(
        rc, cfg.arch.upper(), traces, cfg.hidden_dim, tuple(parse_algorithm(b) for b in cfg.extra_bases),
    )
    h = config_hash(cfg)
    out = Path(args.out)
    write_checkpoint(out, params, make_header("checkpoint", cfg.seed, h))
    report_path = Path(args.report) if args.report else out.with_name(out.stem + "_report.json")
    write_train_report(report_path, report, make_header("train_report", cfg.seed, h))
    if base_params is not None:
        write_checkpoint(out.with_name(out.stem + "_base.jsonl"), base_params, make_header("checkpoint", cfg.seed, h))
        write_train_report(out.with_name(out.stem + "_base_report.json"), base_report,
                           make_header("train_report", cfg.seed, h))
    logger.info("best validation loss %.6g at epoch %d; checkpoint %s",
                report.best_val_loss, report.best_epoch, out)
    return 0


def cmd_eval(args):
    header, params = read_checkpoint(args.checkpoint)
    task = parse_algorithm(args.target) if args.target else params.tasks[-1]
    eval_sets = {}
    for path in args.data:
        graph_header, graphs = read_graphs(path)
        family = graph_header.get("family", "ER")
        for g in graphs:
            eval_sets.setdefault((family, g.n), []).append(g)
    meta = {"algorithm": task.value, "regime": "TRUE_STEPS" if args.true_steps else "TERMINATION", "arch": params.arch}
    report = evaluate(params, task, eval_sets, args.true_steps, meta)
    out = Path(args.out)
    write_metrics(out, out.with_suffix(".md"), report,
                  make_header("metrics", header.get("seed"), header.get("config_hash"), **meta))
    print(report.summary_table().to_markdown())
    return 0


def cmd_report(args):
    _, report = read_metrics(args.metrics)
    text = report.to_markdown()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        logger.info("wrote %s", args.out)
    else:
        print(text)
    return 0


def cmd_run(args):
    cfg = _base_config(args)
    overrides = {"out": args.out, "seed": args.seed}
    cfg = cfg.with_overrides(**overrides)
    report = run_experiment(cfg, eval_only=args.eval_only)
    print(report.summary_table().to_markdown())
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_training_args(p):
    group = p.add_argument_group("training", "Regime and optimiser settings (override --config).")
    group.add_argument("--regime", help="tf, na, multitask, transfer-freeze, transfer-finetune or transfer-2proc")
    group.add_argument("--arch", help="ne or nepp")
    group.add_argument("--target", help="target algorithm, e.g. dijkstra_s")
    group.add_argument("--base", help="base algorithm for transfer and multi-task regimes")
    group.add_argument("--lr", type=float)
    group.add_argument("--batch", type=int)
    group.add_argument("--patience", type=int)
    group.add_argument("--trajectories", type=int)
    group.add_argument("--aggregate", help="best or mean trajectory aggregation")
    group.add_argument("--max-epochs", type=int)
    group.add_argument("--hidden-dim", type=int)
    group.add_argument("--na-selection-bce", action="store_true",
                       help="add BCE of the selection logits against the sampled pick")


class _Parser(argparse.ArgumentParser):
    """Raises InvalidArgument on usage errors (exit code 1)."""

    def error(self, message):
        raise InvalidArgument(f"{self.prog}: {message}")


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat YAML file of experiment settings")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--seed", type=int)

    parser = _Parser(description="Neural execution workbench for graph algorithms.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="generate a graph dataset")
    p.add_argument("--family", required=True, help="er, ba or grid")
    p.add_argument("--nodes", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--ba-attachment", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("trace", parents=[common], help="run an algorithm over graph files")
    p.add_argument("--algo", required=True, choices=[a.value.lower() for a in AlgorithmId], type=str.lower)
    p.add_argument("--in", "--data", dest="data", required=True, help="graph file or directory of graph files")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("train", parents=[common], help="train an executor")
    _add_training_args(p)
    p.add_argument("--data", required=True, help="graph file or directory of graph files")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--report", help="training report path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--target", help="task to evaluate; defaults to the checkpoint's last task")
    p.add_argument("--data", required=True, nargs="+", help="graph files")
    p.add_argument("--true-steps", action="store_true", help="give rollouts the oracle step count")
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="render a metrics CSV as markdown")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", parents=[common], help="run or resume a whole experiment")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--eval-only", action="store_true", help="re-evaluate an existing checkpoint")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except InvalidArgument as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    try:
        return args.func(args)
    except WorkbenchError as exc:
        logger.error("%s", exc)
        return 1
    except Exception:
        logger.exception("internal error")
        return 2


if __name__ == "__main__":
    sys.exit(main())
