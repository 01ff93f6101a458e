"""Command line entry point: ``mhpseq <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 contract violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..checkpoint import load_checkpoint, save_checkpoint
from ..errors import ContractViolation
from ..generation import InferenceConfig, infer
from ..models import GeneratorModel
from ..toydata import TASKS, generate_task, save_split, save_trajectories, split_dataset, split_path_for
from . import plotting
from .config import ExperimentConfig, applicable_fields, format_config, load_config
from .experiment import evaluate, fit_m2_reference, load_task_data, run_sweep, train_with_early_stopping
from .report import MetricReport, emit_table, write_report

log = logging.getLogger("mhpseq")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_CONTRACT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _cmd_generate(args):
    if args.n < 5:
        raise ContractViolation("--n must be at least 5 so every partition is non-empty")
    trajectories = generate_task(args.task, args.n, args.seed)
    out = Path(args.out)
    save_trajectories(trajectories, out)
    split = split_dataset(len(trajectories), args.seed)
    save_split(split, [t.id for t in trajectories], split_path_for(out))
    print(f"wrote {len(trajectories)} trajectories to {out} (split {split_path_for(out)})")


def _history_dict(hist):
    return {"epochs": hist.epochs, "best_epoch": hist.best_epoch,
            "best_val_loss": hist.best_val_loss, "train_ms_per_batch": hist.train_ms_per_batch}


def _cmd_train(args):
    config = load_config(args.config)
    model, hist = train_with_early_stopping(config)
    meta = {"config": applicable_fields(config), "history": _history_dict(hist)}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, model, epsilon=config.epsilon if config.model == "mhp" else 0.0, meta=meta)
    out.with_suffix(".history.json").write_text(json.dumps(meta["history"], indent=2) + "\n")
    print(f"saved {config.label} checkpoint to {out} (best epoch {hist.best_epoch}, "
          f"val loss {hist.best_val_loss:.5f})")


def _config_from_checkpoint(header, **overrides):
    meta = header.get("meta") or {}
    if "config" not in meta:
        raise ContractViolation("checkpoint carries no experiment config")
    cfg = ExperimentConfig(**meta["config"])
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def _save_figures(report_path, report, evaluations, task):
    report_path = Path(report_path)
    stem = report_path.with_suffix("")
    plotting.save_metrics_figure(f"{stem}.metrics.png", report)
    for name, ev in evaluations.items():
        tag = "".join(ch if ch.isalnum() else "_" for ch in name).strip("_").lower()
        if task == "toy-classification":
            plotting.save_correctness_figure(f"{stem}.{tag}.png", ev.details["points"],
                                             ev.details["set_match"], title=name)
        else:
            d = ev.details
            plotting.save_scene_figure(f"{stem}.{tag}.png", d["observed"], d["truth"],
                                       d["hypotheses"], title=name)


def _cmd_evaluate(args):
    model, header = load_checkpoint(args.checkpoint)
    model_name = None
    if args.gamma is not None:
        if (header.get("meta") or {}).get("config", {}).get("model") not in ("shp", "shp-star"):
            raise ContractViolation("--gamma applies to single-hypothesis (shp) checkpoints only")
        model_name = "shp-star"
    config = _config_from_checkpoint(header, model=model_name, tau=args.tau, gamma=args.gamma,
                                     eval_limit=args.eval_limit, bandwidth=args.bandwidth)
    data = load_task_data(config.task, args.data, config.seed)
    reference = fit_m2_reference(data, config.tau, config.bandwidth, config.seed)
    ev = evaluate(model, data, config, reference)
    report = MetricReport(config.task)
    report.add(config.label, ev.values)
    write_report(report, args.report)
    _save_figures(args.report, report, {config.label: ev}, config.task)
    sys.stdout.write(emit_table(report)[0])


def _read_seed_points(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"seed points not found: {path}")
    text = path.read_text(encoding="utf-8").strip()
    if text.startswith("["):
        pts = np.asarray(json.loads(text), dtype=float)
    else:
        pts = np.loadtxt(path, dtype=float, ndmin=2)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) == 0:
        raise ContractViolation(f"{path}: expected a non-empty list of (x, y) points")
    return pts


def _cmd_infer(args):
    model, header = load_checkpoint(args.checkpoint)
    if not isinstance(model, GeneratorModel):
        raise ContractViolation("infer needs a generator checkpoint")
    seed = _read_seed_points(args.seed_points)
    cfg = (header.get("meta") or {}).get("config", {})
    icfg = InferenceConfig(
        args.depth if args.depth is not None else cfg.get("depth", 8),
        args.steps if args.steps is not None else cfg.get("steps", 20),
        args.threshold if args.threshold is not None else cfg.get("split_threshold", 5.0),
    )
    result = infer(model, seed, icfg)
    hyps = result.hypotheses()
    if args.plot:
        Path(args.plot).write_text(plotting.plot_trajectories(seed, None, list(hyps)), encoding="utf-8")
    print(json.dumps({"split": result.did_split, "hypotheses": hyps.tolist()}))


def _cmd_sweep(args):
    cfg_dir = Path(args.configs)
    paths = sorted(cfg_dir.glob("*.cfg"))
    if not paths:
        raise FileNotFoundError(f"no *.cfg files in {cfg_dir}")
    configs = [load_config(p) for p in paths]
    result = run_sweep(configs, data_override=args.data)
    out = Path(args.out) if args.out else cfg_dir / "report.tsv"
    write_report(result.report, out)
    _save_figures(out, result.report, result.evaluations, result.report.task)
    sys.stdout.write(emit_table(result.report)[0])


def build_parser():
    parser = _Parser(prog="mhpseq", description="Multiple-hypothesis sequence models on toy intersection data.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a toy dataset (JSONL) and its split file")
    p.add_argument("--task", required=True, choices=sorted(TASKS))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="train one config and save a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on the test partition")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--tau", type=float)
    p.add_argument("--gamma", type=float, help="evaluate an SHP checkpoint as SHP* with this threshold")
    p.add_argument("--bandwidth")
    p.add_argument("--eval-limit", type=int)
    p.add_argument("--report", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("infer", help="tree inference from seed points with a generator checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed-points", required=True, help="JSON [[x, y], ...] or two-column text")
    p.add_argument("--depth", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--plot", help="write an SVG of seed and hypotheses")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("sweep", help="train and evaluate every *.cfg in a directory")
    p.add_argument("--configs", required=True)
    p.add_argument("--data", help="override the data path of every config")
    p.add_argument("--out", help="table path (default <configs>/report.tsv)")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("show-config", help="print a config with defaults filled in")
    p.add_argument("config")
    p.set_defaults(func=lambda a: sys.stdout.write(format_config(load_config(a.config))))
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        args.func(args)
    except ContractViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
