"""Command-line entry points for the distillation pipeline.

Every pipeline stage is available as its own verb so stages can be rerun
and inspected individually; `experiment` runs the whole pipeline over many
seeds and renders the report. Long-form options on `experiment` mirror the
run-config keys; a config file of `key = value` lines supplies defaults
that the flags override.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from .distill import DistillConfig, distill, naive_substitution
from .envs import ENV_NAMES, make_env
from .gmminit import collect_dataset, dataset_matrix, fit_gmm, load_dataset, rules_from_gmm, save_dataset
from .harness import StageError, _stage, evaluate, load_run_config, render_report, run_experiment
from .nfc import NeuroFuzzyController
from .postproc import postprocess
from .qnet import DqnConfig, load_weights, save_weights, train_teacher
from .stats import write_episode_csv
from .util import seed_int

log = logging.getLogger(__name__)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed for this stage")
    p.add_argument("--quiet", action="store_true", help="suppress progress logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fuzzydistill")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-teacher", help="train the deep-Q teacher")
    p.add_argument("--env", required=True, choices=ENV_NAMES)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--episodes", type=int, default=None)
    _add_common(p)

    p = sub.add_parser("collect", help="record (state, teacher-Q) samples")
    p.add_argument("--env", required=True, choices=ENV_NAMES)
    p.add_argument("--teacher", required=True, help="teacher weights file")
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--out", required=True, help="output dataset.csv")
    _add_common(p)

    p = sub.add_parser("init", help="fit the mixture and build the initial rule base")
    p.add_argument("--dataset", required=True)
    p.add_argument("--rules", type=int, default=2)
    p.add_argument("--state-dims", type=int, default=None,
                   help="number of state columns (inferred from q columns by default)")
    p.add_argument("--out", required=True, help="output controller file")
    _add_common(p)

    p = sub.add_parser("distill", help="distill the teacher into a rule base")
    p.add_argument("--env", required=True, choices=ENV_NAMES)
    p.add_argument("--teacher", required=True)
    p.add_argument("--controller", required=True, help="initial rule base")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)

    p = sub.add_parser("naive", help="train a rule base directly with deep-Q (failing baseline)")
    p.add_argument("--env", required=True, choices=ENV_NAMES)
    p.add_argument("--rules", type=int, default=2)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)

    p = sub.add_parser("postprocess", help="merge similar sets and prune weak terms")
    p.add_argument("--controller", required=True)
    p.add_argument("--alpha", type=float, default=0.95)
    p.add_argument("--threshold", type=float, default=0.01)
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)

    p = sub.add_parser("evaluate", help="greedy evaluation of a teacher or controller")
    p.add_argument("--env", required=True, choices=ENV_NAMES)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--teacher")
    group.add_argument("--controller")
    p.add_argument("--episodes", type=int, default=50)
    _add_common(p)

    p = sub.add_parser("report", help="rebuild report.txt and figures from run artifacts")
    p.add_argument("--run-dir", required=True)
    _add_common(p)

    p = sub.add_parser("experiment", help="full multi-seed pipeline with report")
    p.add_argument("--config", default=None, help="key = value config file")
    for key in harness.config_keys():
        p.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}", default=None,
                       metavar="V", help=argparse.SUPPRESS)
    p.add_argument("--quiet", action="store_true")

    return parser


def _setup_logging(quiet: bool) -> None:
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")


def _teacher_config(env_name: str) -> DqnConfig:
    return harness.default_run_config(env_name).teacher


def _distill_config(env_name: str) -> DistillConfig:
    return harness.default_run_config(env_name).distill


def cmd_train_teacher(args) -> None:
    env = make_env(args.env)
    cfg = _teacher_config(args.env)
    if args.episodes is not None:
        cfg.max_episodes = args.episodes
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with _stage("teacher"):
        result = train_teacher(env, cfg, args.seed)
        save_weights(result.model, out / "teacher.weights")
        write_episode_csv(out / "teacher_episodes.csv", result.stats)
    print(f"wrote {out / 'teacher.weights'}")


def cmd_collect(args) -> None:
    env = make_env(args.env)
    with _stage("collect"):
        teacher = load_weights(args.teacher)
        samples = collect_dataset(teacher, env, args.steps, args.seed)
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        save_dataset(samples, args.out, env.feature_names)
    print(f"wrote {args.out} ({len(samples)} samples)")


def cmd_init(args) -> None:
    with _stage("init"):
        samples = load_dataset(args.dataset, n_state_columns=args.state_dims)
        m = len(samples[0].state)
        k = len(samples[0].teacher_q)
        gmm = fit_gmm(dataset_matrix(samples), args.rules, args.seed)
        ctrl = rules_from_gmm(gmm, m, k)
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        ctrl.save(args.out)
    print(f"wrote {args.out} (mixture log-likelihood {gmm.log_likelihoods[-1]:.2f} "
          f"after {len(gmm.log_likelihoods)} iterations)")


def cmd_distill(args) -> None:
    env = make_env(args.env)
    cfg = _distill_config(args.env)
    if args.episodes is not None:
        cfg.episodes = args.episodes
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with _stage("distill"):
        teacher = load_weights(args.teacher)
        student = NeuroFuzzyController.load(args.controller)
        student, stats = distill(teacher, student, env, cfg, args.seed,
                                 checkpoint_dir=out / "checkpoints")
        student.save(out / "controller.distilled")
        write_episode_csv(out / "episodes.csv", stats)
    print(f"wrote {out / 'controller.distilled'}")


def cmd_naive(args) -> None:
    env = make_env(args.env)
    run_cfg = harness.default_run_config(args.env)
    cfg = harness.naive_config(run_cfg)
    if args.episodes is not None:
        cfg.max_episodes = args.episodes
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with _stage("naive"):
        result = naive_substitution(env, args.rules, cfg, args.seed)
        result.model.save(out / "controller.naive")
        write_episode_csv(out / "naive_episodes.csv", result.stats)
    print(f"wrote {out / 'controller.naive'} "
          f"({result.degenerate_skipped} degenerate rows skipped)")


def cmd_postprocess(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with _stage("postprocess"):
        ctrl = NeuroFuzzyController.load(args.controller)
        final, log_lines = postprocess(ctrl, args.alpha, args.threshold)
        final.save(out / "controller.final")
        (out / "simplification.log").write_text("\n".join(log_lines) + ("\n" if log_lines else ""))
    print(f"wrote {out / 'controller.final'} ({len(log_lines)} simplification events)")


def cmd_evaluate(args) -> None:
    env = make_env(args.env)
    with _stage("evaluate"):
        policy = load_weights(args.teacher) if args.teacher else NeuroFuzzyController.load(args.controller)
        result = evaluate(policy, env, args.episodes, args.seed)
    print(f"median {result.median} q1 {result.q1} q3 {result.q3} over {args.episodes} episodes")


def cmd_report(args) -> None:
    with _stage("report"):
        path = render_report(args.run_dir)
    print(f"wrote {path}")


def cmd_experiment(args) -> None:
    overrides = {key: getattr(args, f"cfg_{key}")
                 for key in harness.config_keys()
                 if getattr(args, f"cfg_{key}", None) is not None}
    cfg = load_run_config(args.config, overrides)
    out = run_experiment(cfg)
    print(f"experiment finished; report at {out / 'report.txt'}")


_COMMANDS = {
    "train-teacher": cmd_train_teacher,
    "collect": cmd_collect,
    "init": cmd_init,
    "distill": cmd_distill,
    "naive": cmd_naive,
    "postprocess": cmd_postprocess,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(getattr(args, "quiet", False))
    try:
        _COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
