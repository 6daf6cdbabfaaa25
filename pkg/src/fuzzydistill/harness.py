"""Experiment orchestration: evaluation, rule-table and curve rendering,
configuration with per-environment defaults, and the full pipeline
(teacher, dataset, mixture init, distillation, post-processing, report).
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import plots
from .distill import DistillConfig, distill, naive_substitution
from .envs import make_env
from .gmminit import collect_dataset, dataset_matrix, fit_gmm, rules_from_gmm, save_dataset
from .nfc import NeuroFuzzyController, gaussian_membership
from .postproc import greedy_agreement, postprocess
from .qnet import (
    DqnConfig,
    epsilon_greedy,
    greedy_rollout,
    load_weights,
    save_weights,
    train_teacher,
)
from .stats import EpisodeStats, read_episode_csv, write_episode_csv
from .util import fmt_float, rng_for, seed_int

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name for the exit message."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


@contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


# ---------------------------------------------------------------------------
# Evaluation


def quartiles(values) -> tuple[float, float, float]:
    """Median and linearly interpolated first/third quartiles."""
    med, q1, q3 = np.percentile(np.asarray(values, dtype=float), [50, 25, 75])
    return float(med), float(q1), float(q3)


@dataclass
class EvalResult:
    rewards: list[float]
    median: float
    q1: float
    q3: float


def evaluate(policy, env, episodes: int, seed: int) -> EvalResult:
    """Greedy-policy rewards over freshly seeded episodes, with quartiles."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rewards = [greedy_rollout(policy, type(env)(), seed_int(seed, "ep", i))
               for i in range(episodes)]
    med, q1, q3 = quartiles(rewards)
    return EvalResult(rewards=rewards, median=med, q1=q1, q3=q3)


def collect_states(policy, env, n: int, eps: float, seed: int) -> np.ndarray:
    """States visited by the policy with epsilon-greedy exploration."""
    rng = rng_for(seed, "explore")
    probe = type(env)()
    states = []
    episode = 0
    state = probe.reset(seed_int(seed, "episode", episode))
    while len(states) < n:
        states.append(np.array(state.observation))
        probe.step(epsilon_greedy(policy.q_values(state.observation), eps, rng))
        state = probe.state
        if state.done:
            episode += 1
            state = probe.reset(seed_int(seed, "episode", episode))
    return np.array(states)


def teacher_match_threshold(env_name: str, teacher_median: float) -> float:
    """Reward at which a student counts as matching the teacher."""
    if env_name == "cartpole":
        return 0.95 * teacher_median
    if env_name == "mountaincar":
        return teacher_median - 15.0
    raise ValueError(f"no teacher-match rule for {env_name!r}")


# ---------------------------------------------------------------------------
# Rendering


def render_rule_table(ctrl: NeuroFuzzyController, feature_names) -> str:
    """Text table of the rule base, one row per rule.

    Cells name the antecedent set, its center/width, and its importance (two
    decimals, standing in for color intensity). Inputs pruned from a single
    rule render as '-'; inputs pruned from every rule drop their column. The
    last column is the consequent Q-vector with the action it implies.
    """
    if len(feature_names) != ctrl.m:
        raise ValueError("need one feature name per input dimension")
    wn = ctrl.normalized_weights()
    keep = [i for i in range(ctrl.m) if ctrl.active[i].any()]
    headers = [str(feature_names[i]) for i in keep] + ["output"]
    rows = []
    for j in range(ctrl.n):
        cells = []
        for i in keep:
            if ctrl.active[i, j]:
                cells.append(
                    f"A{i}_{ctrl.set_ids[i, j]} "
                    f"({ctrl.mu[i, j]:.3g}, {ctrl.sigma[i, j]:.3g}) w={wn[i, j]:.2f}"
                )
            else:
                cells.append("-")
        q_text = ", ".join(f"{v:.2f}" for v in ctrl.y[j])
        cells.append(f"({q_text}) -> a{int(np.argmax(ctrl.y[j]))}")
        rows.append(cells)
    widths = [max(len(headers[c]), *(len(r[c]) for r in rows)) for c in range(len(headers))]
    def line(parts):
        return "| " + " | ".join(p.ljust(w) for p, w in zip(parts, widths)) + " |"
    sep = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
    return "\n".join([line(headers), sep] + [line(r) for r in rows])


def membership_curve_rows(ctrl: NeuroFuzzyController, feature_names,
                          samples_per_set: int = 101) -> list[tuple]:
    """Sampled membership curves for every distinct active set, for plotting.

    Each set is sampled on an evenly spaced grid spanning exactly mu +- 4
    widths. Rows are (dim, feature, set_label, x, membership).
    """
    if samples_per_set < 2:
        raise ValueError("samples_per_set must be >= 2")
    rows = []
    for i in range(ctrl.m):
        seen = []
        for j in range(ctrl.n):
            if not ctrl.active[i, j] or ctrl.set_ids[i, j] in seen:
                continue
            seen.append(ctrl.set_ids[i, j])
            mu, sigma = float(ctrl.mu[i, j]), float(ctrl.sigma[i, j])
            grid = np.linspace(mu - 4.0 * sigma, mu + 4.0 * sigma, samples_per_set)
            values = gaussian_membership(grid, mu, sigma)
            label = f"A{i}_{ctrl.set_ids[i, j]}"
            rows.extend((i, str(feature_names[i]), label, float(x), float(v))
                        for x, v in zip(grid, values))
    return rows


def write_membership_csv(ctrl: NeuroFuzzyController, feature_names, path,
                         samples_per_set: int = 101) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dim", "feature", "set", "x", "membership"])
        for dim, feat, label, x, v in membership_curve_rows(ctrl, feature_names, samples_per_set):
            writer.writerow([dim, feat, label, fmt_float(x), fmt_float(v)])


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class RunConfig:
    env: str = "cartpole"
    out: str = "runs/cartpole"
    master_seed: int = 0
    seeds: tuple = tuple(range(10))
    rules: int = 2
    dataset_steps: int = 10_000
    gmm_max_iter: int = 200
    gmm_tol: float = 1e-6
    merge_alpha: float = 0.95
    prune_threshold: float = 0.01
    final_eval_episodes: int = 50
    agreement_states: int = 10_000
    include_naive: bool = True
    naive_multiplier: int = 3
    naive_eps_decay_steps: int = 2_000
    figures: bool = True
    reuse_teacher: bool = True
    teacher: DqnConfig = field(default_factory=DqnConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)


def default_run_config(env_name: str, out: str | None = None) -> RunConfig:
    """Paper-default hyperparameters plus per-task training budgets."""
    env_name = env_name.lower()
    cfg = RunConfig(env=env_name, out=out or f"runs/{env_name}")
    if env_name == "cartpole":
        cfg.teacher = DqnConfig(eps_decay_steps=5_000, learning_starts=500,
                                target_sync=250, max_episodes=700,
                                eval_episodes=10, early_stop_reward=495.0)
        cfg.distill = DistillConfig(episodes=20)
    elif env_name == "mountaincar":
        cfg.teacher = DqnConfig(eps_decay_steps=30_000, learning_starts=500,
                                target_sync=250, max_episodes=1500,
                                eval_episodes=10, early_stop_reward=-110.0)
        cfg.distill = DistillConfig(episodes=10)
    else:
        raise ValueError(f"no defaults for environment {env_name!r}")
    return cfg


def naive_config(cfg: RunConfig) -> DqnConfig:
    """Deep-Q settings for the direct-RL baseline at 3x the distillation budget.

    Exploration decays within the shorter budget and learning starts as soon
    as one minibatch exists, so the baseline trains in earnest the whole run.
    """
    return replace(
        cfg.teacher,
        max_episodes=cfg.naive_multiplier * cfg.distill.episodes,
        learning_starts=cfg.teacher.batch_size,
        eps_decay_steps=cfg.naive_eps_decay_steps,
        eval_every=1,
        eval_episodes=cfg.distill.eval_episodes,
        early_stop_reward=None,
    )


_SCALAR_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)
                  if f.name not in ("teacher", "distill")}
_TEACHER_FIELDS = {f.name: f for f in dataclasses.fields(DqnConfig)}
_DISTILL_FIELDS = {f.name: f for f in dataclasses.fields(DistillConfig)}


def config_keys() -> list[str]:
    keys = list(_SCALAR_FIELDS)
    keys += [f"teacher_{name}" for name in _TEACHER_FIELDS]
    keys += [f"distill_{name}" for name in _DISTILL_FIELDS]
    return keys


def _coerce(raw: str, like) -> object:
    if isinstance(like, bool):
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(like, tuple):
        return tuple(int(tok) for tok in raw.replace(",", " ").split())
    if like is None or isinstance(like, float):
        return None if raw.strip().lower() == "none" else float(raw)
    if isinstance(like, int):
        return int(raw)
    return raw


def apply_config_value(cfg: RunConfig, key: str, raw: str) -> None:
    """Set one flattened key (teacher_/distill_ prefixes reach the sub-configs)."""
    if key in _SCALAR_FIELDS:
        current = getattr(cfg, key)
        setattr(cfg, key, _coerce(raw, current))
    elif key.startswith("teacher_") and key[len("teacher_"):] in _TEACHER_FIELDS:
        name = key[len("teacher_"):]
        setattr(cfg.teacher, name, _coerce(raw, getattr(cfg.teacher, name)))
    elif key.startswith("distill_") and key[len("distill_"):] in _DISTILL_FIELDS:
        name = key[len("distill_"):]
        setattr(cfg.distill, name, _coerce(raw, getattr(cfg.distill, name)))
    else:
        raise KeyError(f"unknown config key {key!r}")


def read_config_file(path) -> dict[str, str]:
    """Parse 'key = value' lines; blank lines and #-comments are ignored."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = text.partition("=")
        out[key.strip()] = value.strip()
    return out


def load_run_config(config_path=None, overrides: dict[str, str] | None = None,
                    env: str | None = None) -> RunConfig:
    """Defaults for the environment, then config file values, then overrides."""
    file_values = read_config_file(config_path) if config_path else {}
    env_name = (overrides or {}).get("env") or file_values.get("env") or env or "cartpole"
    cfg = default_run_config(env_name)
    for key, raw in file_values.items():
        apply_config_value(cfg, key, raw)
    for key, raw in (overrides or {}).items():
        apply_config_value(cfg, key, raw)
    return cfg


def write_config_file(cfg: RunConfig, path) -> None:
    lines = []
    for name in _SCALAR_FIELDS:
        value = getattr(cfg, name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{name} = {value}")
    for name in _TEACHER_FIELDS:
        lines.append(f"teacher_{name} = {getattr(cfg.teacher, name)}")
    for name in _DISTILL_FIELDS:
        lines.append(f"distill_{name} = {getattr(cfg.distill, name)}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Experiment pipeline


RESULT_COLUMNS = ("seed", "init_median", "distilled_median", "final_median",
                  "agreement", "pruned_dims", "naive_median")


def _write_results_csv(path, rows: list[dict]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([
                row["seed"],
                fmt_float(row["init_median"]),
                fmt_float(row["distilled_median"]),
                fmt_float(row["final_median"]),
                fmt_float(row["agreement"]),
                row["pruned_dims"],
                fmt_float(row["naive_median"]) if row["naive_median"] is not None else "",
            ])


def read_results_csv(path) -> list[dict]:
    rows = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append({
                "seed": int(rec["seed"]),
                "init_median": float(rec["init_median"]),
                "distilled_median": float(rec["distilled_median"]),
                "final_median": float(rec["final_median"]),
                "agreement": float(rec["agreement"]),
                "pruned_dims": rec["pruned_dims"],
                "naive_median": float(rec["naive_median"]) if rec["naive_median"] else None,
            })
    return rows


def aggregate_curves(per_seed: list[list[float]]):
    """Across-seed median/q1/q3 at each episode index."""
    if not per_seed:
        return []
    length = max(len(s) for s in per_seed)
    rows = []
    for ep in range(length):
        vals = [s[ep] for s in per_seed if ep < len(s) and np.isfinite(s[ep])]
        if not vals:
            rows.append((ep, None, None, None))
            continue
        med, q1, q3 = quartiles(vals)
        rows.append((ep, med, q1, q3))
    return rows


def write_curves_csv(path, distill_curves, naive_curves) -> None:
    length = max(len(distill_curves), len(naive_curves))
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "distill_median", "distill_q1", "distill_q3",
                         "naive_median", "naive_q1", "naive_q3"])
        for ep in range(length):
            row = [ep]
            for curves in (distill_curves, naive_curves):
                if ep < len(curves) and curves[ep][1] is not None:
                    row += [fmt_float(v) for v in curves[ep][1:]]
                else:
                    row += ["", "", ""]
            writer.writerow(row)


def read_curves_csv(path) -> list[dict]:
    rows = []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append({key: (float(val) if val else None) if key != "episode" else int(val)
                         for key, val in rec.items()})
    return rows


def _eval_series(stats: list[EpisodeStats]) -> list[float]:
    return [s.eval_median for s in stats]


def run_experiment(cfg: RunConfig) -> Path:
    """Full pipeline: teacher, then per seed collect / init / distill /
    post-process / evaluate (plus the naive baseline when enabled), then
    aggregate curves, per-seed summaries, the text report, and figures."""
    out = Path(cfg.out)
    with _stage("setup"):
        env = make_env(cfg.env)
        out.mkdir(parents=True, exist_ok=True)
        write_config_file(cfg, out / "config.txt")

    teacher_path = out / "teacher.weights"
    with _stage("teacher"):
        if cfg.reuse_teacher and teacher_path.exists():
            teacher = load_weights(teacher_path)
            log.info("reusing teacher from %s", teacher_path)
        else:
            result = train_teacher(env, cfg.teacher, seed_int(cfg.master_seed, "teacher"))
            teacher = result.model
            save_weights(teacher, teacher_path)
            write_episode_csv(out / "teacher_episodes.csv", result.stats)

    with _stage("teacher-eval"):
        teacher_eval = evaluate(teacher, env, cfg.final_eval_episodes,
                                seed_int(cfg.master_seed, "teacher-eval"))
        with (out / "teacher_eval.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode", "reward"])
            for i, r in enumerate(teacher_eval.rewards):
                writer.writerow([i, fmt_float(r)])
        log.info("teacher eval median %.1f", teacher_eval.median)

    results: list[dict] = []
    distill_series: list[list[float]] = []
    naive_series: list[list[float]] = []
    for seed in cfg.seeds:
        seed_dir = out / f"seed_{seed:02d}"
        seed_dir.mkdir(exist_ok=True)

        with _stage(f"collect[{seed}]"):
            samples = collect_dataset(teacher, env, cfg.dataset_steps,
                                      seed_int(seed, "collect"))
            save_dataset(samples, seed_dir / "dataset.csv", env.feature_names)

        with _stage(f"init[{seed}]"):
            gmm = fit_gmm(dataset_matrix(samples), cfg.rules, seed_int(seed, "gmm"),
                          max_iter=cfg.gmm_max_iter, tol=cfg.gmm_tol)
            ctrl_init = rules_from_gmm(gmm, env.obs_dim, env.n_actions)
            ctrl_init.save(seed_dir / "controller.init")

        with _stage(f"distill[{seed}]"):
            student = ctrl_init.copy()
            student, dstats = distill(teacher, student, env, cfg.distill,
                                      seed_int(seed, "distill"))
            student.save(seed_dir / "controller.distilled")
            write_episode_csv(seed_dir / "episodes.csv", dstats)
            distill_series.append(_eval_series(dstats))

        with _stage(f"postprocess[{seed}]"):
            final, log_lines = postprocess(student, cfg.merge_alpha, cfg.prune_threshold)
            final.save(seed_dir / "controller.final")
            (seed_dir / "simplification.log").write_text(
                "\n".join(log_lines) + ("\n" if log_lines else ""))

        with _stage(f"evaluate[{seed}]"):
            init_eval = evaluate(ctrl_init, env, cfg.final_eval_episodes,
                                 seed_int(seed, "eval-init"))
            distilled_eval = evaluate(student, env, cfg.final_eval_episodes,
                                      seed_int(seed, "eval-distilled"))
            final_eval = evaluate(final, env, cfg.final_eval_episodes,
                                  seed_int(seed, "eval-final"))
            held_out = collect_states(student, env, cfg.agreement_states,
                                      cfg.distill.eps, seed_int(seed, "agreement"))
            agreement = greedy_agreement(student, final, held_out)
            pruned = [env.feature_names[i] for i in range(env.obs_dim)
                      if not final.active[i].any()]

        with _stage(f"membership[{seed}]"):
            write_membership_csv(final, env.feature_names, seed_dir / "membership.csv")
            if cfg.figures:
                plots.render_membership(seed_dir / "membership.csv",
                                        seed_dir / "membership.png")

        naive_median = None
        if cfg.include_naive:
            with _stage(f"naive[{seed}]"):
                nres = naive_substitution(env, cfg.rules, naive_config(cfg),
                                          seed_int(seed, "naive"))
                nres.model.save(seed_dir / "controller.naive")
                write_episode_csv(seed_dir / "naive_episodes.csv", nres.stats)
                naive_series.append(_eval_series(nres.stats))
                naive_eval = evaluate(nres.model, env, cfg.final_eval_episodes,
                                      seed_int(seed, "eval-naive"))
                naive_median = naive_eval.median
                log.info("seed %d naive median %.1f (skipped %d degenerate rows)",
                         seed, naive_median, nres.degenerate_skipped)

        results.append({
            "seed": seed,
            "init_median": init_eval.median,
            "distilled_median": distilled_eval.median,
            "final_median": final_eval.median,
            "agreement": agreement,
            "pruned_dims": ";".join(pruned),
            "naive_median": naive_median,
        })
        log.info("seed %d: init %.1f, distilled %.1f, final %.1f, agreement %.3f",
                 seed, init_eval.median, distilled_eval.median, final_eval.median, agreement)

    with _stage("aggregate"):
        _write_results_csv(out / "results.csv", results)
        write_curves_csv(out / "curves.csv",
                         aggregate_curves(distill_series),
                         aggregate_curves(naive_series))

    with _stage("report"):
        render_report(out)

    return out


def render_report(run_dir) -> Path:
    """Build report.txt (and figures) strictly from the files in the run
    directory, so every printed number is traceable to an artifact."""
    run_dir = Path(run_dir)
    cfg = load_run_config(run_dir / "config.txt")
    env = make_env(cfg.env)

    teacher_rewards = []
    with (run_dir / "teacher_eval.csv").open(newline="") as fh:
        for rec in csv.DictReader(fh):
            teacher_rewards.append(float(rec["reward"]))
    t_med, t_q1, t_q3 = quartiles(teacher_rewards)
    threshold = teacher_match_threshold(cfg.env, t_med)

    results = read_results_csv(run_dir / "results.csv")
    curves = read_curves_csv(run_dir / "curves.csv")

    crossed = None
    for row in curves:
        if row["distill_median"] is not None and row["distill_median"] >= threshold:
            crossed = row["episode"]
            break

    lines: list[str] = []
    lines.append("policy distillation run report")
    lines.append("==============================")
    lines.append(f"environment: {cfg.env}")
    lines.append(f"rules: {cfg.rules}")
    lines.append(f"seeds: {' '.join(str(s) for s in cfg.seeds)}")
    lines.append("")
    lines.append("teacher")
    lines.append("-------")
    lines.append(f"median reward over {len(teacher_rewards)} greedy episodes: "
                 f"{t_med:.1f} (q1 {t_q1:.1f}, q3 {t_q3:.1f})")
    lines.append("")
    lines.append("distillation")
    lines.append("------------")
    lines.append(f"teacher-match threshold: {threshold:.1f}")
    matched = sum(1 for r in results if r["distilled_median"] >= threshold)
    for r in results:
        lines.append(f"  seed {r['seed']}: init {r['init_median']:.1f}, "
                     f"distilled {r['distilled_median']:.1f}, "
                     f"post-processed {r['final_median']:.1f}, "
                     f"agreement {r['agreement']:.3f}")
    lines.append(f"seeds at or above threshold: {matched}/{len(results)}")
    lines.append("first episode with across-seed median at threshold: "
                 + (str(crossed) if crossed is not None else "never"))
    lines.append("")
    lines.append("post-processing")
    lines.append("---------------")
    for r in results:
        pruned = r["pruned_dims"] or "(none)"
        lines.append(f"  seed {r['seed']}: fully pruned inputs: {pruned}")
    lines.append("")
    if any(r["naive_median"] is not None for r in results):
        lines.append("naive direct-RL baseline")
        lines.append("------------------------")
        for r in results:
            if r["naive_median"] is not None:
                lines.append(f"  seed {r['seed']}: median {r['naive_median']:.1f}")
        lines.append("")
    lines.append("rules (post-processed, per seed)")
    lines.append("--------------------------------")
    for r in results:
        ctrl = NeuroFuzzyController.load(run_dir / f"seed_{r['seed']:02d}" / "controller.final")
        lines.append(f"seed {r['seed']}:")
        lines.append(render_rule_table(ctrl, env.feature_names))
        lines.append("")

    report_path = run_dir / "report.txt"
    report_path.write_text("\n".join(lines))

    if cfg.figures:
        plots.render_curves(run_dir / "curves.csv", t_med, run_dir / "curves.png")
        for r in results:
            seed_dir = run_dir / f"seed_{r['seed']:02d}"
            if (seed_dir / "membership.csv").exists():
                plots.render_membership(seed_dir / "membership.csv",
                                        seed_dir / "membership.png")
    return report_path
