"""Per-episode training records and their CSV serialization."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .util import fmt_float

EPISODE_COLUMNS = ("episode", "train_reward", "eval_median", "loss_mean")


@dataclass
class EpisodeStats:
    episode: int
    train_reward: float
    eval_median: float = float("nan")
    loss_mean: float = float("nan")
    wall_time: float = 0.0  # kept in memory only; output files stay reproducible


def write_episode_csv(path, stats: list[EpisodeStats]) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EPISODE_COLUMNS)
        for row in stats:
            writer.writerow(
                [row.episode, fmt_float(row.train_reward), fmt_float(row.eval_median), fmt_float(row.loss_mean)]
            )


def read_episode_csv(path) -> list[EpisodeStats]:
    out = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != EPISODE_COLUMNS:
            raise ValueError(f"unexpected episode CSV header: {header}")
        for row in reader:
            out.append(
                EpisodeStats(
                    episode=int(row[0]),
                    train_reward=float(row[1]),
                    eval_median=float(row[2]),
                    loss_mean=float(row[3]),
                )
            )
    return out
