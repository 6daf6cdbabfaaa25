"""Rule-base initialization from teacher behavior.

Greedy teacher rollouts produce (state, Q-vector) samples; a diagonal
Gaussian mixture fit on the concatenated vectors yields one centroid per
rule. Each centroid splits into antecedent centers/widths (state part) and
a constant consequent (Q part).
"""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nfc import SIGMA_MIN, NeuroFuzzyController
from .util import fmt_float, rng_for, seed_int

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6  # applied in standardized column space


@dataclass
class DistillSample:
    state: np.ndarray
    teacher_q: np.ndarray


@dataclass
class GmmModel:
    """Diagonal-covariance mixture in the original (unstandardized) space."""

    means: np.ndarray       # (K, D)
    variances: np.ndarray   # (K, D)
    weights: np.ndarray     # (K,)
    log_likelihoods: list[float] = field(default_factory=list)

    @property
    def n_components(self) -> int:
        return len(self.weights)


def collect_dataset(teacher, env, num_steps: int, seed: int) -> list[DistillSample]:
    """Run the teacher greedily, pairing each visited state with its Q-vector."""
    if num_steps <= 0:
        raise ValueError("num_steps must be positive")
    samples: list[DistillSample] = []
    episode = 0
    state = env.reset(seed_int(seed, "episode", episode))
    while len(samples) < num_steps:
        obs = state.observation
        q = teacher.q_values(obs)
        samples.append(DistillSample(state=np.array(obs), teacher_q=np.array(q)))
        env.step(int(np.argmax(q)))
        state = env.state
        if state.done:
            episode += 1
            state = env.reset(seed_int(seed, "episode", episode))
    return samples


def dataset_matrix(samples: list[DistillSample]) -> np.ndarray:
    return np.array([np.concatenate([s.state, s.teacher_q]) for s in samples])


def save_dataset(samples: list[DistillSample], path, feature_names) -> None:
    k = len(samples[0].teacher_q)
    header = list(feature_names) + [f"q{i}" for i in range(k)]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for s in samples:
            writer.writerow([fmt_float(v) for v in np.concatenate([s.state, s.teacher_q])])


def load_dataset(path, n_state_columns: int | None = None) -> list[DistillSample]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if n_state_columns is None:
            q_cols = [h for h in header if re.fullmatch(r"q\d+", h)]
            n_state_columns = len(header) - len(q_cols)
        rows = [[float(v) for v in row] for row in reader]
    samples = []
    for row in rows:
        arr = np.array(row)
        samples.append(DistillSample(state=arr[:n_state_columns], teacher_q=arr[n_state_columns:]))
    return samples


# ---------------------------------------------------------------------------
# Diagonal-covariance EM


def _kmeans_pp_centers(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(data)
    centers = [data[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min([((data - c) ** 2).sum(axis=1) for c in centers], axis=0)
        total = d2.sum()
        if total <= 0:
            centers.append(data[rng.integers(n)])
            continue
        centers.append(data[rng.choice(n, p=d2 / total)])
    return np.array(centers)


def _log_gaussian(data, means, variances, mix_weights):
    # (N, K) joint log density of each row under each component
    n, d = data.shape
    diff2 = (data[:, None, :] - means[None]) ** 2
    log_norm = -0.5 * (d * np.log(2.0 * np.pi) + np.log(variances).sum(axis=1))
    quad = -0.5 * (diff2 / variances[None]).sum(axis=2)
    return log_norm[None] + quad + np.log(mix_weights)[None]


def fit_gmm(data, k: int, seed: int, max_iter: int = 200, tol: float = 1e-6) -> GmmModel:
    """EM for a diagonal GMM with k-means++ style seeding.

    Columns are standardized internally (state and Q columns have wildly
    different scales) and the parameters are mapped back afterward, so the
    returned model lives in physical units. An emptied component is reseeded
    from the point the mixture currently explains worst.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ValueError("data must be a 2-D matrix")
    n, d = data.shape
    if k < 1 or n < k:
        raise ValueError(f"need at least k={k} rows, got {n}")

    center = data.mean(axis=0)
    scale = data.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    z = (data - center) / scale

    rng = rng_for(seed, "gmm")
    means = _kmeans_pp_centers(z, k, rng)
    variances = np.ones((k, d))
    mix = np.full(k, 1.0 / k)

    lls: list[float] = []
    for _ in range(max_iter):
        joint = _log_gaussian(z, means, variances, mix)
        row_max = joint.max(axis=1, keepdims=True)
        lse = row_max[:, 0] + np.log(np.exp(joint - row_max).sum(axis=1))
        lls.append(float(lse.sum()))
        resp = np.exp(joint - lse[:, None])

        counts = resp.sum(axis=0)
        empty = counts < 1e-10
        if empty.any():
            worst = int(np.argmin(lse))
            for c in np.flatnonzero(empty):
                means[c] = z[worst]
                variances[c] = np.ones(d)
                mix[c] = 1.0 / k
            mix /= mix.sum()
            log.info("reseeded %d empty mixture component(s)", int(empty.sum()))
            continue

        mix = counts / n
        means = (resp.T @ z) / counts[:, None]
        second = (resp.T @ (z * z)) / counts[:, None]
        variances = np.maximum(second - means**2, VARIANCE_FLOOR)

        if len(lls) >= 2 and lls[-1] - lls[-2] < tol:
            break

    return GmmModel(
        means=means * scale + center,
        variances=variances * scale**2,
        weights=mix.copy(),
        log_likelihoods=lls,
    )


def rules_from_gmm(gmm: GmmModel, m: int, k: int) -> NeuroFuzzyController:
    """One fuzzy rule per mixture component.

    Antecedent centers come from the state part of each component mean,
    widths from the square root of the diagonal variances, and the constant
    consequent from the Q part. All importance weights start at 1 with every
    term active.
    """
    if gmm.means.shape[1] != m + k:
        raise ValueError(f"mixture dimension {gmm.means.shape[1]} != m+k = {m + k}")
    n = gmm.n_components
    mu = gmm.means[:, :m].T
    sigma = np.maximum(np.sqrt(gmm.variances[:, :m].T), SIGMA_MIN)
    consequents = gmm.means[:, m:]
    return NeuroFuzzyController(
        mu=mu,
        sigma=sigma,
        w_raw=np.ones((m, n)),
        active=np.ones((m, n), dtype=bool),
        consequents=consequents,
    )
