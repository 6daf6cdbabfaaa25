"""Neuro-fuzzy controller: Gaussian sets, weighted product conjunction,
normalized rule mixing with constant consequent Q-vectors, and analytic
gradients for every parameter.

Rule j fires with strength R_j = prod_i A_ij(x_i)^w'_ij over its active
antecedent terms, where A_ij(x) = exp(-((x - mu_ij)/sigma_ij)^2) and each
importance weight is divided by the largest weight of its rule, so the most
important term of every rule always has importance 1. The output is the
activation-weighted average of the consequent vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .util import fmt_float

SIGMA_MIN = 1e-3
DEGENERATE_EPS = 1e-300

RULES_MAGIC = "nfc-rules v1"


def gaussian_membership(x, mu, sigma):
    z = (np.asarray(x, dtype=float) - mu) / sigma
    return np.exp(-(z * z))


@dataclass
class FuzzySetParams:
    """One Gaussian antecedent set; count tracks how many originals it averages."""

    mu: float
    sigma: float
    count: int = 1


def membership(fset: FuzzySetParams, x: float) -> float:
    return float(gaussian_membership(x, fset.mu, fset.sigma))


@dataclass
class BatchForward:
    q: np.ndarray            # (B, k)
    activations: np.ndarray  # (B, n) rule firing strengths
    normalized: np.ndarray   # (B, n) shares summing to 1
    degenerate: np.ndarray   # (B,) rows where all activations underflowed


@dataclass
class ForwardSample:
    q: np.ndarray
    activations: np.ndarray
    normalized: np.ndarray
    degenerate: bool


class NeuroFuzzyController:
    """Rule base over m inputs, n rules, and k-dimensional constant consequents.

    Parameter arrays are (m, n) for the antecedent grid and (n, k) for the
    consequents. Effective importance weights are max(w_raw, 0); the active
    mask excludes pruned terms from activation, normalization, and training.
    set_ids records which rules share an antecedent set after merging.
    """

    def __init__(self, mu, sigma, w_raw, active, consequents,
                 set_ids=None, counts=None):
        self.mu = np.array(mu, dtype=float)
        self.sigma = np.maximum(np.array(sigma, dtype=float), SIGMA_MIN)
        self.w_raw = np.array(w_raw, dtype=float)
        self.active = np.array(active, dtype=bool)
        self.y = np.array(consequents, dtype=float)
        m, n = self.mu.shape
        if self.sigma.shape != (m, n) or self.w_raw.shape != (m, n) or self.active.shape != (m, n):
            raise ValueError("antecedent arrays must all be (m, n)")
        if self.y.ndim != 2 or self.y.shape[0] != n:
            raise ValueError("consequents must be (n, k)")
        if not self.active.any(axis=0).all():
            raise ValueError("every rule needs at least one active antecedent term")
        self.set_ids = (np.array(set_ids, dtype=int) if set_ids is not None
                        else np.tile(np.arange(n), (m, 1)))
        self.counts = (np.array(counts, dtype=int) if counts is not None
                       else np.ones((m, n), dtype=int))
        for arr in (self.mu, self.sigma, self.w_raw, self.y):
            if not np.isfinite(arr).all():
                raise ValueError("controller parameters must be finite")

    # -- shape accessors ----------------------------------------------------

    @property
    def m(self) -> int:
        return self.mu.shape[0]

    @property
    def n(self) -> int:
        return self.mu.shape[1]

    @property
    def k(self) -> int:
        return self.y.shape[1]

    @property
    def n_actions(self) -> int:
        return self.k

    def copy(self) -> "NeuroFuzzyController":
        return NeuroFuzzyController(self.mu.copy(), self.sigma.copy(), self.w_raw.copy(),
                                    self.active.copy(), self.y.copy(),
                                    set_ids=self.set_ids.copy(), counts=self.counts.copy())

    def params(self) -> dict:
        return {"mu": self.mu, "sigma": self.sigma, "w_raw": self.w_raw, "y": self.y}

    def post_update(self) -> None:
        np.maximum(self.sigma, SIGMA_MIN, out=self.sigma)

    def set_params(self, i: int, j: int) -> FuzzySetParams:
        return FuzzySetParams(mu=float(self.mu[i, j]), sigma=float(self.sigma[i, j]),
                              count=int(self.counts[i, j]))

    # -- inference ----------------------------------------------------------

    def weights(self) -> np.ndarray:
        return np.maximum(self.w_raw, 0.0)

    def normalized_weights(self) -> np.ndarray:
        """Importance weights divided by their rule's largest active weight.

        Inactive terms get 0. A rule whose active weights are all zero keeps
        them at zero, which makes that rule fire with constant strength 1.
        """
        w = np.where(self.active, self.weights(), 0.0)
        wmax = w.max(axis=0)
        out = np.zeros_like(w)
        pos = wmax > 0
        out[:, pos] = w[:, pos] / wmax[pos]
        return out

    def _parts(self, states):
        x = np.asarray(states, dtype=float)
        diff = (x[:, :, None] - self.mu[None]) / self.sigma[None]
        d2 = diff * diff
        wn = self.normalized_weights()
        log_r = -(d2 * wn[None]).sum(axis=1)
        r = np.exp(log_r)
        total = r.sum(axis=1)
        degenerate = total < DEGENERATE_EPS
        rbar = np.empty_like(r)
        ok = ~degenerate
        rbar[ok] = r[ok] / total[ok, None]
        rbar[degenerate] = 1.0 / self.n
        return x, diff, d2, wn, r, total, degenerate, rbar

    def forward_batch(self, states) -> BatchForward:
        states = np.asarray(states, dtype=float)
        if states.ndim != 2 or states.shape[1] != self.m:
            raise ValueError(f"expected (B, {self.m}) states, got {states.shape}")
        _, _, _, _, r, _, degenerate, rbar = self._parts(states)
        return BatchForward(q=rbar @ self.y, activations=r, normalized=rbar,
                            degenerate=degenerate)

    def forward(self, x) -> ForwardSample:
        out = self.forward_batch(np.asarray(x, dtype=float)[None])
        return ForwardSample(q=out.q[0], activations=out.activations[0],
                             normalized=out.normalized[0], degenerate=bool(out.degenerate[0]))

    def q_values(self, obs) -> np.ndarray:
        return self.forward(obs).q

    def batch_q(self, states) -> np.ndarray:
        return self.forward_batch(states).q

    def batch_q_with_mask(self, states):
        out = self.forward_batch(states)
        return out.q, ~out.degenerate

    def greedy(self, obs) -> int:
        return int(np.argmax(self.q_values(obs)))

    # -- gradients ------------------------------------------------------------

    def backward_batch(self, states, grad_q) -> dict:
        """Gradients of sum(grad_q * Q(states)) for mu, sigma, w_raw, and y.

        Degenerate rows contribute nothing. The per-rule max in the weight
        normalization routes its subgradient to the lowest-index maximal
        weight; the clamp to non-negative weights passes gradient only where
        w_raw > 0.
        """
        grad_q = np.asarray(grad_q, dtype=float)
        x, diff, d2, wn, r, total, degenerate, rbar = self._parts(np.asarray(states, dtype=float))
        g = np.where(degenerate[:, None], 0.0, grad_q)

        d_y = rbar.T @ g
        c = g @ self.y.T                                   # dL/d rbar
        safe_total = np.where(degenerate, 1.0, total)
        d_r = (c - (rbar * c).sum(axis=1, keepdims=True)) / safe_total[:, None]
        d_r[degenerate] = 0.0
        d_log_r = d_r * r

        d_wn = -np.einsum("bn,bmn->mn", d_log_r, d2)
        d_d2 = -(d_log_r[:, None, :] * wn[None])
        d_mu = (d_d2 * (-2.0 * diff / self.sigma[None])).sum(axis=0)
        d_sigma = (d_d2 * (-2.0 * d2 / self.sigma[None])).sum(axis=0)

        # through w'_ij = w_ij / max_i(w_ij) over active terms
        w = self.weights()
        s = np.where(self.active, d_wn, 0.0)
        w_act = np.where(self.active, w, -np.inf)
        istar = np.argmax(w_act, axis=0)
        cols = np.arange(self.n)
        wmax = w[istar, cols]
        safe = wmax > 0
        star = np.zeros_like(self.active)
        star[istar, cols] = True
        star &= self.active
        nonstar = self.active & ~star
        denom = np.where(safe, wmax, 1.0)
        d_w = np.where(nonstar, s / denom, 0.0)
        d_star = -np.where(nonstar, s * w, 0.0).sum(axis=0) / (denom * denom)
        d_w[istar, cols] = np.where(safe, d_star, 0.0)
        d_w[:, ~safe] = 0.0
        d_w_raw = np.where(self.w_raw > 0, d_w, 0.0)

        return {"mu": d_mu, "sigma": d_sigma, "w_raw": d_w_raw, "y": d_y}

    # -- serialization --------------------------------------------------------

    def save(self, path) -> None:
        """Versioned text rule base; weights are stored max-normalized per rule.

        Per-rule weight scale does not affect behavior, so reloading yields a
        controller with identical outputs, and save(load(save(x))) is
        byte-identical to save(x).
        """
        wn = self.normalized_weights()
        lines = [RULES_MAGIC, f"dims {self.m} rules {self.n} outputs {self.k}"]
        for j in range(self.n):
            lines.append(f"rule {j}")
            for i in range(self.m):
                lines.append(
                    f"term {i} {fmt_float(self.mu[i, j])} {fmt_float(self.sigma[i, j])} "
                    f"{fmt_float(wn[i, j])} {int(self.active[i, j])} "
                    f"{int(self.set_ids[i, j])} {int(self.counts[i, j])}"
                )
            lines.append("consequent " + " ".join(fmt_float(v) for v in self.y[j]))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "NeuroFuzzyController":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != RULES_MAGIC:
            raise ValueError(f"{path}: not a {RULES_MAGIC} rule-base file")
        header = lines[1].split()
        m, n, k = int(header[1]), int(header[3]), int(header[5])
        mu = np.zeros((m, n))
        sigma = np.ones((m, n))
        w = np.zeros((m, n))
        active = np.zeros((m, n), dtype=bool)
        set_ids = np.zeros((m, n), dtype=int)
        counts = np.ones((m, n), dtype=int)
        y = np.zeros((n, k))
        j = -1
        for line in lines[2:]:
            tokens = line.split()
            if tokens[0] == "rule":
                j = int(tokens[1])
            elif tokens[0] == "term":
                i = int(tokens[1])
                mu[i, j] = float(tokens[2])
                sigma[i, j] = float(tokens[3])
                w[i, j] = float(tokens[4])
                active[i, j] = bool(int(tokens[5]))
                set_ids[i, j] = int(tokens[6])
                counts[i, j] = int(tokens[7])
            elif tokens[0] == "consequent":
                y[j] = [float(t) for t in tokens[1:]]
            else:
                raise ValueError(f"{path}: unexpected line {line!r}")
        return cls(mu, sigma, w, active, y, set_ids=set_ids, counts=counts)


# ---------------------------------------------------------------------------
# Reference paths used by tests and tools


def rule_activation(ctrl: NeuroFuzzyController, j: int, x) -> float:
    """Firing strength of one rule via the direct weighted product.

    The batch path computes the same quantity in the log domain; this plain
    product serves as its cross-check.
    """
    x = np.asarray(x, dtype=float)
    wn = ctrl.normalized_weights()[:, j]
    value = 1.0
    for i in range(ctrl.m):
        if ctrl.active[i, j]:
            value *= gaussian_membership(x[i], ctrl.mu[i, j], ctrl.sigma[i, j]) ** wn[i]
    return float(value)


def output_from_activations(activations, consequents) -> np.ndarray:
    """Normalize firing strengths to shares and mix the consequent vectors."""
    r = np.asarray(activations, dtype=float)
    y = np.asarray(consequents, dtype=float)
    return (r / r.sum()) @ y


def greedy_action(ctrl: NeuroFuzzyController, x) -> int:
    return ctrl.greedy(x)
