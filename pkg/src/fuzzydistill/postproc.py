"""Rule-base simplification: merge near-duplicate antecedent sets, then
drop antecedent terms with negligible importance.

Merging runs per input dimension: while the most similar pair of distinct
sets has Jaccard index above the threshold, the pair is replaced by its
count-weighted average, the merged set is shared by every rule that
referenced either original, and it stays a merge candidate itself. Pruning
then deactivates terms whose max-normalized importance falls below a cutoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nfc import FuzzySetParams, NeuroFuzzyController, gaussian_membership

JACCARD_POINTS = 2001
JACCARD_WINDOW_SIGMAS = 5.0

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def jaccard(a: FuzzySetParams, b: FuzzySetParams) -> float:
    """Overlap of two Gaussian sets: integral of min over integral of max.

    Integrated by the trapezoid rule on a window wide enough that the
    excluded tail mass is negligible (five widths beyond both centers).
    """
    if a.sigma <= 0 or b.sigma <= 0:
        raise ValueError("set widths must be positive")
    width = JACCARD_WINDOW_SIGMAS * max(a.sigma, b.sigma)
    lo = min(a.mu, b.mu) - width
    hi = max(a.mu, b.mu) + width
    x = np.linspace(lo, hi, JACCARD_POINTS)
    fa = gaussian_membership(x, a.mu, a.sigma)
    fb = gaussian_membership(x, b.mu, b.sigma)
    inter = _trapezoid(np.minimum(fa, fb), x)
    union = _trapezoid(np.maximum(fa, fb), x)
    return float(inter / union)


def merged_set(a: FuzzySetParams, b: FuzzySetParams) -> FuzzySetParams:
    """Count-weighted average, so merging N originals in any order gives their mean."""
    total = a.count + b.count
    return FuzzySetParams(
        mu=(a.count * a.mu + b.count * b.mu) / total,
        sigma=(a.count * a.sigma + b.count * b.sigma) / total,
        count=total,
    )


@dataclass
class MergeEvent:
    dim: int
    set_a: int
    set_b: int
    jaccard: float
    result: FuzzySetParams

    def __str__(self) -> str:
        return (f"merge dim={self.dim} sets=({self.set_a},{self.set_b}) "
                f"jaccard={self.jaccard:.6f} -> mu={self.result.mu:.6g} "
                f"sigma={self.result.sigma:.6g} count={self.result.count}")


@dataclass
class PruneEvent:
    rule: int
    dim: int
    weight: float

    def __str__(self) -> str:
        return f"prune rule={self.rule} dim={self.dim} importance={self.weight:.6f}"


def merge_sets(ctrl: NeuroFuzzyController, alpha: float = 0.95):
    """Merge each dimension's most-similar set pair while similarity > alpha.

    Sets are tracked by shared labels, so rules referencing a merged set keep
    pointing at one identical set afterward. Returns (new controller, events).
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be in (0, 1]")
    out = ctrl.copy()
    events: list[MergeEvent] = []
    for i in range(out.m):
        while True:
            labels = sorted(set(int(s) for s in out.set_ids[i]))
            if len(labels) < 2:
                break
            sets = {}
            for lab in labels:
                j = int(np.flatnonzero(out.set_ids[i] == lab)[0])
                sets[lab] = out.set_params(i, j)
            best = None
            for a_pos, lab_a in enumerate(labels):
                for lab_b in labels[a_pos + 1:]:
                    sim = jaccard(sets[lab_a], sets[lab_b])
                    if best is None or sim > best[0]:
                        best = (sim, lab_a, lab_b)
            sim, lab_a, lab_b = best
            if sim <= alpha:
                break
            merged = merged_set(sets[lab_a], sets[lab_b])
            members = np.isin(out.set_ids[i], (lab_a, lab_b))
            out.mu[i, members] = merged.mu
            out.sigma[i, members] = merged.sigma
            out.counts[i, members] = merged.count
            out.set_ids[i, members] = min(lab_a, lab_b)
            events.append(MergeEvent(dim=i, set_a=lab_a, set_b=lab_b,
                                     jaccard=sim, result=merged))
    return out, events


def prune_weights(ctrl: NeuroFuzzyController, threshold: float = 0.01):
    """Deactivate antecedent terms with normalized importance below threshold.

    The rule's dominant term has importance exactly 1 and always survives, so
    no rule is ever left without antecedents; if a pathological threshold
    would strip everything, the largest term is kept. Idempotent at a fixed
    threshold because survivors keep their normalization. Returns
    (new controller, events).
    """
    if not 0.0 <= threshold < 1.0:
        raise ValueError("threshold must be in [0, 1)")
    out = ctrl.copy()
    wn = out.normalized_weights()
    events: list[PruneEvent] = []
    for j in range(out.n):
        drop = out.active[:, j] & (wn[:, j] < threshold)
        if drop.all() or (out.active[:, j] & ~drop).sum() == 0:
            keep = int(np.argmax(np.where(out.active[:, j], wn[:, j], -np.inf)))
            drop[keep] = False
        for i in np.flatnonzero(drop):
            events.append(PruneEvent(rule=j, dim=int(i), weight=float(wn[i, j])))
        out.active[drop, j] = False
    return out, events


def postprocess(ctrl: NeuroFuzzyController, alpha: float = 0.95,
                threshold: float = 0.01):
    """Merging followed by pruning; returns (controller, log lines)."""
    merged, merge_events = merge_sets(ctrl, alpha)
    pruned, prune_events = prune_weights(merged, threshold)
    lines = [str(e) for e in merge_events] + [str(e) for e in prune_events]
    return pruned, lines


def greedy_agreement(a: NeuroFuzzyController, b: NeuroFuzzyController, states) -> float:
    """Fraction of states on which both controllers pick the same greedy action."""
    qa = a.batch_q(np.asarray(states, dtype=float))
    qb = b.batch_q(np.asarray(states, dtype=float))
    return float((qa.argmax(axis=1) == qb.argmax(axis=1)).mean())
