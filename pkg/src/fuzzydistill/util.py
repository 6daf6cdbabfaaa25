"""Seed derivation and exact-text float formatting shared across the package."""

from __future__ import annotations

import hashlib

import numpy as np


def fmt_float(x) -> str:
    """Shortest decimal text that parses back to exactly the same float."""
    return repr(float(x))


def fmt_array(a) -> str:
    return " ".join(fmt_float(v) for v in np.asarray(a, dtype=float).ravel())


def parse_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split()]


def _label_entropy(label) -> int:
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def seed_seq(master: int, *labels) -> np.random.SeedSequence:
    """Named seed derivation: one master seed plus a label path.

    The same (master, labels) always yields the same stream, independent of
    any other derivation, so pipeline stages stay individually reproducible.
    """
    return np.random.SeedSequence([int(master)] + [_label_entropy(lab) for lab in labels])


def seed_int(master: int, *labels) -> int:
    return int(seed_seq(master, *labels).generate_state(1)[0])


def rng_for(master: int, *labels) -> np.random.Generator:
    return np.random.default_rng(seed_seq(master, *labels))
