"""Shared helpers: seeding, rounding and input validation."""

import hashlib
import math

import numpy as np


def derive_seed(*parts):
    """Derive a 64-bit seed from an arbitrary tuple of printable parts.

    The result depends only on the parts, never on call order, so experiment
    cells can run in any order (or in parallel) and still draw the same
    random numbers.
    """
    digest = hashlib.blake2b(repr(parts).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(seed):
    """Return a PCG64 generator. ``seed`` may be an int or an existing generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def round_half_up(x):
    """Round to the nearest integer, halves upward (2.5 -> 3)."""
    # small guard so that e.g. 0.7 * 5 = 3.4999999999999996 still rounds as 3.5 would
    return int(math.floor(x + 0.5 + 1e-9))


def check_matrix(X, name="X"):
    """Return ``X`` as a finite 2-D float array."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X


def check_signed_labels(y, name="y"):
    """Return ``y`` as an int array over {-1, +1}."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"{name} must be 1-D")
    bad = ~np.isin(y, (-1, 1))
    if bad.any():
        raise ValueError(f"{name} must only contain -1/+1, found {np.unique(y[bad])}")
    return y.astype(np.int64)


def check_xy(X, y):
    X = check_matrix(X)
    y = check_signed_labels(y)
    if len(X) != len(y):
        raise ValueError(f"X has {len(X)} rows but y has {len(y)} labels")
    return X, y
