"""Small dense linear algebra helpers and seeded random streams."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

STREAM_NAMES = ("init", "targets", "user_noise", "exploration", "error_swaps", "drift")


class SingularSystemError(np.linalg.LinAlgError):
    """Raised when a system expected to be positive definite is not."""


def solve_spd(m, rhs):
    """Solve ``m @ x = rhs`` for symmetric positive definite ``m``.

    Uses a Cholesky factorisation; anything that fails it is reported as a
    singular system instead of producing a meaningless answer.
    """
    m = np.asarray(m, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    scale = max(np.max(np.abs(m)), 1e-300)
    if np.max(np.abs(m - m.T)) > 1e-10 * scale:
        raise SingularSystemError("singular system: matrix is not symmetric")
    try:
        factor = linalg.cho_factor(m, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise SingularSystemError(f"singular system: {exc}") from None
    x = linalg.cho_solve(factor, rhs, check_finite=False)
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("singular system: non-finite solution")
    return x


def psd_factor(cov, tol=1e-12):
    """Return ``L`` with ``L @ L.T == cov`` for a symmetric PSD ``cov``.

    Diagonal inputs take the square-root shortcut; general ones go through an
    eigendecomposition so that singular (but PSD) covariances are accepted.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape[0] != cov.shape[1]:
        raise ValueError(f"covariance must be square, got {cov.shape}")
    if not np.all(np.isfinite(cov)):
        raise ValueError("covariance has non-finite entries")
    scale = max(np.max(np.abs(cov)), 1.0)
    if np.max(np.abs(cov - cov.T)) > 1e-10 * scale:
        raise ValueError("covariance is not symmetric")
    diag = np.diag(cov)
    if np.count_nonzero(cov - np.diag(diag)) == 0:
        if np.any(diag < -tol * scale):
            raise ValueError("covariance is not positive semi-definite")
        return np.diag(np.sqrt(np.clip(diag, 0.0, None)))
    vals, vecs = np.linalg.eigh(cov)
    if vals[0] < -tol * scale:
        raise ValueError("covariance is not positive semi-definite")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def sample_gaussian(mean, cov, rng: np.random.Generator):
    """Draw ``mean + L z`` with ``z`` standard normal and ``L L^T = cov``."""
    mean = np.asarray(mean, dtype=float)
    factor = psd_factor(cov)
    if factor.shape[0] != mean.shape[0]:
        raise ValueError("mean and covariance dimensions differ")
    z = rng.standard_normal(mean.shape[0])
    return mean + factor @ z


def sample_unit_vector(dim: int, rng: np.random.Generator):
    """Uniform draw from the unit sphere in ``dim`` dimensions."""
    if dim < 1:
        raise ValueError("dimension must be at least 1")
    while True:
        z = rng.standard_normal(dim)
        norm = np.linalg.norm(z)
        if norm > 1e-300:
            return z / norm


@dataclass
class RunStreams:
    """Independent generators, one per noise source of a simulation run.

    Each stream is derived from ``SeedSequence(seed, spawn_key=(index,))``
    where ``index`` is the position of its name in ``STREAM_NAMES``. A stream
    can be re-seeded on its own through ``overrides`` without touching the
    sequences drawn by the others.
    """

    init: np.random.Generator
    targets: np.random.Generator
    user_noise: np.random.Generator
    exploration: np.random.Generator
    error_swaps: np.random.Generator
    drift: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int, overrides: dict | None = None) -> "RunStreams":
        overrides = overrides or {}
        unknown = set(overrides) - set(STREAM_NAMES)
        if unknown:
            raise ValueError(f"unknown stream names: {sorted(unknown)}")
        gens = {}
        for index, name in enumerate(STREAM_NAMES):
            base = overrides.get(name, seed)
            ss = np.random.SeedSequence(int(base) & (2**64 - 1), spawn_key=(index,))
            gens[name] = np.random.Generator(np.random.PCG64(ss))
        return cls(**gens)
