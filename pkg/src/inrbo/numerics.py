"""Dense linear algebra and seeded random streams.

Everything here works in float64. Matrices are plain ``numpy`` arrays.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, NonPositiveDiagonal, NotPositiveDefinite, NotSymmetric


def jitter_ladder(jitter_max: float) -> list[float]:
    """``0`` then every second decade from 1e-10 up to ``jitter_max``."""
    ladder = [0.0]
    exponent = -10
    while 10.0 ** exponent <= jitter_max * (1 + 1e-12):
        ladder.append(10.0 ** exponent)
        exponent += 2
    return ladder


def _check_square(a: np.ndarray) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")


def cholesky(a, jitter_max: float = 1e-4) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``a + delta*I`` for the smallest working jitter.

    Returns ``(L, delta)``. Raises :class:`NotPositiveDefinite` if no jitter on
    the ladder up to ``jitter_max`` gives a factorization.
    """
    a = np.asarray(a, dtype=np.float64)
    _check_square(a)
    scale = max(np.max(np.abs(a)), 1.0) if a.size else 1.0
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-10 * scale):
        raise NotSymmetric("matrix is not symmetric")
    n = a.shape[0]
    eye = np.eye(n)
    for delta in jitter_ladder(jitter_max):
        try:
            low = np.linalg.cholesky(a + delta * eye if delta else a)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(low)):
            return low, delta
    raise NotPositiveDefinite(f"no jitter <= {jitter_max:g} made the {n}x{n} matrix factorizable")


def solve_cholesky(low: np.ndarray, b) -> np.ndarray:
    """Solve ``(L L^T) x = b`` by forward then back substitution.

    ``b`` may be a vector or a matrix of right-hand sides (one per column).
    """
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != low.shape[0]:
        raise DimensionMismatch(f"right-hand side has {b.shape[0]} rows, factor has {low.shape[0]}")
    z = solve_triangular(low, b, lower=True, check_finite=False)
    return solve_triangular(low.T, z, lower=False, check_finite=False)


def log_det_from_cholesky(low: np.ndarray) -> float:
    diag = np.diag(low)
    if np.any(diag <= 0):
        raise NonPositiveDiagonal("Cholesky factor has a non-positive diagonal entry")
    return float(2.0 * np.sum(np.log(diag)))


def min_eigenvalue(a) -> float:
    """Smallest eigenvalue of a symmetric matrix (test helper)."""
    a = np.asarray(a, dtype=np.float64)
    _check_square(a)
    return float(np.linalg.eigvalsh(a)[0])


# -- seeded streams ---------------------------------------------------------

def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator for ``(seed, stream...)``.

    Distinct stream keys give statistically independent generators, so a
    trial's randomness depends only on its key and never on evaluation order.
    """
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed: int, *stream: int) -> int:
    """A 63-bit integer seed for the substream ``(seed, stream...)``."""
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
