"""Pathwise posterior sampling and (empirical) expected improvement.

Prior functions are random-Fourier-feature draws from the product kernel's
spectral measure. Because the kernel factorizes over disjoint coordinate
blocks, each frequency row is a continuous part drawn from the Matérn
spectral density (a multivariate t with ``2*nu`` degrees of freedom, scale
``1/ell``) concatenated with a one-hot part drawn from independent normals
with standard deviation ``1/ell_j``.

A posterior path corrects a prior path with one Cholesky solve against the
cached factor of the fitted model:

    f_post(x) = f_prior(x) + k(x, X) w,   w = (K + s2 I)^-1 (y - f_prior(X) - e)

where ``e ~ N(0, s2 I)`` is an observation-noise draw, so paths follow the
noisy-observation posterior exactly up to the prior approximation.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import DimensionMismatch
from .gp import GPModel, kernel_matrix
from .numerics import solve_cholesky
from .space import (SearchSpace, layer_slices, binary_coordinates, canonicalize, decode, encode,
                    real_coordinates, sample_lhs)

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_CHUNK = 256


@dataclass(frozen=True)
class AcquisitionConfig:
    sample_count: int = 64
    candidate_count: int = 2048
    feature_count: int = 1024
    refine_steps: int = 2
    refine_step_size: float = 0.1
    perturb_prob: float = 0.2
    workers: int = 1

    def __post_init__(self):
        if self.sample_count < 1 or self.candidate_count < 1:
            raise ValueError("sample_count and candidate_count must be at least 1")
        if self.feature_count < 1:
            raise ValueError("feature_count must be at least 1")

    def to_dict(self) -> dict:
        return {
            "samples": self.sample_count,
            "candidates": self.candidate_count,
            "features": self.feature_count,
            "refine_steps": self.refine_steps,
            "refine_step_size": self.refine_step_size,
        }


_CHUNK_ENTRIES = 1 << 16


@dataclass(frozen=True)
class PriorPath:
    """One random-feature prior function plus a noise draw at the training inputs."""

    frequencies: np.ndarray  # (m, D)
    phases: np.ndarray       # (m,)
    weights: np.ndarray      # (m,)
    amplitude: float
    noise: np.ndarray        # (n,)

    @property
    def feature_count(self) -> int:
        return self.phases.shape[0]

    def __call__(self, qs) -> np.ndarray:
        qs = np.atleast_2d(np.asarray(qs, dtype=np.float64))
        if qs.shape[1] != self.frequencies.shape[1]:
            raise DimensionMismatch(f"expected dimension {self.frequencies.shape[1]}, got {qs.shape[1]}")
        return self.amplitude * (np.cos(qs @ self.frequencies.T + self.phases) @ self.weights)


@dataclass(frozen=True)
class PosteriorPath:
    prior: PriorPath
    train_x: np.ndarray
    correction_weights: np.ndarray
    kernel: object

    def __call__(self, qs) -> np.ndarray:
        qs = np.atleast_2d(np.asarray(qs, dtype=np.float64))
        return self.prior(qs) + kernel_matrix(self.kernel, qs, self.train_x) @ self.correction_weights


def _spectral_frequencies(model: GPModel, shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Frequency rows of shape ``shape + (D,)`` from the product spectral measure."""
    spec = model.kernel
    layout = model.layout
    omega = np.zeros(shape + (layout.dim,))
    cont = list(layout.cont_idx)
    if cont:
        z = rng.standard_normal(shape + (len(cont),))
        dof = 2.0 * spec.nu
        u = rng.chisquare(dof, size=shape + (1,))
        omega[..., cont] = z * np.sqrt(dof / u) / spec.ell_cont
    cat = list(layout.cat_idx)
    if cat:
        omega[..., cat] = rng.standard_normal(shape + (len(cat),)) / spec.ell_cat
    return omega


def sample_prior_path(model: GPModel, m: int, rng: np.random.Generator) -> PriorPath:
    if m < 1:
        raise ValueError("feature count must be positive")
    freqs = _spectral_frequencies(model, (m,), rng)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=m)
    weights = rng.standard_normal(m)
    noise = rng.standard_normal(model.n) * math.sqrt(model.kernel.noise_var)
    return PriorPath(freqs, phases, weights, math.sqrt(2.0 * model.kernel.signal_var / m), noise)


def draw_posterior_path(model: GPModel, prior: PriorPath) -> PosteriorPath:
    residual = model.y - (prior(model.x) + prior.noise)
    w = solve_cholesky(model.chol, residual)
    return PosteriorPath(prior, model.x, w, model.kernel)


def eval_path(path: PosteriorPath, q) -> float | np.ndarray:
    """Value of a posterior path at one point (or at each row of a matrix)."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != path.train_x.shape[1]:
        raise DimensionMismatch(f"expected dimension {path.train_x.shape[1]}, got {q.shape[-1]}")
    values = path(q)
    return float(values[0]) if q.ndim == 1 else values


class PathEnsemble:
    """``S`` posterior paths stored as stacked arrays for batched evaluation.

    Sampling and the Matheron correction are vectorized over paths; the
    correction for all paths is a single multi-right-hand-side solve against
    the model's cached Cholesky factor.
    """

    def __init__(self, model: GPModel, frequencies, phases, weights, noise):
        self.model = model
        self.frequencies = frequencies  # (S, m, D)
        self.phases = phases            # (S, m)
        self.weights = weights          # (S, m)
        self.noise = noise              # (S, n)
        self.amplitude = math.sqrt(2.0 * model.kernel.signal_var / phases.shape[1])
        prior_at_x = self.prior_values(model.x)  # (S, n)
        residual = model.y[None, :] - prior_at_x - noise
        self.correction = solve_cholesky(model.chol, residual.T).T  # (S, n)

    @classmethod
    def sample(cls, model: GPModel, sample_count: int, feature_count: int,
               rng: np.random.Generator) -> "PathEnsemble":
        s, m = sample_count, feature_count
        freqs = _spectral_frequencies(model, (s, m), rng)
        phases = rng.uniform(0.0, 2.0 * math.pi, size=(s, m))
        weights = rng.standard_normal((s, m))
        noise = rng.standard_normal((s, model.n)) * math.sqrt(model.kernel.noise_var)
        return cls(model, freqs, phases, weights, noise)

    def __len__(self) -> int:
        return self.phases.shape[0]

    def path(self, s: int) -> PosteriorPath:
        prior = PriorPath(self.frequencies[s], self.phases[s], self.weights[s], self.amplitude, self.noise[s])
        return PosteriorPath(prior, self.model.x, self.correction[s], self.model.kernel)

    def prior_values(self, qs: np.ndarray, workers: int = 1) -> np.ndarray:
        qs = np.atleast_2d(np.asarray(qs, dtype=np.float64))
        if qs.shape[1] != self.frequencies.shape[2]:
            raise DimensionMismatch(f"expected dimension {self.frequencies.shape[2]}, got {qs.shape[1]}")
        out = np.empty((len(self), qs.shape[0]))
        m = self.phases.shape[1]
        # paths per chunk; blocks of ~64k entries stay cache-resident
        step = max(1, _CHUNK_ENTRIES // max(1, qs.shape[0] * m))

        def chunk(lo: int) -> None:
            sl = slice(lo, lo + step)
            freqs = self.frequencies[sl]
            arg = (freqs.reshape(-1, freqs.shape[2]) @ qs.T).reshape(freqs.shape[0], m, -1)
            arg += self.phases[sl][:, :, None]
            out[sl] = self.amplitude * np.matmul(self.weights[sl][:, None, :], np.cos(arg))[:, 0]

        starts = range(0, len(self), step)
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                list(pool.map(chunk, starts))
        else:
            for lo in starts:
                chunk(lo)
        return out

    def evaluate(self, qs, workers: int = 1) -> np.ndarray:
        """Path values, shape ``(S, len(qs))``."""
        qs = np.atleast_2d(np.asarray(qs, dtype=np.float64))
        ks = kernel_matrix(self.model.kernel, qs, self.model.x)
        return self.prior_values(qs, workers) + self.correction @ ks.T


# -- expected improvement ------------------------------------------------------

def analytic_ei(mean, var, f_best):
    """Closed-form EI for maximization: ``sigma * (Z Phi(Z) + phi(Z))``."""
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    sigma = np.sqrt(np.maximum(var, 0.0))
    gap = mean - f_best
    with np.errstate(divide="ignore", invalid="ignore"):
        z = gap / sigma
        ei = sigma * (z * ndtr(z) + _INV_SQRT_2PI * np.exp(-0.5 * z * z))
    ei = np.where(sigma > 0, ei, np.maximum(gap, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def improvement_mean(values: np.ndarray, f_best: float) -> np.ndarray:
    """Column means of clamped improvements, ``values`` shaped ``(S, Q)``."""
    return np.mean(np.maximum(values - f_best, 0.0), axis=0)


def empirical_ei(model: GPModel, q, paths, f_best: float | None = None):
    """Monte-Carlo EI over the given posterior paths (standardized units).

    ``paths`` is a :class:`PathEnsemble` or a sequence of :class:`PosteriorPath`.
    ``q`` may be one point or a matrix of points. ``f_best`` defaults to the
    best standardized observation.
    """
    if f_best is None:
        f_best = float(np.max(model.y))
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    qs = np.atleast_2d(q)
    if qs.shape[1] != model.layout.dim:
        raise DimensionMismatch(f"expected dimension {model.layout.dim}, got {qs.shape[1]}")
    if isinstance(paths, PathEnsemble):
        values = paths.evaluate(qs)
    else:
        values = np.stack([p(qs) for p in paths])
    ei = improvement_mean(values, f_best)
    return float(ei[0]) if single else ei


# -- acquisition maximization ------------------------------------------------------

def _perturb(space: SearchSpace, incumbent: np.ndarray, count: int, cfg: AcquisitionConfig,
             rng: np.random.Generator) -> np.ndarray:
    out = np.repeat(incumbent[None, :], count, axis=0)
    real = real_coordinates(space)
    if real:
        jitter = rng.normal(0.0, cfg.refine_step_size, size=(count, len(real)))
        out[:, real] = np.clip(out[:, real] + jitter, 0.0, 1.0)
    binary = binary_coordinates(space)
    if binary:
        flip = rng.random((count, len(binary))) < cfg.perturb_prob
        out[:, binary] = np.where(flip, 1.0 - out[:, binary], out[:, binary])
    for _, pos, k in layer_slices(space):
        resample = rng.random(count) < cfg.perturb_prob
        choice = rng.integers(0, k, size=count)
        rows = np.nonzero(resample)[0]
        out[rows, pos:pos + k] = 0.0
        out[rows, pos + choice[rows]] = 1.0
    return out


def _refinable(space: SearchSpace, point: np.ndarray) -> list[int]:
    idx = real_coordinates(space)
    if space.pe_allowed and point[0] < 0.5:
        idx = [i for i in idx if i != 1]
    return idx


def maximize_acquisition(model: GPModel, space: SearchSpace, cfg: AcquisitionConfig,
                         rng: np.random.Generator, *, return_value: bool = False):
    """Pick the next configuration by maximizing empirical EI.

    Candidates are Latin-hypercube draws plus perturbations of the incumbent
    best observation; the winner is refined coordinate-wise over its
    continuous parameters with categorical and binary choices frozen. One set
    of posterior paths is shared by every candidate.
    """
    n_cand = cfg.candidate_count
    n_pert = n_cand // 2 if n_cand > 1 else 0
    n_lhs = n_cand - n_pert
    candidates = [encode(space, c) for c in sample_lhs(space, n_lhs, rng)]
    if n_pert:
        incumbent = model.x[int(np.argmax(model.y_raw))]
        for row in _perturb(space, incumbent, n_pert, cfg, rng):
            candidates.append(canonicalize(space, row))
    cand = np.array(candidates)
    paths = PathEnsemble.sample(model, cfg.sample_count, cfg.feature_count, rng)
    f_best = float(np.max(model.y))

    def score(points: np.ndarray) -> np.ndarray:
        out = np.empty(points.shape[0])
        for start in range(0, points.shape[0], _CHUNK):
            block = points[start:start + _CHUNK]
            out[start:start + _CHUNK] = improvement_mean(paths.evaluate(block, cfg.workers), f_best)
        return out

    values = score(cand)
    best = int(np.argmax(values))
    x, value = cand[best].copy(), float(values[best])

    step = cfg.refine_step_size
    for _ in range(cfg.refine_steps):
        for i in _refinable(space, x):
            trial = np.repeat(x[None, :], 2, axis=0)
            trial[0, i] = min(x[i] + step, 1.0)
            trial[1, i] = max(x[i] - step, 0.0)
            trial = np.array([canonicalize(space, t) for t in trial])
            vals = score(trial)
            j = int(np.argmax(vals))
            if vals[j] > value:
                x, value = trial[j], float(vals[j])
        step *= 0.5
    config = decode(space, x)
    return (config, value) if return_value else config


__all__ = [
    "AcquisitionConfig", "PathEnsemble", "PosteriorPath", "PriorPath", "analytic_ei",
    "draw_posterior_path", "empirical_ei", "eval_path", "maximize_acquisition",
    "sample_prior_path",
]
