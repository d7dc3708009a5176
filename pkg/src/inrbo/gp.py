"""Gaussian-process surrogate with a Matérn x SE-ARD product kernel.

The Matérn factor acts on the continuous (and binary) coordinates with one
shared length-scale; the squared-exponential factor acts on the one-hot
coordinates with per-dimension length-scales, tied per categorical block by
default. Targets are standardized before fitting and the prior mean is zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .errors import DimensionMismatch, NotPositiveDefinite, SingularGram, UnsupportedNu
from .numerics import cholesky, log_det_from_cholesky, solve_cholesky
from .space import Layout, SearchSpace

LOG_2PI = math.log(2.0 * math.pi)

ELL_BOUNDS = (1e-2, 10.0)
NOISE_BOUNDS = (1e-6, 1.0)
SIGNAL_BOUNDS = (5e-2, 20.0)
JITTER_MAX = 1e-4


@dataclass(frozen=True)
class KernelSpec:
    layout: Layout
    nu: float = 2.5
    ell_cont: float = 1.0
    ell_cat: np.ndarray | None = None
    signal_var: float = 1.0
    noise_var: float = 1e-4

    def __post_init__(self):
        if self.nu not in (0.5, 1.5, 2.5):
            raise UnsupportedNu(f"nu must be 0.5, 1.5 or 2.5, got {self.nu}")
        width = len(self.layout.cat_idx)
        ell_cat = np.ones(width) if self.ell_cat is None else np.asarray(self.ell_cat, dtype=np.float64)
        if ell_cat.shape != (width,):
            raise DimensionMismatch(f"ell_cat needs {width} entries, got {ell_cat.shape}")
        object.__setattr__(self, "ell_cat", ell_cat)
        values = [self.ell_cont, self.signal_var, self.noise_var, *ell_cat]
        if not all(v > 0 for v in values):
            raise ValueError("kernel hyperparameters must be strictly positive")

    def to_dict(self) -> dict:
        return {
            "nu": self.nu,
            "ell_cont": float(self.ell_cont),
            "ell_cat": [float(v) for v in self.ell_cat],
            "signal_var": float(self.signal_var),
            "noise_var": float(self.noise_var),
        }

    @classmethod
    def from_dict(cls, layout: Layout, data: dict) -> "KernelSpec":
        return cls(layout=layout, nu=float(data["nu"]), ell_cont=float(data["ell_cont"]),
                   ell_cat=np.asarray(data["ell_cat"], dtype=np.float64),
                   signal_var=float(data["signal_var"]), noise_var=float(data["noise_var"]))


def matern(r: np.ndarray, nu: float) -> np.ndarray:
    """Matérn correlation at scaled distance ``r = d / ell`` (half-integer nu)."""
    if nu == 0.5:
        return np.exp(-r)
    if nu == 1.5:
        s = math.sqrt(3.0) * r
        return (1.0 + s) * np.exp(-s)
    if nu == 2.5:
        s = math.sqrt(5.0) * r
        return (1.0 + s + s * s / 3.0) * np.exp(-s)
    raise UnsupportedNu(f"nu must be 0.5, 1.5 or 2.5, got {nu}")


def kernel_matrix(spec: KernelSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross-covariance between the rows of ``a`` and ``b``."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    dim = spec.layout.dim
    if a.shape[1] != dim or b.shape[1] != dim:
        raise DimensionMismatch(f"points must have dimension {dim}, got {a.shape[1]} and {b.shape[1]}")
    out = np.full((a.shape[0], b.shape[0]), spec.signal_var)
    cont = list(spec.layout.cont_idx)
    if cont:
        r = cdist(a[:, cont], b[:, cont]) / spec.ell_cont
        out *= matern(r, spec.nu)
    cat = list(spec.layout.cat_idx)
    if cat:
        sq = cdist(a[:, cat] / spec.ell_cat, b[:, cat] / spec.ell_cat, "sqeuclidean")
        out *= np.exp(-0.5 * sq)
    return out


def kernel_eval(spec: KernelSpec, a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"points differ in shape: {a.shape} vs {b.shape}")
    return float(kernel_matrix(spec, a[None, :], b[None, :])[0, 0])


def gram(spec: KernelSpec, xs) -> np.ndarray:
    """Symmetric Gram matrix; the upper triangle mirrors the lower exactly."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if xs.shape[0] < 1:
        raise ValueError("gram needs at least one point")
    k = kernel_matrix(spec, xs, xs)
    lower = np.tril(k, -1)
    k = lower + lower.T
    np.fill_diagonal(k, spec.signal_var)
    return k


@dataclass(frozen=True)
class PosteriorMoments:
    mean: float
    var: float


@dataclass(frozen=True)
class GPModel:
    layout: Layout
    x: np.ndarray
    y_raw: np.ndarray
    y_mean: float
    y_std: float
    kernel: KernelSpec
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0
    space: SearchSpace | None = None

    @property
    def y(self) -> np.ndarray:
        """Standardized targets."""
        return (self.y_raw - self.y_mean) / self.y_std

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def to_raw(self, value):
        return self.y_mean + self.y_std * value


def standardize(ys: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(ys))
    std = float(np.std(ys))
    if not std > 1e-12 * max(1.0, abs(mean)):
        std = 1.0
    return mean, std


def _as_layout(space_or_layout) -> tuple[Layout, SearchSpace | None]:
    if isinstance(space_or_layout, SearchSpace):
        return space_or_layout.layout, space_or_layout
    return space_or_layout, None


def condition(space_or_layout, xs, ys, kernel: KernelSpec) -> GPModel:
    """Condition the GP on data with fixed hyperparameters."""
    layout, space = _as_layout(space_or_layout)
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if xs.shape[0] != ys.shape[0]:
        raise DimensionMismatch(f"{xs.shape[0]} inputs but {ys.shape[0]} targets")
    if xs.shape[0] < 1:
        raise ValueError("need at least one observation")
    if xs.shape[1] != layout.dim:
        raise DimensionMismatch(f"inputs must have dimension {layout.dim}, got {xs.shape[1]}")
    y_mean, y_std = standardize(ys)
    y = (ys - y_mean) / y_std
    k = gram(kernel, xs)
    k[np.diag_indices_from(k)] += kernel.noise_var
    try:
        low, jitter = cholesky(k, JITTER_MAX)
    except NotPositiveDefinite as exc:
        raise SingularGram(str(exc)) from exc
    alpha = solve_cholesky(low, y)
    return GPModel(layout=layout, x=xs, y_raw=ys, y_mean=y_mean, y_std=y_std, kernel=kernel,
                   chol=low, alpha=alpha, jitter=jitter, space=space)


def log_marginal_likelihood(model: GPModel) -> float:
    y = model.y
    return float(-0.5 * y @ model.alpha - 0.5 * log_det_from_cholesky(model.chol)
                 - 0.5 * model.n * LOG_2PI)


# -- hyperparameter fitting --------------------------------------------------

def _cat_groups(layout: Layout, ard: str) -> list[list[int]]:
    """Positions within ``ell_cat`` that share one length-scale."""
    groups, pos = [], 0
    for block in layout.cat_blocks:
        if ard == "full":
            groups.extend([[pos + j] for j in range(len(block))])
        else:
            groups.append(list(range(pos, pos + len(block))))
        pos += len(block)
    return groups


def _unpack(theta: np.ndarray, layout: Layout, nu: float, groups) -> KernelSpec:
    ell_cat = np.empty(len(layout.cat_idx))
    for g, members in enumerate(groups):
        ell_cat[members] = math.exp(theta[1 + g])
    return KernelSpec(layout=layout, nu=nu, ell_cont=math.exp(theta[0]), ell_cat=ell_cat,
                      signal_var=math.exp(theta[-2]), noise_var=math.exp(theta[-1]))


def _pack(spec: KernelSpec, groups) -> np.ndarray:
    cat = [math.log(spec.ell_cat[members[0]]) for members in groups]
    return np.array([math.log(spec.ell_cont), *cat, math.log(spec.signal_var), math.log(spec.noise_var)])


def _log_bounds(n_groups: int) -> list[tuple[float, float]]:
    ell = (math.log(ELL_BOUNDS[0]), math.log(ELL_BOUNDS[1]))
    return ([ell] * (1 + n_groups)
            + [(math.log(SIGNAL_BOUNDS[0]), math.log(SIGNAL_BOUNDS[1])),
               (math.log(NOISE_BOUNDS[0]), math.log(NOISE_BOUNDS[1]))])


def _neg_lml(theta, layout, nu, groups, xs, y) -> float:
    spec = _unpack(theta, layout, nu, groups)
    k = gram(spec, xs)
    k[np.diag_indices_from(k)] += spec.noise_var
    try:
        low = np.linalg.cholesky(k)
    except np.linalg.LinAlgError:
        return 1e10
    alpha = solve_cholesky(low, y)
    value = 0.5 * y @ alpha + np.sum(np.log(np.diag(low))) + 0.5 * len(y) * LOG_2PI
    return float(value) if np.isfinite(value) else 1e10


def default_kernel(layout: Layout, nu: float = 2.5) -> KernelSpec:
    ell = min(max(0.5 * math.sqrt(max(len(layout.cont_idx), 1)), ELL_BOUNDS[0]), ELL_BOUNDS[1])
    return KernelSpec(layout=layout, nu=nu, ell_cont=ell, signal_var=1.0, noise_var=1e-3)


def fit(space_or_layout, xs, ys, rng: np.random.Generator, *, nu: float | None = None,
        ard: str | None = None, starts: int = 8, max_evals: int = 200,
        warm_start: KernelSpec | None = None) -> GPModel:
    """Maximum-likelihood fit by multi-start bounded Nelder-Mead in log space.

    The first start is ``warm_start`` (or the defaults); the rest are drawn
    uniformly in the log-bounds from ``rng``. With a single observation the
    default hyperparameters are used as-is.
    """
    layout, space = _as_layout(space_or_layout)
    if nu is None:
        nu = space.nu if space is not None else 2.5
    if ard is None:
        ard = space.ard if space is not None else "block"
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if xs.shape[0] != ys.shape[0]:
        raise DimensionMismatch(f"{xs.shape[0]} inputs but {ys.shape[0]} targets")
    init = default_kernel(layout, nu)
    if xs.shape[0] < 2:
        return condition(space_or_layout, xs, ys, init)
    groups = _cat_groups(layout, ard)
    bounds = _log_bounds(len(groups))
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    y_mean, y_std = standardize(ys)
    y = (ys - y_mean) / y_std

    first = warm_start if warm_start is not None and warm_start.nu == nu else init
    x0s = [np.clip(_pack(first, groups), lo, hi)]
    for _ in range(max(starts, 1) - 1):
        x0s.append(lo + rng.random(len(lo)) * (hi - lo))

    best_theta, best_value = None, np.inf
    for x0 in x0s:
        res = minimize(_neg_lml, x0, args=(layout, nu, groups, xs, y), method="Nelder-Mead",
                       bounds=bounds,
                       options={"maxfev": max_evals, "xatol": 1e-4, "fatol": 1e-6})
        value = float(res.fun)
        if value < best_value:
            best_theta, best_value = np.clip(res.x, lo, hi), value
    spec = _unpack(best_theta, layout, nu, groups)
    return condition(space_or_layout, xs, ys, spec)


# -- prediction ---------------------------------------------------------------

def predict(model: GPModel, qs) -> tuple[np.ndarray, np.ndarray]:
    """Standardized posterior means and variances at the rows of ``qs``."""
    qs = np.atleast_2d(np.asarray(qs, dtype=np.float64))
    if qs.shape[1] != model.layout.dim:
        raise DimensionMismatch(f"query must have dimension {model.layout.dim}, got {qs.shape[1]}")
    ks = kernel_matrix(model.kernel, qs, model.x)
    mean = ks @ model.alpha
    v = _forward(model.chol, ks.T)
    var = model.kernel.signal_var - np.sum(v * v, axis=0)
    return mean, np.maximum(var, 0.0)


def _forward(low: np.ndarray, b: np.ndarray) -> np.ndarray:
    return solve_triangular(low, b, lower=True, check_finite=False)


def posterior(model: GPModel, q) -> PosteriorMoments:
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1:
        raise DimensionMismatch("posterior takes a single point; use predict for batches")
    mean, var = predict(model, q[None, :])
    return PosteriorMoments(float(mean[0]), float(var[0]))


def posterior_covariance(model: GPModel, a, b) -> np.ndarray:
    """Posterior cross-covariance matrix between two sets of points."""
    ka = kernel_matrix(model.kernel, a, model.x)
    kb = kernel_matrix(model.kernel, b, model.x)
    va = _forward(model.chol, ka.T)
    vb = _forward(model.chol, kb.T)
    return kernel_matrix(model.kernel, a, b) - va.T @ vb


def raw_posterior(model: GPModel, q) -> PosteriorMoments:
    m = posterior(model, q)
    return PosteriorMoments(model.to_raw(m.mean), m.var * model.y_std ** 2)


def with_kernel(model: GPModel, **changes) -> GPModel:
    """Recondition the same data with some hyperparameters replaced."""
    spec = replace(model.kernel, **changes)
    return condition(model.space if model.space is not None else model.layout, model.x, model.y_raw, spec)


__all__ = [
    "GPModel", "KernelSpec", "PosteriorMoments", "condition", "default_kernel", "fit", "gram",
    "kernel_eval", "kernel_matrix", "log_marginal_likelihood", "matern", "posterior",
    "posterior_covariance", "predict", "raw_posterior", "standardize", "with_kernel",
]
