"""Built-in oracle checks run by ``inrbo selftest``.

Each check compares an implementation against an independent reference
(dense inverses, quadrature, finite differences, Monte-Carlo moments) and
returns a :class:`CheckResult`. ``level="full"`` raises the Monte-Carlo
sample counts.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, stats

from .acquisition import PathEnsemble, analytic_ei, empirical_ei
from .driver import payoff_counterexample
from .gp import (KernelSpec, condition, gram, kernel_matrix, log_marginal_likelihood,
                 posterior_covariance, predict)
from .inr import ActivationKind, HiddenLayer, NetworkSpec, init_network, loss_and_gradients
from .numerics import make_rng
from .objectives import iou, psnr
from .space import ActivationFamily, Layout

EIFunction = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def mutated_ei(mean, var, f_best):
    """A wrong EI, ``sigma * (phi(Z) Phi(Z) + Z)``, used to prove the checks catch it."""
    sigma = np.sqrt(np.maximum(np.asarray(var, dtype=np.float64), 0.0))
    z = (np.asarray(mean, dtype=np.float64) - f_best) / sigma
    return sigma * (stats.norm.pdf(z) * stats.norm.cdf(z) + z)


def random_layout(rng: np.random.Generator) -> Layout:
    n_cont = int(rng.integers(1, 4))
    blocks, pos = [], n_cont
    for _ in range(int(rng.integers(0, 3))):
        k = int(rng.integers(2, 4))
        blocks.append(tuple(range(pos, pos + k)))
        pos += k
    return Layout(pos, tuple(range(n_cont)), tuple(blocks))


def random_points(layout: Layout, n: int, rng: np.random.Generator) -> np.ndarray:
    x = np.zeros((n, layout.dim))
    x[:, list(layout.cont_idx)] = rng.random((n, len(layout.cont_idx)))
    for block in layout.cat_blocks:
        x[np.arange(n), np.asarray(block)[rng.integers(0, len(block), n)]] = 1.0
    return x


def random_kernel(layout: Layout, rng: np.random.Generator, nu: float | None = None) -> KernelSpec:
    return KernelSpec(
        layout=layout, nu=nu if nu is not None else float(rng.choice([0.5, 1.5, 2.5])),
        ell_cont=float(np.exp(rng.uniform(np.log(0.1), np.log(2.0)))),
        ell_cat=np.exp(rng.uniform(np.log(0.3), np.log(3.0), len(layout.cat_idx))),
        signal_var=float(np.exp(rng.uniform(np.log(0.2), np.log(5.0)))),
        noise_var=float(np.exp(rng.uniform(np.log(1e-4), np.log(1e-1)))))


def random_model(rng: np.random.Generator, n: int, nu: float | None = None):
    layout = random_layout(rng)
    spec = random_kernel(layout, rng, nu)
    xs = random_points(layout, n, rng)
    ys = rng.standard_normal(n)
    return condition(layout, xs, ys, spec)


# -- checks ---------------------------------------------------------------------------

def check_gp_oracle(instances: int = 20, seed: int = 11) -> tuple[bool, str]:
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(instances):
        model = random_model(rng, int(rng.integers(1, 9)))
        k = gram(model.kernel, model.x) + model.kernel.noise_var * np.eye(model.n)
        kinv = np.linalg.inv(k)
        q = random_points(model.layout, 5, rng)
        ks = kernel_matrix(model.kernel, q, model.x)
        mean = ks @ kinv @ model.y
        var = model.kernel.signal_var - np.einsum("ij,jk,ik->i", ks, kinv, ks)
        got_m, got_v = predict(model, q)
        _, logdet = np.linalg.slogdet(k)
        lml = -0.5 * model.y @ kinv @ model.y - 0.5 * logdet - 0.5 * model.n * math.log(2 * math.pi)
        worst = max(worst, np.max(np.abs(got_m - mean)), np.max(np.abs(got_v - var)),
                    abs(log_marginal_likelihood(model) - lml))
    return worst < 1e-8, f"max abs error {worst:.2e} over {instances} instances"


def check_kernel_psd(instances: int = 50, seed: int = 12) -> tuple[bool, str]:
    rng = make_rng(seed)
    worst = np.inf
    for _ in range(instances):
        layout = random_layout(rng)
        spec = random_kernel(layout, rng)
        n = int(rng.integers(2, 65))
        k = gram(spec, random_points(layout, n, rng))
        ratio = np.linalg.eigvalsh(k)[0] / (n * spec.signal_var)
        worst = min(worst, ratio)
    return worst >= -1e-8, f"min eigenvalue / (n signal_var) = {worst:.2e}"


def check_matheron(paths: int = 2000, seed: int = 13) -> tuple[bool, str]:
    rng = make_rng(seed)
    model = random_model(rng, 20, nu=2.5)
    probes = random_points(model.layout, 10, rng)
    ens = PathEnsemble.sample(model, paths, 64, rng)
    values = ens.evaluate(probes)
    mean, var = predict(model, probes)
    cov = posterior_covariance(model, probes, probes)
    emp_mean = values.mean(axis=0)
    emp_cov = np.cov(values, rowvar=False)
    z_mean = np.abs(emp_mean - mean) / np.sqrt(np.maximum(var, 1e-300) / paths)
    se_cov = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov ** 2) / (paths - 1))
    z_cov = np.abs(emp_cov - cov) / np.maximum(se_cov, 1e-300)
    worst = max(float(z_mean.max()), float(z_cov.max()))
    return worst < 4.0, f"worst deviation {worst:.2f} standard errors ({paths} paths)"


def check_ei_integral(ei: EIFunction = analytic_ei) -> tuple[bool, str]:
    worst = 0.0
    for z in np.linspace(-2.0, 2.0, 5):
        for sigma in (0.1, 0.3, 1.0, 2.0, 5.0):
            mu = z * sigma
            ref, _ = integrate.quad(lambda t: (t - 0.0) * stats.norm.pdf(t, mu, sigma), 0.0, np.inf,
                                    epsabs=1e-12, epsrel=1e-12)
            worst = max(worst, abs(float(ei(np.array(mu), np.array(sigma ** 2), 0.0)) - ref))
    return worst < 1e-6, f"max abs error vs quadrature {worst:.2e}"


def check_eei(ei: EIFunction = analytic_ei, samples: int = 10_000, seed: int = 14) -> tuple[bool, str]:
    rng = make_rng(seed)
    model = random_model(rng, 12, nu=2.5)
    probes = random_points(model.layout, 40, rng)
    # Far-tail probes (Z << 0) have Monte-Carlo relative error above 5% at any
    # practical S, so the incumbent is set low enough that probes sit near Z >= -1.
    f_best = float(np.min(model.y))
    mean, var = predict(model, probes)
    ref = ei(mean, var, f_best)
    keep = ref > 0.01
    if not np.any(keep):
        return False, "no probe with EI > 0.01"
    ens = PathEnsemble.sample(model, samples, 512, rng)
    est = empirical_ei(model, probes[keep], ens, f_best)
    rel = np.abs(est - ref[keep]) / ref[keep]
    return bool(rel.max() < 0.05), f"max relative error {rel.max():.3f} over {keep.sum()} probes (S={samples})"


def check_gradients(instances: int = 5, seed: int = 15) -> tuple[bool, str]:
    rng = make_rng(seed)
    worst = 0.0
    for family in ActivationFamily:
        for _ in range(instances):
            layers = tuple(
                HiddenLayer(width=6, activation=ActivationKind(
                    family, omega0=float(rng.uniform(1, 4)), s0=float(rng.uniform(0.5, 2)),
                    bias_scale=float(rng.uniform(0, 1))), siren_init=bool(rng.integers(0, 2)))
                for _ in range(2))
            spec = NetworkSpec(2, 1, layers, dtype="float64")
            state = init_network(spec, rng)
            coords = rng.uniform(-1, 1, (8, 2))
            targets = rng.standard_normal((8, 1))
            _, grads = loss_and_gradients(spec, state, coords, targets)
            for arrays, garrays in ((state.weights, grads.weights), (state.biases, grads.biases)):
                for arr, g in zip(arrays, garrays):
                    flat, gflat = arr.reshape(-1), g.reshape(-1)
                    idx = rng.choice(flat.size, min(4, flat.size), replace=False)
                    fd = np.empty(len(idx))
                    for j, i in enumerate(idx):
                        old = flat[i]
                        flat[i] = old + 1e-6
                        up, _ = loss_and_gradients(spec, state, coords, targets)
                        flat[i] = old - 1e-6
                        down, _ = loss_and_gradients(spec, state, coords, targets)
                        flat[i] = old
                        fd[j] = (up - down) / 2e-6
                    denom = max(np.linalg.norm(fd), np.linalg.norm(gflat[idx]), 1e-8)
                    worst = max(worst, np.linalg.norm(fd - gflat[idx]) / denom)
    return worst < 1e-4, f"max relative error {worst:.2e}"


def check_payoff() -> tuple[bool, str]:
    r = payoff_counterexample()
    ok = (r.greedy_value == 10.0 and r.global_value == 12.0 and r.greedy_choice == ("B", "A")
          and r.global_choice == ("A", "A"))
    return ok, (f"greedy={r.greedy_value:g} at {','.join(r.greedy_choice)}, "
                f"global={r.global_value:g} at {','.join(r.global_choice)}")


def check_metrics() -> tuple[bool, str]:
    target = np.zeros((4, 4))
    ok = math.isclose(psnr(target + 0.1, target), 20.0, abs_tol=1e-9)
    ok &= psnr(target, target) == 100.0
    a = np.array([1, 1, 0, 0], dtype=float)
    b = np.array([1, 0, 1, 0], dtype=float)
    ok &= math.isclose(iou(a, b), 1.0 / 3.0)
    ok &= iou(np.zeros(4), np.zeros(4)) == 1.0
    return bool(ok), "PSNR and IoU closed-form cases"


def run_checks(level: str = "fast", mutate: str | None = None,
               report: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    """Run every check; ``mutate="ei"`` swaps in :func:`mutated_ei`."""
    if level not in ("fast", "full"):
        raise ValueError("level must be 'fast' or 'full'")
    full = level == "full"
    ei = mutated_ei if mutate == "ei" else analytic_ei
    plan: list[tuple[str, Callable[[], tuple[bool, str]]]] = [
        ("gp_posterior_vs_dense_inverse", lambda: check_gp_oracle(50 if full else 20)),
        ("kernel_psd", lambda: check_kernel_psd(200 if full else 50)),
        ("matheron_moments", lambda: check_matheron(10_000 if full else 2000)),
        ("analytic_ei_vs_quadrature", lambda: check_ei_integral(ei)),
        ("empirical_ei_vs_analytic_ei", lambda: check_eei(ei)),
        ("activation_gradients", lambda: check_gradients(20 if full else 5)),
        ("greedy_counterexample", check_payoff),
        ("metrics", check_metrics),
    ]
    results = []
    for name, fn in plan:
        start = time.perf_counter()
        try:
            passed, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        result = CheckResult(name, bool(passed), detail, time.perf_counter() - start)
        results.append(result)
        if report is not None:
            report(result)
    return results


__all__ = ["CheckResult", "mutated_ei", "random_layout", "random_model", "random_points",
           "run_checks"]
