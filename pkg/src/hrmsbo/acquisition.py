"""Acquisition functions (EI, confidence bounds, Thompson sampling) and batch proposers.

Every proposer minimizes by default; ``minimize=False`` flips the sense.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx, ndtr

from .design import latin_hypercube
from .global_opt import Box, direct_minimize
from .gp import GpModel, condition_on, predict, sample_posterior_joint

KINDS = ("EI", "UCB", "TS")
DEFAULT_BETA = 2.0
TS_GRID_PER_DIM = 2048
DIRECT_EVALS_PER_DIM = 500

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_SQRT_HALF_PI = math.sqrt(math.pi / 2.0)


@dataclass(frozen=True)
class AcquisitionSpec:
    kind: str
    beta: float | None = None
    q: int = 1
    minimize: bool = True
    ts_grid_per_dim: int = TS_GRID_PER_DIM

    def __post_init__(self):
        kind = self.kind.upper()
        if kind not in KINDS:
            raise ValueError(f"unknown acquisition {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if kind == "UCB":
            beta = DEFAULT_BETA if self.beta is None else float(self.beta)
            if not beta > 0:
                raise ValueError("beta must be positive")
            object.__setattr__(self, "beta", beta)
        elif self.beta is not None:
            raise ValueError("beta only applies to UCB")
        if int(self.q) < 1:
            raise ValueError("q must be >= 1")
        object.__setattr__(self, "q", int(self.q))

    def with_q(self, q: int) -> "AcquisitionSpec":
        return AcquisitionSpec(self.kind, self.beta, q, self.minimize, self.ts_grid_per_dim)


@dataclass(frozen=True)
class Incumbent:
    x_best: np.ndarray | None
    f_best: float


def incumbent(model: GpModel, minimize: bool = True) -> Incumbent:
    """Best GP mean over the observed locations (not the best raw sample)."""
    if model.n == 0:
        return Incumbent(None, model.params.mean_constant)
    mu, _ = predict(model, model.dataset.X)
    i = int(np.argmin(mu) if minimize else np.argmax(mu))
    return Incumbent(model.dataset.X[i].copy(), float(mu[i]))


def _ei(mu, sigma, f_best, minimize):
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    delta = (f_best - mu) if minimize else (mu - f_best)
    pos = sigma > 0
    s = np.where(pos, sigma, 1.0)
    # |z| beyond 1e150 changes nothing numerically but would overflow z*z
    z = np.clip(delta / s, -1e150, 1e150)
    # z*Phi(z) + phi(z); the erfcx form avoids cancellation for z << 0
    phi = _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    zn = np.minimum(z, 0.0)
    tail = phi * (1.0 + zn * _SQRT_HALF_PI * erfcx(-zn / math.sqrt(2.0)))
    h = np.where(z < 0, tail, z * ndtr(z) + phi)
    return np.where(pos, np.maximum(s * h, 0.0), 0.0)


def expected_improvement(mu, sigma, incumbent: Incumbent, minimize: bool = True):
    """Expected improvement over ``incumbent.f_best``; exactly 0 where sigma is 0."""
    if np.any(np.asarray(sigma) < 0):
        raise ValueError("sigma must be nonnegative")
    out = _ei(mu, sigma, incumbent.f_best, minimize)
    return float(out) if out.ndim == 0 else out


def confidence_bound(mu, sigma, beta: float, minimize: bool = True):
    """``mu - beta*sigma`` when minimizing, ``mu + beta*sigma`` otherwise."""
    sign = -1.0 if minimize else 1.0
    out = np.asarray(mu, dtype=float) + sign * beta * np.asarray(sigma, dtype=float)
    return float(out) if out.ndim == 0 else out


def _direct_budget(box: Box, budget):
    return DIRECT_EVALS_PER_DIM * box.dim if budget is None else int(budget)


def _surface(model: GpModel, spec: AcquisitionSpec, inc: Incumbent | None = None):
    """Vectorized function of points that DIRECT should minimize."""
    if spec.kind == "EI":
        inc = incumbent(model, spec.minimize) if inc is None else inc

        def f(X):
            mu, var = predict(model, X)
            return -_ei(mu, np.sqrt(var), inc.f_best, spec.minimize)
    elif spec.kind == "UCB":
        sign = 1.0 if spec.minimize else -1.0

        def f(X):
            mu, var = predict(model, X)
            return sign * confidence_bound(mu, np.sqrt(var), spec.beta, spec.minimize)
    else:
        raise ValueError(f"{spec.kind} has no closed-form surface")
    return f


def _ts_grid(box: Box, spec: AcquisitionSpec, rng) -> np.ndarray:
    return latin_hypercube(spec.ts_grid_per_dim * box.dim, box, rng)


def _ts_extrema(model, spec, box, n_draws, rng):
    grid = _ts_grid(box, spec, rng)
    draws = sample_posterior_joint(model, grid, n_draws, rng)
    idx = np.argmin(draws, axis=1) if spec.minimize else np.argmax(draws, axis=1)
    return grid[idx]


def propose_single(model: GpModel, spec: AcquisitionSpec, bounds: Box, budget=None, rng=None):
    """One proposal: DIRECT on the EI/UCB surface, or the extremum of one TS draw."""
    if spec.kind == "TS":
        rng = np.random.default_rng() if rng is None else rng
        return _ts_extrema(model, spec, bounds, 1, rng)[0]
    res = direct_minimize(_surface(model, spec), bounds, _direct_budget(bounds, budget), vectorized=True)
    return res.x_min


def propose_batch_qei(model: GpModel, spec: AcquisitionSpec, bounds: Box, budget=None, rng=None):
    """Constant-liar q-EI: greedily maximize EI, pretend ``f_best`` was observed there, repeat."""
    if spec.kind != "EI":
        raise ValueError("q-EI needs an EI spec")
    inc = incumbent(model, spec.minimize)
    n_evals = _direct_budget(bounds, budget)
    points = []
    m = model
    for j in range(spec.q):
        x = direct_minimize(_surface(m, spec, inc), bounds, n_evals, vectorized=True).x_min
        points.append(x)
        if j < spec.q - 1:
            m = condition_on(m, x[None, :], [inc.f_best])
    return np.array(points)


def propose_batch_ucb_pe(model: GpModel, spec: AcquisitionSpec, bounds: Box, budget=None, rng=None):
    """GP-UCB-PE: confidence-bound extremum first, then maximum posterior sd.

    Earlier picks enter the model as pending observations with the usual
    noise term; their y is set to the current mean, which leaves the mean
    surface untouched (only the variance matters here).
    """
    if spec.kind != "UCB":
        raise ValueError("GP-UCB-PE needs a UCB spec")
    n_evals = _direct_budget(bounds, budget)
    first = propose_single(model, spec, bounds, n_evals)
    points = [first]
    m = model
    for _ in range(spec.q - 1):
        x_prev = points[-1][None, :]
        m = condition_on(m, x_prev, predict(m, x_prev)[0])

        def neg_var(X, m=m):
            return -predict(m, X)[1]

        points.append(direct_minimize(neg_var, bounds, n_evals, vectorized=True).x_min)
    return np.array(points)


def propose_batch_ts(model: GpModel, spec: AcquisitionSpec, bounds: Box, budget=None, rng=None):
    """``q`` joint posterior draws on one shared candidate grid; each draw's extremum."""
    if spec.kind != "TS":
        raise ValueError("batch TS needs a TS spec")
    rng = np.random.default_rng() if rng is None else rng
    return _ts_extrema(model, spec, bounds, spec.q, rng)


def propose(model: GpModel, spec: AcquisitionSpec, bounds: Box, budget=None, rng=None) -> np.ndarray:
    """Dispatch to the single or batch proposer for ``spec``; returns ``(q, d)``."""
    if spec.q == 1:
        return np.atleast_2d(propose_single(model, spec, bounds, budget, rng))
    batch = {"EI": propose_batch_qei, "UCB": propose_batch_ucb_pe, "TS": propose_batch_ts}[spec.kind]
    return batch(model, spec, bounds, budget, rng)
