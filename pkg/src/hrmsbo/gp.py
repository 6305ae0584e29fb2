"""Exact GP regression, posterior sampling and MAP hyperparameter learning."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize, stats
from scipy.linalg import blas, lapack

from ._backend import core
from .design import latin_hypercube
from .global_opt import Box
from .kernel import KernelHyperparams, covariance_matrix

# multiples of trace(A)/n added to the diagonal, tried in order
JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6, 1e-4)
OUT_OF_SUPPORT = -1e300
LOG_2PI = math.log(2.0 * math.pi)


class IllConditionedCovariance(RuntimeError):
    """Cholesky failed at every rung of the jitter ladder."""

    def __init__(self, message, ladder):
        super().__init__(message)
        self.ladder = tuple(ladder)


class HyperparameterFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        y = np.array(self.y, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(len(y), -1) if len(y) else X.reshape(0, max(X.size, 1))
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} inputs but {y.shape[0]} observations")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset entries must be finite")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def empty(cls, d: int) -> "Dataset":
        return cls(np.empty((0, d)), np.empty(0))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def append(self, X_new, y_new) -> "Dataset":
        X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
        return Dataset(np.vstack([self.X, X_new]), np.concatenate([self.y, np.ravel(y_new)]))


@dataclass(frozen=True)
class Hyperpriors:
    """Gaussian prior on the constant mean, log-uniform boxes on the rest.

    Bounds are given in natural units; the uniform densities live on the
    log scale, i.e. ``log(l) ~ U(log a, log b)``.
    """

    mean_mu: float = 0.0
    mean_sigma: float = 100.0
    lengthscale: tuple = (1.0, 3.0)
    amplitude: tuple = (1.0, 3.0)
    noise_std: tuple = (20.0, 400.0)

    def __post_init__(self):
        for name in ("lengthscale", "amplitude", "noise_std"):
            lo, hi = (float(v) for v in getattr(self, name))
            if not 0 < lo < hi:
                raise ValueError(f"{name} bounds must satisfy 0 < lower < upper, got {lo}, {hi}")
            object.__setattr__(self, name, (lo, hi))
        if not self.mean_sigma > 0:
            raise ValueError("mean_sigma must be positive")

    def log_bounds(self, d: int) -> np.ndarray:
        """``(d + 2, 2)`` array of log bounds for ``[log_ls..., log_sf, log_sn]``."""
        rows = [np.log(self.lengthscale)] * d + [np.log(self.amplitude), np.log(self.noise_std)]
        return np.array(rows)

    def to_dict(self) -> dict:
        return {
            "mean": {"mu": self.mean_mu, "sigma": self.mean_sigma},
            "lengthscale": list(self.lengthscale),
            "amplitude": list(self.amplitude),
            "noise_std": list(self.noise_std),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperpriors":
        mean = d.get("mean", {})
        return cls(
            float(mean.get("mu", 0.0)),
            float(mean.get("sigma", 100.0)),
            tuple(d.get("lengthscale", (1.0, 3.0))),
            tuple(d.get("amplitude", (1.0, 3.0))),
            tuple(d.get("noise_std", (20.0, 400.0))),
        )


def _cholesky_ladder(A: np.ndarray):
    """Lower Cholesky factor of ``A + j*I`` for the first ladder rung that works.

    A factor whose smallest pivot is below ``n * eps * max(diag)`` counts as a
    failure too: it reconstructs ``A`` but is useless for solves.
    """
    n = A.shape[0]
    scale = np.trace(A) / n
    floor = n * np.finfo(float).eps * np.max(np.diag(A))
    tried = []
    for rung in JITTER_LADDER:
        jitter = rung * scale
        tried.append(jitter)
        if jitter:
            M = A.copy(order="F")
            M[np.diag_indices(n)] += jitter
        else:
            M = A
        L, info = lapack.dpotrf(M, lower=1, clean=1)
        if info != 0 or not np.all(np.isfinite(np.diag(L))) or np.min(np.diag(L)) ** 2 <= floor:
            continue
        return L, jitter
    raise IllConditionedCovariance(
        f"covariance of size {n} not positive definite after jitter ladder {tried}", tried
    )


@dataclass(frozen=True)
class GpModel:
    """Fitted GP posterior; build with :func:`fit`."""

    dataset: Dataset
    params: KernelHyperparams
    chol: np.ndarray
    alpha: np.ndarray
    jitter_used: float

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def dim(self) -> int:
        return self.params.dim

    def covariance_with_noise(self) -> np.ndarray:
        X = self.dataset.X
        return covariance_matrix(X, X, self.params) + self.params.noise_variance * np.eye(self.n)


def fit(dataset: Dataset, params: KernelHyperparams) -> GpModel:
    """Factorize ``K + sigma_n^2 I`` (with jitter if needed) and precompute alpha."""
    if dataset.n and dataset.dim != params.dim:
        raise ValueError(f"dataset has dimension {dataset.dim}, params {params.dim}")
    n = dataset.n
    if n == 0:
        L = np.empty((0, 0))
        alpha = np.empty(0)
        jitter = 0.0
    else:
        X = dataset.X
        A = covariance_matrix(X, X, params)
        A[np.diag_indices(n)] += params.noise_variance
        L, jitter = _cholesky_ladder(A)
        resid = dataset.y - params.mean_constant
        alpha = linalg.cho_solve((L, True), resid, check_finite=False)
    for arr in (L, alpha):
        arr.flags.writeable = False
    return GpModel(dataset, params, L, alpha, jitter)


def condition_on(model: GpModel, X_new, y_new) -> GpModel:
    """Add observations under frozen hyperparameters via a block Cholesky update."""
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    data = model.dataset.append(X_new, y_new) if model.n else Dataset(X_new, np.ravel(y_new))
    if model.n == 0:
        return fit(data, model.params)
    p = model.params
    K12 = covariance_matrix(model.dataset.X, X_new, p)
    K22 = covariance_matrix(X_new, X_new, p)
    K22[np.diag_indices(len(X_new))] += p.noise_variance + model.jitter_used
    L12 = linalg.solve_triangular(model.chol, K12, lower=True, check_finite=False)
    S = K22 - L12.T @ L12
    try:
        L22 = linalg.cholesky(S, lower=True, check_finite=False)
        ok = np.min(np.diag(L22)) ** 2 > len(data.y) * np.finfo(float).eps * np.max(np.diag(K22))
    except linalg.LinAlgError:
        ok = False
    if not ok:
        return fit(data, p)
    n, m = model.n, len(X_new)
    L = np.zeros((n + m, n + m))
    L[:n, :n] = model.chol
    L[n:, :n] = L12.T
    L[n:, n:] = L22
    alpha = linalg.cho_solve((L, True), data.y - p.mean_constant, check_finite=False)
    L.flags.writeable = False
    alpha.flags.writeable = False
    return GpModel(data, p, L, alpha, model.jitter_used)


def predict(model: GpModel, X_star):
    """Posterior mean and latent (noise-free) variance at ``X_star``."""
    p = model.params
    Xs = np.atleast_2d(np.asarray(X_star, dtype=float))
    if Xs.shape[1] != p.dim:
        raise ValueError(f"expected points of dimension {p.dim}, got shape {Xs.shape}")
    if model.n == 0:
        return np.full(len(Xs), p.mean_constant), np.full(len(Xs), p.signal_variance)
    Ks = covariance_matrix(model.dataset.X, Xs, p)
    mu = p.mean_constant + Ks.T @ model.alpha
    V = linalg.solve_triangular(model.chol, Ks, lower=True, check_finite=False)
    var = p.signal_variance - np.einsum("ij,ij->j", V, V)
    return mu, np.maximum(var, 0.0)


def posterior_covariance(model: GpModel, X_star):
    p = model.params
    Xs = np.atleast_2d(np.asarray(X_star, dtype=float))
    mu, _ = predict(model, Xs)
    C = covariance_matrix(Xs, Xs, p)
    if model.n:
        V = linalg.solve_triangular(
            model.chol, covariance_matrix(model.dataset.X, Xs, p), lower=True, check_finite=False
        )
        C -= V.T @ V
    return mu, C


def sample_posterior_joint(model: GpModel, X_star, n_draws: int, rng: np.random.Generator):
    """``n_draws`` joint draws of the latent function at ``X_star``, shape ``(n_draws, p)``."""
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    p = model.params
    Xs = np.atleast_2d(np.asarray(X_star, dtype=float))
    mu, _ = predict(model, Xs)
    # the gram is exactly symmetric, so its transpose is a free Fortran view;
    # only the lower triangle is updated and only it is read by dpotrf
    C = covariance_matrix(Xs, Xs, p).T
    if model.n:
        V = linalg.solve_triangular(
            model.chol, covariance_matrix(model.dataset.X, Xs, p), lower=True, check_finite=False
        )
        C = blas.dsyrk(-1.0, V, beta=1.0, c=C, trans=1, lower=1, overwrite_c=1)
    if np.trace(C) <= 0:
        C[np.diag_indices(len(mu))] += p.signal_variance * 1e-12
    L, _ = _cholesky_ladder(C)
    z = rng.standard_normal((len(mu), n_draws))
    return (mu[:, None] + L @ z).T


# --- MAP objective -----------------------------------------------------------


class _MapObjective:
    """Log posterior of the packed hyperparameter vector for one dataset.

    ``theta = [log_ls..., log_sf, log_sn, mean]``. Bounds and prior constants
    are computed once; each call is one Cholesky plus one inverse.
    """

    def __init__(self, dataset: Dataset, priors: Hyperpriors):
        self.X = np.ascontiguousarray(dataset.X)
        self.y = dataset.y
        self.n, self.d = dataset.n, dataset.dim
        self.priors = priors
        self.bounds = priors.log_bounds(self.d)
        self.lp_const = (
            -math.log(priors.mean_sigma) - 0.5 * LOG_2PI
            - float(np.sum(np.log(self.bounds[:, 1] - self.bounds[:, 0])))
        )

    def __call__(self, theta):
        """``(value, gradient)``; ``OUT_OF_SUPPORT`` with zero gradient outside the prior box."""
        theta = np.asarray(theta, dtype=float)
        d, n = self.d, self.n
        logs = theta[:-1]
        if np.any(logs < self.bounds[:, 0]) or np.any(logs > self.bounds[:, 1]):
            return OUT_OF_SUPPORT, np.zeros_like(theta)
        pr = self.priors
        z = (theta[-1] - pr.mean_mu) / pr.mean_sigma
        value = self.lp_const - 0.5 * z * z
        grad = np.zeros_like(theta)
        grad[-1] = -z / pr.mean_sigma
        if n == 0:
            return value, grad

        inv_ls = np.ascontiguousarray(np.exp(-theta[:d]))
        sf2 = math.exp(2.0 * theta[d])
        sn2 = math.exp(2.0 * theta[d + 1])
        K = core.matern32_gram(self.X, inv_ls, sf2)
        A = K.copy()
        A[np.diag_indices(n)] += sn2
        L, _ = _cholesky_ladder(A)
        r = self.y - theta[-1]
        alpha, _ = lapack.dpotrs(L, r, lower=1)
        value += -0.5 * (r @ alpha) - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI

        Ainv, info = lapack.dpotri(L, lower=1)
        if info != 0:
            raise IllConditionedCovariance("inverse from Cholesky factor failed", [])
        Ainv = np.tril(Ainv)
        Ainv = Ainv + np.tril(Ainv, -1).T
        W = np.outer(alpha, alpha)
        W -= Ainv
        grad[:d] += core.matern32_ls_grad_contract(self.X, inv_ls, sf2, W)
        grad[d] += np.vdot(W, K)  # dA/dlog sf = 2K
        grad[d + 1] += sn2 * np.trace(W)  # dA/dlog sn = 2 sn^2 I
        grad[d + 2] += np.sum(alpha)
        return float(value), grad


def log_map_objective(params: KernelHyperparams, dataset: Dataset, priors: Hyperpriors) -> float:
    """Log marginal likelihood plus log hyperprior density; ``-1e300`` outside the prior box."""
    return _MapObjective(dataset, priors)(params.to_vector())[0]


def log_map_gradient(params: KernelHyperparams, dataset: Dataset, priors: Hyperpriors) -> np.ndarray:
    """Analytic gradient of :func:`log_map_objective` w.r.t. ``params.to_vector()``."""
    return _MapObjective(dataset, priors)(params.to_vector())[1]


def _restart_inits(d: int, priors: Hyperpriors, n: int, rng: np.random.Generator) -> np.ndarray:
    bounds = priors.log_bounds(d)
    lo = np.append(bounds[:, 0], 0.0)
    hi = np.append(bounds[:, 1], 1.0)
    U = latin_hypercube(n, Box(lo, hi), rng)
    # last column is a stratified uniform; push it through the Gaussian quantile
    U[:, -1] = priors.mean_mu + priors.mean_sigma * stats.norm.ppf(np.clip(U[:, -1], 1e-12, 1 - 1e-12))
    return U


def map_fit(dataset: Dataset, priors: Hyperpriors, n_restarts: int = 8,
            rng: np.random.Generator | None = None) -> KernelHyperparams:
    """Multi-start L-BFGS-B maximization of :func:`log_map_objective`.

    Restart inits are a Latin hypercube over the prior support. The returned
    point scores at least as well as every init.
    """
    if n_restarts < 1:
        raise ValueError("n_restarts must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    d = dataset.dim
    objective = _MapObjective(dataset, priors)
    bounds = [tuple(b) for b in priors.log_bounds(d)] + [(None, None)]

    def negobj(theta):
        try:
            v, g = objective(theta)
        except IllConditionedCovariance:
            return 1e300, np.zeros_like(theta)
        return -v, -g

    best_theta, best_val = None, -np.inf
    for theta0 in _restart_inits(d, priors, n_restarts, rng):
        v0, _ = negobj(theta0)
        if v0 < 1e299 and -v0 > best_val:
            best_theta, best_val = theta0.copy(), -v0
        if v0 >= 1e299:
            continue
        with np.errstate(all="ignore"):
            res = optimize.minimize(negobj, theta0, jac=True, method="L-BFGS-B",
                                    bounds=bounds)
        if np.all(np.isfinite(res.x)):
            v, _ = negobj(res.x)
            if v < 1e299 and -v > best_val:
                best_theta, best_val = np.array(res.x), -v
    if best_theta is None:
        raise HyperparameterFitError("no restart produced a factorizable covariance")
    return KernelHyperparams.from_vector(best_theta)
