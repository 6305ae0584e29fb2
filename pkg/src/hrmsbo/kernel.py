"""Matern 3/2 covariance with per-dimension (ARD) lengthscales."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import core

SQRT3 = np.sqrt(3.0)


@dataclass(frozen=True)
class KernelHyperparams:
    """Kernel and likelihood hyperparameters, stored in log space.

    Attributes
    ----------
    log_lengthscales : tuple of float
        One log lengthscale per input dimension.
    log_signal_amplitude : float
        Log of the signal standard deviation ``sigma_f``.
    log_noise_std : float
        Log of the observation-noise standard deviation ``sigma_n``.
    mean_constant : float
        Constant prior mean, in objective units.
    """

    log_lengthscales: tuple
    log_signal_amplitude: float = 0.0
    log_noise_std: float = -3.0
    mean_constant: float = 0.0

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.log_lengthscales))
        object.__setattr__(self, "log_lengthscales", ls)
        object.__setattr__(self, "log_signal_amplitude", float(self.log_signal_amplitude))
        object.__setattr__(self, "log_noise_std", float(self.log_noise_std))
        object.__setattr__(self, "mean_constant", float(self.mean_constant))
        if len(ls) == 0:
            raise ValueError("at least one lengthscale is required")
        vals = ls + (self.log_signal_amplitude, self.log_noise_std, self.mean_constant)
        if not all(np.isfinite(vals)):
            raise ValueError(f"non-finite hyperparameter in {vals}")

    @property
    def dim(self) -> int:
        return len(self.log_lengthscales)

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(np.asarray(self.log_lengthscales))

    @property
    def signal_variance(self) -> float:
        return float(np.exp(2.0 * self.log_signal_amplitude))

    @property
    def noise_variance(self) -> float:
        return float(np.exp(2.0 * self.log_noise_std))

    def to_vector(self) -> np.ndarray:
        """Pack as ``[log_ls..., log_sf, log_sn, mean]``."""
        return np.array(
            self.log_lengthscales
            + (self.log_signal_amplitude, self.log_noise_std, self.mean_constant)
        )

    @classmethod
    def from_vector(cls, theta) -> "KernelHyperparams":
        theta = np.asarray(theta, dtype=float)
        return cls(tuple(theta[:-3]), theta[-3], theta[-2], theta[-1])

    def to_dict(self) -> dict:
        return {
            "log_lengthscales": list(self.log_lengthscales),
            "log_signal_amplitude": self.log_signal_amplitude,
            "log_noise_std": self.log_noise_std,
            "mean_constant": self.mean_constant,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelHyperparams":
        return cls(
            tuple(d["log_lengthscales"]),
            d["log_signal_amplitude"],
            d["log_noise_std"],
            d["mean_constant"],
        )


def _as_points(X, d: int) -> np.ndarray:
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
    if X.shape[1] != d:
        raise ValueError(f"expected points of dimension {d}, got shape {X.shape}")
    return X


def scaled_distance(x, x_prime, params: KernelHyperparams) -> float:
    """Lengthscale-weighted Euclidean distance between two points."""
    x = np.asarray(x, dtype=float).ravel()
    x_prime = np.asarray(x_prime, dtype=float).ravel()
    if x.shape != x_prime.shape or x.size != params.dim:
        raise ValueError(
            f"dimension mismatch: {x.size}, {x_prime.size} vs {params.dim} lengthscales"
        )
    z = (x - x_prime) / params.lengthscales
    return float(np.sqrt(np.dot(z, z)))


def matern32(r, params: KernelHyperparams):
    """``sigma_f^2 (1 + sqrt(3) r) exp(-sqrt(3) r)`` for an already-scaled r."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise ValueError("distance must be nonnegative")
    a = SQRT3 * r_arr
    out = params.signal_variance * (1.0 + a) * np.exp(-a)
    return float(out) if out.ndim == 0 else out


def covariance_matrix(X, X_prime, params: KernelHyperparams) -> np.ndarray:
    """Cross-covariance ``K(X, X')``; passing the same object twice gives an exactly symmetric gram."""
    d = params.dim
    inv_ls = np.ascontiguousarray(1.0 / params.lengthscales)
    A = _as_points(X, d)
    if X_prime is X:
        return core.matern32_gram(A, inv_ls, params.signal_variance)
    B = _as_points(X_prime, d)
    return core.matern32_cross(A, B, inv_ls, params.signal_variance)


def lengthscale_gradients(X, params: KernelHyperparams) -> np.ndarray:
    """Stack of ``dK/dlog(l_k)``, shape ``(d, n, n)``."""
    A = _as_points(X, params.dim)
    inv_ls = np.ascontiguousarray(1.0 / params.lengthscales)
    return core.matern32_ls_grads(A, inv_ls, params.signal_variance)
