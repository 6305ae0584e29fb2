"""Stochastic test objectives and surrogate-fidelity scoring."""
from __future__ import annotations

import time
from dataclasses import dataclass
from importlib import resources

import numpy as np
import yaml
from scipy import stats

from .design import latin_hypercube
from .global_opt import Box
from .gp import Dataset, GpModel, Hyperpriors, fit, map_fit, predict


class StochasticObjective:
    """Noisy black box on a box domain.

    Subclasses implement ``sample(X, rng)`` (one draw per row) and may
    implement ``true_mean(X)``. ``evaluate`` is the single-point entry point
    used by the optimizer; it honors ``eval_latency`` (seconds of simulated
    cost per call).
    """

    name = "objective"
    box: Box
    eval_latency: float = 0.0
    has_true_mean = True

    @property
    def dims(self) -> int:
        return self.box.dim

    def sample(self, X, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def true_mean(self, X) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, x, rng: np.random.Generator) -> float:
        x = np.asarray(x, dtype=float).reshape(1, self.dims)
        if self.eval_latency > 0:
            time.sleep(self.eval_latency)
        return float(self.sample(x, rng)[0])

    def describe(self) -> dict:
        return {"id": self.name}


def forrester(x):
    x = np.asarray(x, dtype=float)
    return (6.0 * x - 2.0) ** 2 * np.sin(12.0 * x - 4.0)


def forrester_noisy(x, noise_std: float, rng: np.random.Generator) -> float:
    """Forrester function plus Gaussian noise with sd ``noise_std``."""
    val = float(forrester(x))
    return val + noise_std * rng.standard_normal() if noise_std > 0 else val


def branin(X):
    X = np.atleast_2d(X)
    a, b, c = 1.0, 5.1 / (4 * np.pi**2), 5.0 / np.pi
    r, s, t = 6.0, 10.0, 1.0 / (8 * np.pi)
    x1, x2 = X[:, 0], X[:, 1]
    return a * (x2 - b * x1**2 + c * x1 - r) ** 2 + s * (1 - t) * np.cos(x1) + s


class Forrester(StochasticObjective):
    name = "forrester"

    def __init__(self, noise_std: float = 0.0, eval_latency: float = 0.0):
        if noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        self.noise_std = float(noise_std)
        self.eval_latency = float(eval_latency)
        self.box = Box((0.0,), (1.0,))

    def true_mean(self, X):
        return forrester(np.atleast_2d(X)[:, 0])

    def sample(self, X, rng):
        mean = self.true_mean(X)
        if self.noise_std == 0:
            return mean
        return mean + self.noise_std * rng.standard_normal(len(mean))

    def describe(self):
        return {"id": self.name, "noise_std": self.noise_std}


class Branin(StochasticObjective):
    name = "branin"

    def __init__(self, noise_std: float = 0.0, eval_latency: float = 0.0):
        self.noise_std = float(noise_std)
        self.eval_latency = float(eval_latency)
        self.box = Box((-5.0, 0.0), (10.0, 15.0))

    def true_mean(self, X):
        return branin(X)

    def sample(self, X, rng):
        mean = self.true_mean(X)
        if self.noise_std == 0:
            return mean
        return mean + self.noise_std * rng.standard_normal(len(mean))

    def describe(self):
        return {"id": self.name, "noise_std": self.noise_std}


def load_ttk_surface(path=None) -> dict:
    """Read the synthetic-TTK constants (the packaged file by default)."""
    if path is None:
        text = resources.files("hrmsbo").joinpath("data/synthetic_ttk.yaml").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return yaml.safe_load(text)


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _truncnorm_mean(mean, sd, lo, hi):
    a, b = (lo - mean) / sd, (hi - mean) / sd
    return stats.truncnorm.mean(a, b, loc=mean, scale=sd)


class SyntheticTTK(StochasticObjective):
    """Censored, multi-modal, heteroskedastic stand-in for a combat-simulation TTK.

    Outcome branches per draw: blue win (TTK below ``t_max``), mutual
    survival (TTK exactly ``t_max``) or blue loss (``2*t_max - T_elim``).
    """

    name = "synthetic_ttk"

    def __init__(self, surface: dict | None = None, eval_latency: float = 0.0):
        self.surface = load_ttk_surface() if surface is None else surface
        self.eval_latency = float(eval_latency)
        self.box = Box((0.0, 0.0), (1.0, 1.0))
        self.t_max = float(self.surface["t_max"])

    def _bumps(self, X):
        out = []
        for basin in self.surface["win"]["basins"]:
            z = (X - np.asarray(basin["center"])) / np.asarray(basin["width"])
            out.append(np.exp(-0.5 * np.sum(z * z, axis=1)))
        return out

    def ridge(self, X):
        r = self.surface["ridge"]
        return _smoothstep((X[:, 1] - r["start"]) / (r["end"] - r["start"]))

    def branch_probabilities(self, X):
        """``(p_win, p_survive, p_loss)`` arrays for rows of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        s = self.surface
        bumps = self._bumps(X)
        raw = s["win"]["base"] + sum(b["amplitude"] * g for b, g in zip(s["win"]["basins"], bumps))
        ridge = self.ridge(X)
        p_win = np.clip(raw, 0.0, 1.0) * (1.0 - ridge)
        p_loss_given = np.clip(s["loss"]["base"] + s["loss"]["ridge_gain"] * ridge, 0.0, 1.0)
        p_loss = (1.0 - p_win) * p_loss_given
        p_surv = np.clip(1.0 - p_win - p_loss, 0.0, 1.0)
        return p_win, p_surv, p_loss

    def _durations(self, X):
        s = self.surface
        bumps = self._bumps(X)
        pull = sum(b["speedup"] * g for b, g in zip(s["win"]["basins"], bumps))
        pull = np.clip(pull, 0.0, 1.0)
        wt = s["win_time"]
        win_mean = wt["slowest"] - (wt["slowest"] - wt["fastest"]) * pull
        et = s["elim_time"]
        elim_mean = et["mean"] + et["ridge_shift"] * self.ridge(X)
        return win_mean, float(wt["sd"]), elim_mean, float(et["sd"])

    def true_mean(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        p_win, p_surv, p_loss = self.branch_probabilities(X)
        win_mean, win_sd, elim_mean, elim_sd = self._durations(X)
        t = self.t_max
        e_win = _truncnorm_mean(win_mean, win_sd, 0.0, t)
        e_elim = _truncnorm_mean(elim_mean, elim_sd, 0.0, t)
        return p_win * e_win + p_surv * t + p_loss * (2.0 * t - e_elim)

    def sample(self, X, rng):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = len(X)
        # two uniforms per draw regardless of branch: keeps streams aligned
        u = rng.random((n, 2))
        p_win, p_surv, _ = self.branch_probabilities(X)
        win_mean, win_sd, elim_mean, elim_sd = self._durations(X)
        t = self.t_max
        u_val = np.clip(u[:, 1], 1e-12, 1.0 - 1e-12)
        win = stats.truncnorm.ppf(u_val, -win_mean / win_sd, (t - win_mean) / win_sd,
                                  loc=win_mean, scale=win_sd)
        elim = stats.truncnorm.ppf(u_val, -elim_mean / elim_sd, (t - elim_mean) / elim_sd,
                                   loc=elim_mean, scale=elim_sd)
        out = np.where(u[:, 0] < p_win, win,
                       np.where(u[:, 0] < p_win + p_surv, t, 2.0 * t - elim))
        return out

    def to_physical(self, X) -> np.ndarray:
        r = self.surface["physical_ranges"]
        lo = np.array([r["launch"][0], r["intspeed"][0]])
        hi = np.array([r["launch"][1], r["intspeed"][1]])
        return lo + np.atleast_2d(X) * (hi - lo)

    def describe(self):
        return {"id": self.name, "surface_version": self.surface.get("version")}


OBJECTIVES = {"forrester": Forrester, "branin": Branin, "synthetic_ttk": SyntheticTTK}


def make_objective(obj_id: str, params: dict | None = None) -> StochasticObjective:
    params = dict(params or {})
    try:
        cls = OBJECTIVES[obj_id]
    except KeyError:
        raise ValueError(f"unknown objective {obj_id!r}; known: {sorted(OBJECTIVES)}") from None
    if cls is SyntheticTTK and "surface_file" in params:
        params["surface"] = load_ttk_surface(params.pop("surface_file"))
    return cls(**params)


def ground_truth_model(objective: StochasticObjective, n_dense: int, priors: Hyperpriors,
                       rng: np.random.Generator, n_restarts: int = 8) -> GpModel:
    """GP fit (MAP) to ``n_dense`` single evaluations at Latin-hypercube locations."""
    if n_dense < 100 * objective.dims:
        raise ValueError(f"n_dense must be at least {100 * objective.dims}")
    X = latin_hypercube(n_dense, objective.box, rng)
    y = objective.sample(X, rng)
    data = Dataset(X, y)
    return fit(data, map_fit(data, priors, n_restarts, rng))


def surrogate_rmse(model: GpModel, reference, grid) -> float:
    """Root-mean-square gap between the model's posterior mean and ``reference`` on ``grid``."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if len(grid) == 0:
        raise ValueError("grid must be nonempty")
    mu, _ = predict(model, grid)
    ref = np.asarray(reference(grid), dtype=float).reshape(len(grid))
    return float(np.sqrt(np.mean((mu - ref) ** 2)))


def unit_grid(box: Box, n_per_dim: int) -> np.ndarray:
    """Full-factorial grid with ``n_per_dim`` evenly spaced points per axis (ends included)."""
    axes = [np.linspace(a, b, n_per_dim) for a, b in zip(box.lower, box.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


@dataclass(frozen=True)
class TrueOptimum:
    x: np.ndarray
    value: float


def true_optimum(objective: StochasticObjective, n_per_dim: int = 201) -> TrueOptimum:
    """Grid search of ``true_mean`` refined by DIRECT."""
    from .global_opt import direct_minimize

    grid = unit_grid(objective.box, n_per_dim)
    vals = objective.true_mean(grid)
    i = int(np.argmin(vals))
    res = direct_minimize(objective.true_mean, objective.box, 2000 * objective.dims, vectorized=True)
    if res.f_min < vals[i]:
        return TrueOptimum(res.x_min, float(res.f_min))
    return TrueOptimum(grid[i], float(vals[i]))
