"""Seeding, repeat/multi-point sampling plans and the main optimization loop."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .acquisition import AcquisitionSpec, incumbent, propose
from .design import latin_hypercube
from .global_opt import Box, direct_minimize
from .gp import (
    Dataset,
    GpModel,
    HyperparameterFitError,
    Hyperpriors,
    IllConditionedCovariance,
    fit,
    map_fit,
    predict,
)
from .kernel import KernelHyperparams

__all__ = [
    "SamplingPlan", "StopRule", "IterationRecord", "RunRecord", "ObjectiveEvaluationError",
    "latin_hypercube", "seed_count", "expand_plan", "run_gpbo", "estimate_optimum",
]

BUDGET_EXHAUSTED = "budget_exhausted"
WALL_CLOCK = "wall_clock"
COVARIANCE_FAILURE = "covariance_failure"


@dataclass(frozen=True)
class SamplingPlan:
    """``rs`` repeats at each of ``ms`` proposed locations per iteration."""

    rs: int = 1
    ms: int = 1

    def __post_init__(self):
        if int(self.rs) < 1 or int(self.ms) < 1:
            raise ValueError(f"rs and ms must be >= 1, got rs={self.rs}, ms={self.ms}")
        object.__setattr__(self, "rs", int(self.rs))
        object.__setattr__(self, "ms", int(self.ms))

    @property
    def evals_per_iteration(self) -> int:
        return self.rs * self.ms

    @property
    def label(self) -> str:
        return f"RS{self.rs}/MS{self.ms}"


@dataclass(frozen=True)
class StopRule:
    max_function_evals: int | None = None
    max_wall_clock: float | None = None

    def __post_init__(self):
        if self.max_function_evals is None and self.max_wall_clock is None:
            raise ValueError("need max_function_evals or max_wall_clock")


def seed_count(d: int, per_dim: int = 10) -> int:
    """Number of initial design points, ``per_dim * d``."""
    if d < 1:
        raise ValueError("d must be >= 1")
    return per_dim * d


def expand_plan(proposals, plan: SamplingPlan) -> np.ndarray:
    """Replicate every proposal ``rs`` times, location-major."""
    P = np.atleast_2d(np.asarray(proposals, dtype=float))
    if len(P) != plan.ms:
        raise ValueError(f"expected {plan.ms} proposals, got {len(P)}")
    return np.repeat(P, plan.rs, axis=0)


def estimate_optimum(model: GpModel, box: Box, budget: int | None = None, minimize: bool = True):
    """DIRECT optimum of the posterior mean; returns ``(x_hat, y_hat)``."""
    budget = 500 * box.dim if budget is None else budget
    sign = 1.0 if minimize else -1.0
    res = direct_minimize(lambda X: sign * predict(model, X)[0], box, budget, vectorized=True)
    x_hat = res.x_min
    y_hat = float(predict(model, x_hat[None, :])[0][0])
    return x_hat, y_hat


@dataclass
class IterationRecord:
    index: int
    proposals: list
    evaluations: list  # [(x, y), ...] in request order
    hyperparams: dict
    incumbent_x: list | None
    incumbent_f: float
    best_incumbent_f: float
    jitter_used: float

    def to_dict(self) -> dict:
        return {
            "iteration": self.index,
            "proposals": self.proposals,
            "evaluations": [{"x": x, "y": y} for x, y in self.evaluations],
            "incumbent": {"x": self.incumbent_x, "f": self.incumbent_f},
            "best_incumbent_f": self.best_incumbent_f,
            "hyperparams": self.hyperparams,
            "jitter_used": self.jitter_used,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IterationRecord":
        return cls(
            d["iteration"],
            d["proposals"],
            [(e["x"], e["y"]) for e in d["evaluations"]],
            d["hyperparams"],
            d["incumbent"]["x"],
            d["incumbent"]["f"],
            d["best_incumbent_f"],
            d["jitter_used"],
        )


@dataclass
class RunRecord:
    """Complete trace of one optimization run."""

    acquisition: str
    rs: int
    ms: int
    dim: int
    seed_points: list = field(default_factory=list)  # [(x, y), ...]
    iterations: list = field(default_factory=list)
    termination: str = BUDGET_EXHAUSTED
    initial_hyperparams: dict | None = None
    initial_jitter: float = 0.0
    x_hat: list | None = None
    y_hat: float | None = None
    error: str | None = None

    @property
    def total_iterations(self) -> int:
        return len(self.iterations)

    @property
    def function_evaluations(self) -> int:
        return len(self.seed_points) + sum(len(it.evaluations) for it in self.iterations)

    @property
    def totals(self) -> dict:
        return {"iterations": self.total_iterations, "function_evaluations": self.function_evaluations}

    @property
    def final_hyperparams(self) -> dict | None:
        return self.iterations[-1].hyperparams if self.iterations else self.initial_hyperparams

    def dataset(self) -> Dataset:
        pairs = list(self.seed_points)
        for it in self.iterations:
            pairs.extend(it.evaluations)
        if not pairs:
            return Dataset.empty(self.dim)
        X = np.array([p[0] for p in pairs], dtype=float).reshape(len(pairs), self.dim)
        return Dataset(X, [p[1] for p in pairs])

    def final_model(self) -> GpModel:
        """Refit the last accepted hyperparameters to the full dataset."""
        return fit(self.dataset(), KernelHyperparams.from_dict(self.final_hyperparams))

    def check_accounting(self) -> bool:
        per_iter = self.rs * self.ms
        ok = all(len(it.evaluations) == per_iter for it in self.iterations)
        expected = len(self.seed_points) + per_iter * len(self.iterations)
        return ok and self.function_evaluations == expected

    def header(self) -> dict:
        return {
            "acquisition": self.acquisition,
            "rs": self.rs,
            "ms": self.ms,
            "dim": self.dim,
            "seed_points": [{"x": x, "y": y} for x, y in self.seed_points],
            "initial_hyperparams": self.initial_hyperparams,
            "initial_jitter": self.initial_jitter,
        }

    def summary(self) -> dict:
        return {
            "acquisition": self.acquisition,
            "rs": self.rs,
            "ms": self.ms,
            "termination": self.termination,
            "totals": self.totals,
            "final_hyperparams": self.final_hyperparams,
            "x_hat": self.x_hat,
            "y_hat": self.y_hat,
            "error": self.error,
        }

    @classmethod
    def from_parts(cls, header: dict, iterations: list, summary: dict) -> "RunRecord":
        rec = cls(header["acquisition"], header["rs"], header["ms"], header["dim"])
        rec.seed_points = [(s["x"], s["y"]) for s in header["seed_points"]]
        rec.initial_hyperparams = header["initial_hyperparams"]
        rec.initial_jitter = header["initial_jitter"]
        rec.iterations = [IterationRecord.from_dict(d) for d in iterations]
        rec.termination = summary["termination"]
        rec.x_hat = summary["x_hat"]
        rec.y_hat = summary["y_hat"]
        rec.error = summary.get("error")
        return rec


class ObjectiveEvaluationError(RuntimeError):
    """The objective raised; ``record`` holds every completed iteration."""

    def __init__(self, message, record: RunRecord):
        super().__init__(message)
        self.record = record


def _tolist(x) -> list:
    return [float(v) for v in np.ravel(x)]


def _evaluate_all(objective, X, rng, record, where):
    ys = []
    for x in X:
        try:
            ys.append(float(objective.evaluate(x, rng)))
        except Exception as exc:  # noqa: BLE001 - any evaluator failure aborts the run
            record.error = f"{where}: {type(exc).__name__}: {exc}"
            raise ObjectiveEvaluationError(record.error, record) from exc
    return ys


def run_gpbo(objective, box: Box, spec: AcquisitionSpec, plan: SamplingPlan, priors: Hyperpriors,
             stop: StopRule, rng: np.random.Generator, *, n_seeds: int | None = None,
             n_restarts: int = 8, direct_budget: int | None = None,
             seed_rng: np.random.Generator | None = None) -> RunRecord:
    """Bayesian optimization with ``plan.ms`` proposals per iteration, each repeated ``plan.rs`` times.

    Randomness: the initial design and its evaluations use ``seed_rng`` (a
    child of ``rng`` when omitted); every iteration then spawns three child
    streams of ``rng`` for acquisition, evaluation noise and the MAP refit.
    An iteration starts only if its ``rs*ms`` evaluations fit in the
    evaluation budget; wall-clock limits are checked between iterations.
    """
    t0 = time.monotonic()
    d = box.dim
    spec = spec.with_q(plan.ms)
    record = RunRecord(spec.kind, plan.rs, plan.ms, d)
    max_evals = stop.max_function_evals

    n0 = seed_count(d) if n_seeds is None else int(n_seeds)
    if max_evals is not None:
        n0 = min(n0, max_evals)
    design_rng = rng.spawn(1)[0] if seed_rng is None else seed_rng
    map_rng = rng.spawn(1)[0]
    X0 = latin_hypercube(n0, box, design_rng) if n0 else np.empty((0, d))
    y0 = _evaluate_all(objective, X0, design_rng, record, "seed")
    record.seed_points = [(_tolist(x), y) for x, y in zip(X0, y0)]
    data = Dataset(X0, y0) if n0 else Dataset.empty(d)

    try:
        if data.n >= 2:
            params = map_fit(data, priors, n_restarts, map_rng)
        else:
            params = _prior_center(priors, d)
        model = fit(data, params)
    except (IllConditionedCovariance, HyperparameterFitError) as exc:
        record.termination = COVARIANCE_FAILURE
        record.error = str(exc)
        return record
    record.initial_hyperparams = params.to_dict()
    record.initial_jitter = model.jitter_used
    best_f = incumbent(model, spec.minimize).f_best

    per_iter = plan.evals_per_iteration
    evals = n0
    while True:
        if max_evals is not None and evals + per_iter > max_evals:
            record.termination = BUDGET_EXHAUSTED
            break
        if stop.max_wall_clock is not None and time.monotonic() - t0 >= stop.max_wall_clock:
            record.termination = WALL_CLOCK
            break
        acq_rng, noise_rng, map_rng = rng.spawn(3)
        try:
            proposals = propose(model, spec, box, direct_budget, acq_rng)
        except (IllConditionedCovariance, HyperparameterFitError) as exc:
            record.termination = COVARIANCE_FAILURE
            record.error = str(exc)
            break
        requests = expand_plan(proposals, plan)
        ys = _evaluate_all(objective, requests, noise_rng, record, f"iteration {len(record.iterations)}")
        data = data.append(requests, ys)
        evals += len(ys)
        failure = None
        try:
            new_params = map_fit(data, priors, n_restarts, map_rng)
            model = fit(data, new_params)
            params = new_params
        except (IllConditionedCovariance, HyperparameterFitError) as exc:
            # keep the evaluations on record; the previous model stays current
            failure = exc
        inc = incumbent(model, spec.minimize)
        best_f = min(best_f, inc.f_best) if spec.minimize else max(best_f, inc.f_best)
        record.iterations.append(IterationRecord(
            len(record.iterations),
            [_tolist(p) for p in proposals],
            [(_tolist(x), y) for x, y in zip(requests, ys)],
            params.to_dict(),
            None if inc.x_best is None else _tolist(inc.x_best),
            inc.f_best,
            best_f,
            model.jitter_used,
        ))
        if failure is not None:
            record.termination = COVARIANCE_FAILURE
            record.error = str(failure)
            break

    x_hat, y_hat = estimate_optimum(model, box, direct_budget, spec.minimize)
    record.x_hat = _tolist(x_hat)
    record.y_hat = y_hat
    return record


def _prior_center(priors: Hyperpriors, d: int) -> KernelHyperparams:
    b = priors.log_bounds(d).mean(axis=1)
    return KernelHyperparams(tuple(b[:d]), b[d], b[d + 1], priors.mean_mu)
