"""Experiment sweeps over acquisition x RS x MS, plus their tables and audit.

A suite is a pure function of its :class:`ExperimentConfig`. Every run draws
its randomness from a ``SeedSequence`` keyed by the master seed and the
run's identity (never by its position in a list), so any single run can be
deleted and regenerated bit-exactly. Within one repetition every condition
shares the same initial design and the same seed-point noise (paired seeds).
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .acquisition import DEFAULT_BETA, DIRECT_EVALS_PER_DIM, KINDS, TS_GRID_PER_DIM, AcquisitionSpec
from .gp import Dataset, GpModel, Hyperpriors, fit
from .kernel import KernelHyperparams
from .objectives import (
    StochasticObjective,
    ground_truth_model,
    make_objective,
    surrogate_rmse,
    true_optimum,
    unit_grid,
)
from .sampling import ObjectiveEvaluationError, RunRecord, SamplingPlan, StopRule, run_gpbo

OBJECTIVE_ERROR = "objective_error"
RUNS_DIR = "runs"
TABLES = ("runs.csv", "conditions.csv", "accounting.csv", "fidelity.csv")
MANIFEST = "manifest.json"
TRUTH_FILE = "truth.json"

# stable codes for seed derivation; independent of the order in a config
_KIND_CODE = {k: i for i, k in enumerate(KINDS)}
_DESIGN_STREAM, _RUN_STREAM = 0, 1


class ConfigError(ValueError):
    pass


class VerificationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    objective_id: str
    objective_params: dict = field(default_factory=dict)
    acquisitions: tuple = ("EI", "UCB", "TS")
    rs_levels: tuple = (1, 3, 5, 10)
    ms_levels: tuple = (1, 3, 5)
    plans: tuple | None = None  # explicit (rs, ms) pairs; replaces the rs x ms product
    repetitions: int = 4
    max_function_evals: int | None = 120
    max_wall_clock: float | None = None
    master_seed: int = 0
    hyperpriors: Hyperpriors = field(default_factory=Hyperpriors)
    beta: float = DEFAULT_BETA
    ts_grid_per_dim: int = TS_GRID_PER_DIM
    direct_evals_per_dim: int = DIRECT_EVALS_PER_DIM
    map_restarts: int = 8
    seeds_per_dim: int = 10
    grid_per_dim: int = 50
    truth: str = "analytic"  # or "dense_gp"
    n_dense: int | None = None
    output_dir: str = "results"
    workers: int = 1

    def __post_init__(self):
        acqs = tuple(str(a).upper() for a in self.acquisitions)
        bad = [a for a in acqs if a not in KINDS]
        if bad or not acqs:
            raise ConfigError(f"acquisitions must be a nonempty subset of {KINDS}, got {self.acquisitions}")
        if len(set(acqs)) != len(acqs):
            raise ConfigError("duplicate acquisition kinds")
        object.__setattr__(self, "acquisitions", acqs)
        for name in ("rs_levels", "ms_levels"):
            levels = tuple(int(v) for v in getattr(self, name))
            if not levels or min(levels) < 1 or len(set(levels)) != len(levels):
                raise ConfigError(f"{name} must be distinct integers >= 1, got {getattr(self, name)}")
            object.__setattr__(self, name, levels)
        if self.plans is not None:
            plans = tuple((int(rs), int(ms)) for rs, ms in self.plans)
            if not plans or min(min(p) for p in plans) < 1 or len(set(plans)) != len(plans):
                raise ConfigError(f"plans must be distinct (rs, ms) pairs >= 1, got {self.plans}")
            object.__setattr__(self, "plans", plans)
        if int(self.repetitions) < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.max_function_evals is None and self.max_wall_clock is None:
            raise ConfigError("stop rule needs max_function_evals or max_wall_clock")
        if self.max_function_evals is not None and int(self.max_function_evals) < 1:
            raise ConfigError("max_function_evals must be >= 1")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")
        if self.truth not in ("analytic", "dense_gp"):
            raise ConfigError("truth must be 'analytic' or 'dense_gp'")
        if int(self.workers) < 1:
            raise ConfigError("workers must be >= 1")
        for name in ("map_restarts", "seeds_per_dim", "grid_per_dim", "ts_grid_per_dim",
                     "direct_evals_per_dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def stop(self) -> StopRule:
        return StopRule(self.max_function_evals, self.max_wall_clock)

    @property
    def sampling_plans(self) -> tuple:
        if self.plans is not None:
            return self.plans
        return tuple((rs, ms) for rs in self.rs_levels for ms in self.ms_levels)

    @property
    def n_runs(self) -> int:
        return len(self.acquisitions) * len(self.sampling_plans) * self.repetitions

    def objective(self) -> StochasticObjective:
        return make_objective(self.objective_id, self.objective_params)

    # --- serialization ---------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw or {})
        known = {"objective", "acquisitions", "rs_levels", "ms_levels", "plans", "repetitions", "stop",
                 "master_seed", "hyperpriors", "acquisition", "map_restarts", "seeds_per_dim",
                 "fidelity", "output_dir", "workers"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        obj = raw.get("objective")
        if not obj or "id" not in obj:
            raise ConfigError("objective.id is required")
        stop = raw.get("stop") or {}
        acq = raw.get("acquisition") or {}
        fid = raw.get("fidelity") or {}
        kw = dict(
            objective_id=obj["id"],
            objective_params=dict(obj.get("params") or {}),
            acquisitions=tuple(raw.get("acquisitions", cls.acquisitions)),
            rs_levels=tuple(raw.get("rs_levels", cls.rs_levels)),
            ms_levels=tuple(raw.get("ms_levels", cls.ms_levels)),
            plans=None if raw.get("plans") is None else tuple(tuple(p) for p in raw["plans"]),
            repetitions=int(raw.get("repetitions", cls.repetitions)),
            max_function_evals=stop.get("max_function_evals", cls.max_function_evals),
            max_wall_clock=stop.get("max_wall_clock"),
            master_seed=int(raw.get("master_seed", cls.master_seed)),
            beta=float(acq.get("beta", cls.beta)),
            ts_grid_per_dim=int(acq.get("ts_grid_per_dim", cls.ts_grid_per_dim)),
            direct_evals_per_dim=int(acq.get("direct_evals_per_dim", cls.direct_evals_per_dim)),
            map_restarts=int(raw.get("map_restarts", cls.map_restarts)),
            seeds_per_dim=int(raw.get("seeds_per_dim", cls.seeds_per_dim)),
            grid_per_dim=int(fid.get("grid_per_dim", cls.grid_per_dim)),
            truth=str(fid.get("truth", cls.truth)),
            n_dense=fid.get("n_dense"),
            output_dir=str(raw.get("output_dir", cls.output_dir)),
            workers=int(raw.get("workers", cls.workers)),
        )
        if "hyperpriors" in raw:
            kw["hyperpriors"] = Hyperpriors.from_dict(raw["hyperpriors"])
        return cls(**kw)

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def to_dict(self) -> dict:
        return {
            "objective": {"id": self.objective_id, "params": dict(self.objective_params)},
            "acquisitions": list(self.acquisitions),
            "rs_levels": list(self.rs_levels),
            "ms_levels": list(self.ms_levels),
            "plans": None if self.plans is None else [list(p) for p in self.plans],
            "repetitions": self.repetitions,
            "stop": {"max_function_evals": self.max_function_evals,
                     "max_wall_clock": self.max_wall_clock},
            "master_seed": self.master_seed,
            "hyperpriors": self.hyperpriors.to_dict(),
            "acquisition": {"beta": self.beta, "ts_grid_per_dim": self.ts_grid_per_dim,
                            "direct_evals_per_dim": self.direct_evals_per_dim},
            "map_restarts": self.map_restarts,
            "seeds_per_dim": self.seeds_per_dim,
            "fidelity": {"grid_per_dim": self.grid_per_dim, "truth": self.truth,
                         "n_dense": self.n_dense},
            "output_dir": self.output_dir,
            "workers": self.workers,
        }

    def science_dict(self) -> dict:
        """Everything that can change a result (drops output_dir and workers)."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("workers")
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(_canonical_json(self.science_dict()).encode()).hexdigest()


# --- run identity and seeds --------------------------------------------------


@dataclass(frozen=True)
class RunKey:
    acquisition: str
    rs: int
    ms: int
    repetition: int

    @property
    def run_id(self) -> str:
        return f"{self.acquisition}_rs{self.rs}_ms{self.ms}_rep{self.repetition:03d}"

    @property
    def condition(self) -> tuple:
        return (self.acquisition, self.rs, self.ms)


def run_keys(config: ExperimentConfig) -> list[RunKey]:
    return [RunKey(a, rs, ms, rep)
            for a in config.acquisitions
            for rs, ms in config.sampling_plans
            for rep in range(config.repetitions)]


def run_streams(master_seed: int, key: RunKey):
    """``(design_rng, run_rng)`` for one run.

    The design stream depends on the repetition only, which pairs all
    conditions of a repetition on the same seed points and seed noise.
    """
    design = np.random.SeedSequence(master_seed, spawn_key=(_DESIGN_STREAM, key.repetition))
    run = np.random.SeedSequence(
        master_seed, spawn_key=(_RUN_STREAM, key.repetition, _KIND_CODE[key.acquisition], key.rs, key.ms)
    )
    return np.random.default_rng(design), np.random.default_rng(run)


# --- ground truth --------------------------------------------------------------


@dataclass
class GroundTruth:
    """Reference surface for fidelity scoring."""

    kind: str
    objective: StochasticObjective
    model: GpModel | None = None
    optimum_value: float | None = None

    def __call__(self, X):
        if self.kind == "analytic":
            return self.objective.true_mean(X)
        from .gp import predict

        return predict(self.model, X)[0]

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "optimum_value": self.optimum_value}
        if self.model is not None:
            out["params"] = self.model.params.to_dict()
            out["X"] = self.model.dataset.X.tolist()
            out["y"] = self.model.dataset.y.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict, objective: StochasticObjective) -> "GroundTruth":
        model = None
        if "params" in d:
            data = Dataset(np.array(d["X"], dtype=float), d["y"])
            model = fit(data, KernelHyperparams.from_dict(d["params"]))
        return cls(d["kind"], objective, model, d.get("optimum_value"))


def build_truth(config: ExperimentConfig) -> GroundTruth:
    objective = config.objective()
    if config.truth == "analytic":
        if not objective.has_true_mean:
            raise ConfigError(f"{config.objective_id} has no analytic mean; use truth: dense_gp")
        return GroundTruth("analytic", objective, None, true_optimum(objective).value)
    n_dense = config.n_dense or 1000 * objective.dims
    rng = np.random.default_rng(np.random.SeedSequence(config.master_seed, spawn_key=(2,)))
    model = ground_truth_model(objective, n_dense, config.hyperpriors, rng, config.map_restarts)
    truth = GroundTruth("dense_gp", objective, model)
    from .global_opt import direct_minimize

    truth.optimum_value = float(direct_minimize(
        truth, objective.box, config.direct_evals_per_dim * objective.dims, vectorized=True).f_min)
    return truth


def load_or_build_truth(config: ExperimentConfig, out_dir: Path) -> GroundTruth:
    path = out_dir / TRUTH_FILE
    if config.truth == "dense_gp" and path.exists():
        stored = json.loads(path.read_text())
        if stored.get("config_hash") == config.config_hash():
            return GroundTruth.from_dict(stored["truth"], config.objective())
    truth = build_truth(config)
    if config.truth == "dense_gp":
        _write_text(path, _canonical_json({"config_hash": config.config_hash(), "truth": truth.to_dict()}))
    return truth


# --- executing runs ----------------------------------------------------------


def execute_run(config: ExperimentConfig, key: RunKey) -> RunRecord:
    """One optimization run for ``key``; evaluator errors end the run, not the suite."""
    objective = config.objective()
    design_rng, rng = run_streams(config.master_seed, key)
    spec = AcquisitionSpec(key.acquisition, config.beta if key.acquisition == "UCB" else None,
                           ts_grid_per_dim=config.ts_grid_per_dim)
    try:
        return run_gpbo(
            objective, objective.box, spec, SamplingPlan(key.rs, key.ms), config.hyperpriors, config.stop,
            rng, n_seeds=config.seeds_per_dim * objective.dims, n_restarts=config.map_restarts,
            direct_budget=config.direct_evals_per_dim * objective.dims, seed_rng=design_rng,
        )
    except ObjectiveEvaluationError as exc:
        exc.record.termination = OBJECTIVE_ERROR
        return exc.record


def record_lines(key: RunKey, record: RunRecord) -> list[str]:
    head = {"type": "header", "run_id": key.run_id, "repetition": key.repetition, **record.header()}
    lines = [_canonical_json(head)]
    lines += [_canonical_json({"type": "iteration", **it.to_dict()}) for it in record.iterations]
    lines.append(_canonical_json({"type": "summary", **record.summary()}))
    return lines


def read_record(path) -> tuple[RunKey, RunRecord]:
    header, iterations, summary = None, [], None
    with open(path) as fh:
        for line in fh:
            obj = json.loads(line)
            kind = obj.pop("type")
            if kind == "header":
                header = obj
            elif kind == "iteration":
                iterations.append(obj)
            elif kind == "summary":
                summary = obj
    if header is None or summary is None:
        raise VerificationError(f"{path}: missing header or summary line")
    key = RunKey(header["acquisition"], header["rs"], header["ms"], header["repetition"])
    return key, RunRecord.from_parts(header, iterations, summary)


def _run_and_store(args):
    config, key, out_dir = args
    record = execute_run(config, key)
    _write_text(Path(out_dir) / RUNS_DIR / f"{key.run_id}.jsonl", "\n".join(record_lines(key, record)) + "\n")
    return key, record


# --- rows and tables ---------------------------------------------------------


def run_row(key: RunKey, record: RunRecord, truth: GroundTruth, grid) -> dict:
    d = record.dim
    row = {
        "run_id": key.run_id,
        "acquisition": key.acquisition,
        "rs": key.rs,
        "ms": key.ms,
        "repetition": key.repetition,
        "termination": record.termination,
        "seeds": len(record.seed_points),
        "iterations": record.total_iterations,
        "function_evaluations": record.function_evaluations,
    }
    x_hat = record.x_hat if record.x_hat is not None else [float("nan")] * d
    for i in range(d):
        row[f"x_hat_{i + 1}"] = float(x_hat[i])
    row["y_hat"] = float("nan") if record.y_hat is None else float(record.y_hat)
    if record.x_hat is not None:
        row["y_true_at_x_hat"] = float(np.asarray(truth(np.array([record.x_hat])), dtype=float)[0])
    else:
        row["y_true_at_x_hat"] = float("nan")
    row["rmse"] = fidelity_of(record, truth, grid)
    row["max_jitter"] = float(max([record.initial_jitter] + [it.jitter_used for it in record.iterations]))
    return row


def fidelity_of(record: RunRecord, truth, grid) -> float:
    if record.final_hyperparams is None:
        return float("nan")
    return surrogate_rmse(record.final_model(), truth, grid)


@dataclass
class ConditionSummary:
    acquisition: str
    rs: int
    ms: int
    rows: list

    @property
    def key(self) -> tuple:
        return (self.acquisition, self.rs, self.ms)

    def _col(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    def aggregates(self, optimum_value: float | None, dim: int) -> dict:
        # population std (ddof=0): a 1-run condition reports spread 0
        out = {"acquisition": self.acquisition, "rs": self.rs, "ms": self.ms, "runs": len(self.rows)}
        for i in range(dim):
            out[f"x_hat_{i + 1}_std"] = _std(self._col(f"x_hat_{i + 1}"))
        y = self._col("y_hat")
        out["y_hat_mean"] = _mean(y)
        out["y_hat_std"] = _std(y)
        out["y_hat_bias"] = float("nan") if optimum_value is None else _mean(y) - optimum_value
        rmse = self._col("rmse")
        out["rmse_mean"] = _mean(rmse)
        out["rmse_std"] = _std(rmse)
        out["iterations_mean"] = _mean(self._col("iterations"))
        out["function_evaluations_mean"] = _mean(self._col("function_evaluations"))
        out["failures"] = sum(r["termination"] not in ("budget_exhausted", "wall_clock") for r in self.rows)
        return out


def _mean(a):
    return float(np.mean(a)) if len(a) else float("nan")


def _std(a):
    return float(np.std(a)) if len(a) else float("nan")


def group_conditions(rows: list[dict]) -> list[ConditionSummary]:
    groups: dict[tuple, ConditionSummary] = {}
    for r in rows:
        k = (r["acquisition"], int(r["rs"]), int(r["ms"]))
        groups.setdefault(k, ConditionSummary(*k, []))
        groups[k].rows.append(r)
    return list(groups.values())


def condition_table(rows, optimum_value, dim) -> list[dict]:
    return [c.aggregates(optimum_value, dim) for c in group_conditions(rows)]


def fidelity_report(records, truth, grid) -> list[dict]:
    """Per-condition mean and std of surrogate RMSE against ``truth`` on ``grid``.

    ``records`` is an iterable of ``(RunKey, RunRecord)``; each run's final
    model is refit from its stored data and hyperparameters.
    """
    per = {}
    for key, rec in records:
        per.setdefault(key.condition, []).append(fidelity_of(rec, truth, grid))
    return [{"acquisition": a, "rs": rs, "ms": ms, "runs": len(v), "rmse_mean": _mean(np.array(v)),
             "rmse_std": _std(np.array(v))} for (a, rs, ms), v in per.items()]


def evaluation_accounting(records) -> list[dict]:
    """Per-condition iteration and evaluation totals, with the identity check per run."""
    per: dict[tuple, dict] = {}
    for key, rec in records:
        row = per.setdefault(key.condition, {
            "acquisition": key.acquisition, "rs": key.rs, "ms": key.ms, "runs": 0, "seeds_total": 0,
            "iterations_total": 0, "function_evaluations_total": 0, "identity_holds": True,
        })
        row["runs"] += 1
        row["seeds_total"] += len(rec.seed_points)
        row["iterations_total"] += rec.total_iterations
        row["function_evaluations_total"] += rec.function_evaluations
        row["identity_holds"] = row["identity_holds"] and rec.check_accounting()
    return list(per.values())


# --- suite -------------------------------------------------------------------


@dataclass
class SuiteResult:
    config: ExperimentConfig
    out_dir: Path
    records: list  # [(RunKey, RunRecord), ...] in run_keys order
    rows: list
    conditions: list


def check_writable(out_dir: Path) -> None:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / RUNS_DIR).mkdir(exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=out_dir / RUNS_DIR):
            pass
    except OSError as exc:
        raise PermissionError(f"output directory {out_dir} is not writable: {exc}") from exc


def run_suite(config: ExperimentConfig, out_dir=None, keys: list[RunKey] | None = None) -> SuiteResult:
    """Execute every (acquisition, rs, ms, repetition) run and write all artifacts.

    ``keys`` restricts execution to a subset; runs whose record file already
    exists are then reused, which is how a deleted run is regenerated.
    """
    out_dir = Path(out_dir or config.output_dir)
    check_writable(out_dir)
    truth = load_or_build_truth(config, out_dir)
    all_keys = run_keys(config)
    todo = all_keys if keys is None else list(keys)
    jobs = [(config, k, str(out_dir)) for k in todo]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            done = dict(pool.map(_run_and_store, jobs))
    else:
        done = dict(map(_run_and_store, jobs))
    records = []
    for k in all_keys:
        if k in done:
            records.append((k, done[k]))
        else:
            path = out_dir / RUNS_DIR / f"{k.run_id}.jsonl"
            if path.exists():
                records.append(read_record(path))
    return write_tables(config, out_dir, records, truth)


def write_tables(config: ExperimentConfig, out_dir: Path, records, truth: GroundTruth) -> SuiteResult:
    dim = config.objective().dims
    grid = unit_grid(truth.objective.box, config.grid_per_dim)
    rows = [run_row(k, r, truth, grid) for k, r in records]
    conditions = condition_table(rows, truth.optimum_value, dim)
    fidelity = [{k: c[k] for k in ("acquisition", "rs", "ms", "runs", "rmse_mean", "rmse_std")}
                for c in conditions]
    _write_text(out_dir / "runs.csv", to_csv(rows))
    _write_text(out_dir / "conditions.csv", to_csv(conditions))
    _write_text(out_dir / "accounting.csv", to_csv(evaluation_accounting(records)))
    _write_text(out_dir / "fidelity.csv", to_csv(fidelity))
    write_manifest(config, out_dir, truth)
    return SuiteResult(config, out_dir, records, rows, conditions)


def write_manifest(config: ExperimentConfig, out_dir: Path, truth: GroundTruth) -> dict:
    files = sorted([*TABLES, *(f"{RUNS_DIR}/{p.name}" for p in (out_dir / RUNS_DIR).glob("*.jsonl"))])
    if (out_dir / TRUTH_FILE).exists():
        files.append(TRUTH_FILE)
    manifest = {
        "config_hash": config.config_hash(),
        "config": config.science_dict(),
        "truth": {"kind": truth.kind, "optimum_value": truth.optimum_value},
        "files": {f: _sha256(out_dir / f) for f in files},
    }
    _write_text(out_dir / MANIFEST, _canonical_json(manifest, indent=2) + "\n")
    return manifest


# --- report and verify -------------------------------------------------------


def load_suite(out_dir) -> tuple[ExperimentConfig, list]:
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / MANIFEST).read_text())
    config = ExperimentConfig.from_dict({**manifest["config"], "output_dir": str(out_dir)})
    records = [read_record(out_dir / RUNS_DIR / f"{k.run_id}.jsonl") for k in run_keys(config)
               if (out_dir / RUNS_DIR / f"{k.run_id}.jsonl").exists()]
    return config, records


def report(out_dir) -> dict:
    """Fidelity and accounting tables recomputed from the stored run records."""
    config, records = load_suite(out_dir)
    truth = load_or_build_truth(config, Path(out_dir))
    grid = unit_grid(truth.objective.box, config.grid_per_dim)
    return {"fidelity": fidelity_report(records, truth, grid), "accounting": evaluation_accounting(records)}


def verify(out_dir) -> list[str]:
    """Audit a finished suite; returns a list of problems (empty means it passes).

    Checks file hashes, the per-run evaluation identity, that every expected
    run is present, that per-run rows match the stored records and that every
    aggregate table equals its recomputation from the per-run rows.
    """
    out_dir = Path(out_dir)
    problems = []
    try:
        manifest = json.loads((out_dir / MANIFEST).read_text())
    except (OSError, ValueError) as exc:
        return [f"cannot read manifest: {exc}"]
    for name, digest in manifest["files"].items():
        path = out_dir / name
        if not path.exists():
            problems.append(f"missing file {name}")
        elif _sha256(path) != digest:
            problems.append(f"hash mismatch for {name}")
    try:
        config, records = load_suite(out_dir)
    except (OSError, ValueError, KeyError, VerificationError) as exc:
        return problems + [f"cannot load run records: {exc}"]
    if config.config_hash() != manifest["config_hash"]:
        problems.append("config hash does not match the stored config")
    if len(records) != config.n_runs:
        problems.append(f"expected {config.n_runs} runs, found {len(records)}")
    for key, rec in records:
        if not rec.check_accounting():
            problems.append(f"{key.run_id}: evals != seeds + sum(rs*ms)")
        if (key.rs, key.ms, key.acquisition) != (rec.rs, rec.ms, rec.acquisition):
            problems.append(f"{key.run_id}: header does not match file name")

    try:
        problems += _verify_tables(out_dir, config, records)
    except (OSError, ValueError, TypeError, KeyError) as exc:
        problems.append(f"malformed summary tables: {exc}")
    return problems


def _verify_tables(out_dir: Path, config: ExperimentConfig, records) -> list[str]:
    problems = []
    stored_rows = read_csv(out_dir / "runs.csv")
    truth = load_or_build_truth(config, out_dir)
    grid = unit_grid(truth.objective.box, config.grid_per_dim)
    fresh_rows = [run_row(k, r, truth, grid) for k, r in records]
    if to_csv(fresh_rows) != (out_dir / "runs.csv").read_text():
        problems.append("runs.csv differs from recomputation from run records")
    dim = config.objective().dims
    conditions = condition_table(stored_rows, truth.optimum_value, dim)
    if to_csv(conditions) != (out_dir / "conditions.csv").read_text():
        problems.append("conditions.csv differs from recomputation from runs.csv")
    fidelity = [{k: c[k] for k in ("acquisition", "rs", "ms", "runs", "rmse_mean", "rmse_std")}
                for c in conditions]
    if to_csv(fidelity) != (out_dir / "fidelity.csv").read_text():
        problems.append("fidelity.csv differs from recomputation from runs.csv")
    if to_csv(evaluation_accounting(records)) != (out_dir / "accounting.csv").read_text():
        problems.append("accounting.csv differs from recomputation from run records")
    for acc in read_csv(out_dir / "accounting.csv"):
        group = [r for r in stored_rows
                 if (r["acquisition"], r["rs"], r["ms"]) == (acc["acquisition"], acc["rs"], acc["ms"])]
        if sum(r["function_evaluations"] for r in group) != acc["function_evaluations_total"]:
            problems.append(f"accounting total mismatch for {acc['acquisition']} RS{acc['rs']}/MS{acc['ms']}")
    return problems


# --- io helpers ----------------------------------------------------------------


def _canonical_json(obj, indent=None) -> str:
    return json.dumps(obj, sort_keys=True, indent=indent, allow_nan=True)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v)
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = list(rows[0])
    writer.writerow(cols)
    for r in rows:
        writer.writerow([_fmt(r[c]) for c in cols])
    return buf.getvalue()


def _parse(v: str):
    if v in ("true", "false"):
        return v == "true"
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    return v


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: _parse(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def _write_text(path: Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text)
    os.replace(tmp, path)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def with_overrides(config: ExperimentConfig, *, seed=None, out=None, workers=None, budget=None):
    changes = {}
    if seed is not None:
        changes["master_seed"] = int(seed)
    if out is not None:
        changes["output_dir"] = str(out)
    if workers is not None:
        changes["workers"] = int(workers)
    if budget is not None:
        changes["max_function_evals"] = int(budget)
    return replace(config, **changes) if changes else config
