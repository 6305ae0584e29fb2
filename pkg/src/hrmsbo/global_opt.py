"""DIRECT (dividing rectangles) global minimization over a box."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._backend import core

DEFAULT_EPS = 1e-4


@dataclass(frozen=True)
class Box:
    """Axis-aligned search box in input-space units."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi) or len(lo) == 0:
            raise ValueError("lower and upper must have the same nonzero length")
        if not all(a < b for a, b in zip(lo, hi)):
            raise ValueError(f"need lower < upper in every dimension, got {lo}, {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, d: int) -> "Box":
        return cls((0.0,) * d, (1.0,) * d)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper)

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return denormalize(np.full(self.dim, 0.5), self)

    def contains(self, X) -> bool:
        X = np.atleast_2d(X)
        return bool(np.all((X >= self.lo) & (X <= self.hi)))


def normalize(point, box: Box) -> np.ndarray:
    """Map box coordinates onto the unit cube."""
    return (np.asarray(point, dtype=float) - box.lo) / box.width


def denormalize(point, box: Box) -> np.ndarray:
    """Map unit-cube coordinates back into the box."""
    u = np.asarray(point, dtype=float)
    # pin the corners exactly so containment never fails on round-off
    return np.clip(box.lo + u * box.width, box.lo, box.hi)


@dataclass(frozen=True)
class Rectangle:
    """One DIRECT cell in normalized coordinates.

    ``levels[i] = k`` means the side along dimension ``i`` is ``3**-k``.
    """

    center: np.ndarray
    levels: np.ndarray
    f_center: float
    index: int

    @property
    def side_lengths(self) -> np.ndarray:
        return 3.0 ** -np.asarray(self.levels, dtype=float)

    @property
    def size(self) -> float:
        return float(_half_diagonal(np.atleast_2d(self.levels))[0])


def _half_diagonal(levels: np.ndarray) -> np.ndarray:
    # sum in sorted order: equal level multisets give bitwise-equal sizes
    return 0.5 * np.sqrt(np.sum(9.0 ** -np.sort(levels, axis=1).astype(float), axis=1))


class _Cells:
    """Growable structure-of-arrays store of DIRECT rectangles."""

    def __init__(self, d: int, capacity: int):
        self.n = 0
        self.centers = np.empty((capacity, d))
        self.levels = np.empty((capacity, d), dtype=np.int64)
        self.fvals = np.empty(capacity)
        self.sizes = np.empty(capacity)

    def add(self, centers, levels, fvals):
        m = len(fvals)
        if self.n + m > len(self.fvals):
            cap = max(2 * len(self.fvals), self.n + m)
            for name in ("centers", "levels", "fvals", "sizes"):
                old = getattr(self, name)
                new = np.empty((cap,) + old.shape[1:], dtype=old.dtype)
                new[: self.n] = old[: self.n]
                setattr(self, name, new)
        sl = slice(self.n, self.n + m)
        self.centers[sl] = centers
        self.levels[sl] = levels
        self.fvals[sl] = fvals
        self.sizes[sl] = _half_diagonal(np.asarray(levels))
        self.n += m

    def set_levels(self, i, levels):
        self.levels[i] = levels
        self.sizes[i] = _half_diagonal(levels[None, :])[0]

    def get(self, i) -> Rectangle:
        return Rectangle(self.centers[i].copy(), self.levels[i].copy(), float(self.fvals[i]), i)


@dataclass
class DirectResult:
    x_min: np.ndarray
    f_min: float
    evals_used: int
    history: list = field(default_factory=list)  # running best after each round
    points: np.ndarray | None = None  # every sampled point, box units


class DirectError(RuntimeError):
    pass


def direct_minimize(f, box: Box, max_evals: int, eps: float = DEFAULT_EPS,
                    vectorized: bool = False) -> DirectResult:
    """Minimize ``f`` over ``box`` with at most ``max_evals`` evaluations.

    With ``vectorized=True``, ``f`` receives an ``(m, d)`` array holding all
    new centers of a round and returns ``m`` values; otherwise it is called
    once per point. Non-finite values are treated as +inf.
    """
    if max_evals < 1:
        raise ValueError("max_evals must be >= 1")
    d = box.dim

    def evaluate(U):
        X = denormalize(U, box)
        if vectorized:
            vals = np.asarray(f(X), dtype=float).reshape(len(X))
        else:
            vals = np.array([float(f(x)) for x in X])
        return np.where(np.isfinite(vals), vals, np.inf)

    cells = _Cells(d, min(max_evals, 4096))
    c0 = np.full((1, d), 0.5)
    cells.add(c0, np.zeros((1, d), dtype=np.int64), evaluate(c0))
    evals = 1
    best_i = 0
    history = [cells.fvals[0]]

    while evals < max_evals:
        N = cells.n
        fv = cells.fvals[:N]
        finite = np.isfinite(fv)
        if finite.any():
            fmin, fmax = fv[finite].min(), fv[finite].max()
            if not finite.all():
                fv = np.where(finite, fv, fmax + 1.0 + abs(fmax))
        else:
            fmin = fmax = 0.0
            fv = np.zeros(N)
        # eps is scaled by the observed range so selection is shift-invariant
        chosen = core.potentially_optimal(
            np.ascontiguousarray(cells.sizes[:N]), np.ascontiguousarray(fv), fmin, eps * (fmax - fmin)
        )

        # trial points for every chosen rectangle that still fits the budget
        plans = []
        batch = []
        offset = 0
        remaining = max_evals - evals
        for ri in chosen:
            lv = cells.levels[ri]
            long_dims = np.flatnonzero(lv == lv.min())
            need = 2 * len(long_dims)
            if need > remaining:
                continue
            remaining -= need
            delta = 3.0 ** -(lv.min() + 1)
            pts = np.repeat(cells.centers[ri][None, :], need, axis=0)
            rows = np.arange(need)
            pts[rows, np.repeat(long_dims, 2)] += np.tile([delta, -delta], len(long_dims))
            plans.append((ri, long_dims, offset))
            batch.append(pts)
            offset += need
        if not plans:
            break
        U = np.vstack(batch)
        vals = evaluate(U)
        evals += len(U)

        first_new = cells.n
        for ri, long_dims, off in plans:
            k = len(long_dims)
            v = vals[off:off + 2 * k].reshape(k, 2)
            order = np.argsort(v.min(axis=1), kind="stable")
            levels = cells.levels[ri].copy()
            new_levels = []
            new_rows = []
            for j in order:
                levels[long_dims[j]] += 1
                new_levels.extend([levels.copy(), levels.copy()])
                new_rows.extend([off + 2 * j, off + 2 * j + 1])
            cells.add(U[new_rows], np.array(new_levels), vals[new_rows])
            cells.set_levels(ri, levels)
        new_f = cells.fvals[first_new:cells.n]
        j = int(np.argmin(new_f))
        if new_f[j] < cells.fvals[best_i]:
            best_i = first_new + j
        history.append(cells.fvals[best_i])

    best = cells.get(best_i)
    if not np.isfinite(best.f_center):
        raise DirectError("objective returned non-finite values at every sampled point")
    return DirectResult(denormalize(best.center, box), best.f_center, evals, history,
                        denormalize(cells.centers[: cells.n], box))
