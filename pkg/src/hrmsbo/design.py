"""Space-filling designs."""
import numpy as np

from .global_opt import Box


def latin_hypercube(n: int, box: Box, rng: np.random.Generator) -> np.ndarray:
    """``n`` points with exactly one sample per equal-width stratum in every dimension."""
    if n < 1:
        raise ValueError("n must be >= 1")
    d = box.dim
    u = rng.random((n, d))
    strata = np.column_stack([rng.permutation(n) for _ in range(d)])
    unit = (strata + u) / n
    return box.lo + unit * box.width
