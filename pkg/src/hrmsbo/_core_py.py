"""Pure-numpy twin of the compiled ``_core`` kernels."""
import numpy as np

SQRT3 = np.sqrt(3.0)


def _scaled_sqdiff(X1, X2, inv_ls):
    diff = (X1[:, None, :] - X2[None, :, :]) * inv_ls
    return diff * diff


def matern32_cross(X1, X2, inv_ls, sf2):
    r = np.sqrt(_scaled_sqdiff(X1, X2, inv_ls).sum(axis=-1))
    a = SQRT3 * r
    return sf2 * (1.0 + a) * np.exp(-a)


def matern32_gram(X, inv_ls, sf2):
    K = matern32_cross(X, X, inv_ls, sf2)
    np.fill_diagonal(K, sf2)
    return K


def matern32_ls_grads(X, inv_ls, sf2):
    """d K / d log(l_k) for every k, shape (d, n, n)."""
    sq = _scaled_sqdiff(X, X, inv_ls)
    e = 3.0 * sf2 * np.exp(-SQRT3 * np.sqrt(sq.sum(axis=-1)))
    return np.moveaxis(sq * e[:, :, None], -1, 0).copy()


def potentially_optimal(sizes, fvals, fmin, margin):
    sizes = np.asarray(sizes, dtype=float)
    fvals = np.asarray(fvals, dtype=float)
    n = len(sizes)
    if n == 0:
        return np.empty(0, dtype=np.intp)
    order = np.lexsort((np.arange(n), fvals, sizes))
    first = np.ones(n, dtype=bool)
    first[1:] = sizes[order[1:]] != sizes[order[:-1]]
    heads = order[first]

    hf = fvals[heads]
    start = len(heads) - 1 - int(np.argmin(hf[::-1]))
    hull = []
    for q in heads[start:]:
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (sizes[b] - sizes[a]) * (fvals[q] - fvals[a]) - (fvals[b] - fvals[a]) * (sizes[q] - sizes[a])
            if cross < 0.0:
                hull.pop()
            else:
                break
        hull.append(q)

    thresh = fmin - margin
    keep = []
    for h, q in enumerate(hull):
        if h == len(hull) - 1:
            keep.append(q)
            continue
        p = hull[h + 1]
        slope = (fvals[p] - fvals[q]) / (sizes[p] - sizes[q])
        if fvals[q] - slope * sizes[q] <= thresh:
            keep.append(q)
    return np.asarray(keep, dtype=np.intp)


def matern32_ls_grad_contract(X, inv_ls, sf2, W):
    """``0.5 * sum_ij W_ij dK_ij/dlog(l_k)`` for every k."""
    G = matern32_ls_grads(X, inv_ls, sf2)
    return 0.5 * np.einsum("ij,kij->k", W, G)
