"""Initial dictionary construction from pixel-spectrum clustering.

Lloyd's k-means with deterministic farthest-first seeding supplies the
starting atoms; the starting coefficients are the ridge projection of the
data onto the normalized atoms, so the initial product already tracks the
observations.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import ridge_solve


@dataclass(frozen=True)
class KmeansResult:
    """Clustering output: atoms as columns, per-pixel assignment, inertia."""

    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    n_iter: int
    inertia_history: tuple


def _as_values(x) -> np.ndarray:
    values = getattr(x, "values", x)
    return np.asarray(values, dtype=float)


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, pixels x centroids."""
    x2 = np.einsum("ij,ij->j", x, x)
    c2 = np.einsum("ij,ij->j", centroids, centroids)
    d2 = x2[:, None] - 2.0 * (x.T @ centroids) + c2[None, :]
    return np.maximum(d2, 0.0)


def _inertia(x: np.ndarray, centroids: np.ndarray, assignments: np.ndarray) -> float:
    # direct differences: exact zero when every pixel sits on its centroid
    diff = x - centroids[:, assignments]
    return float(np.sum(diff * diff))


def _farthest_first_seeds(rng, x: np.ndarray, k: int) -> np.ndarray:
    """First seed drawn from the RNG, then greedy farthest-point traversal.

    Ties resolve to the lowest pixel index, so seeding is deterministic for
    a given seed.
    """
    n = x.shape[1]
    seeds = np.empty(k, dtype=int)
    seeds[0] = int(rng.integers(n))
    d2 = _sq_dists(x, x[:, seeds[:1]])[:, 0]
    for i in range(1, k):
        seeds[i] = int(np.argmax(d2))
        d2 = np.minimum(d2, _sq_dists(x, x[:, seeds[i : i + 1]])[:, 0])
    return seeds


def kmeans(x, k: int, max_iters: int = 100, seed: int = 0) -> KmeansResult:
    """Lloyd's algorithm over pixel spectra (columns of a bands x pixels matrix).

    Stops when assignments are unchanged or after ``max_iters``. An empty
    cluster is reseeded to the pixel farthest from its assigned centroid.
    Deterministic per seed.
    """
    x = _as_values(x)
    n = x.shape[1]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, n_pixels={n}], got {k}")
    if max_iters < 1:
        raise ValueError(f"max_iters must be at least 1, got {max_iters}")
    rng = np.random.default_rng(seed)
    centroids = x[:, _farthest_first_seeds(rng, x, k)].copy()
    assignments = np.full(n, -1, dtype=int)
    history = []
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        new_assignments = np.argmin(_sq_dists(x, centroids), axis=1)
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        for j in range(k):
            members = assignments == j
            if members.any():
                centroids[:, j] = x[:, members].mean(axis=1)
        # reseed empty clusters to the worst-represented pixels
        counts = np.bincount(assignments, minlength=k)
        empties = np.flatnonzero(counts == 0)
        if empties.size:
            d2 = _sq_dists(x, centroids)
            own = d2[np.arange(n), assignments].copy()
            for j in empties:
                far = int(np.argmax(own))
                centroids[:, j] = x[:, far]
                assignments = assignments.copy()
                assignments[far] = j
                own[far] = -1.0
        history.append(_inertia(x, centroids, np.argmin(_sq_dists(x, centroids), axis=1)))
    assignments = np.argmin(_sq_dists(x, centroids), axis=1)
    inertia = _inertia(x, centroids, assignments)
    return KmeansResult(
        centroids=centroids,
        assignments=assignments,
        inertia=inertia,
        n_iter=n_iter,
        inertia_history=tuple(history),
    )


def init_dictionary(x, k: int = 15, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Starting atoms and coefficients for the low-rank solvers.

    Atoms are k-means centroids rescaled to unit l2 norm; coefficients are
    the ridge projection of the data onto the atoms (weight 1e-6), so the
    product of the two approximates the input.
    """
    x = _as_values(x)
    centroids = kmeans(x, k=k, seed=seed).centroids
    norms = np.linalg.norm(centroids, axis=0)
    scale = np.where(norms > 0, norms, 1.0)
    d0 = centroids / scale
    l0 = ridge_solve(d0, x, 1e-6)
    return d0, l0
