r"""Proximal and closed-form kernels shared by the solvers.

Three operations cover every subproblem the iterative detectors solve:
ridge-regularized least squares, singular value thresholding (the
proximal operator of the nuclear norm), and the column-group soft
threshold (the proximal operator of the l2,1 norm with pixel columns
as groups).
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError


class SingularSystemError(RuntimeError):
    """Raised when a regularized normal-equation system cannot be factorized.

    Happens only for ``lam = 0`` with a rank-deficient design matrix; the
    caller should raise the regularization weight.
    """


@dataclass(frozen=True)
class SvdFactors:
    """Economy SVD ``m = u @ diag(sigma) @ vt.T`` with nonincreasing sigma."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T


def svd_factors(m) -> SvdFactors:
    """Economy-size SVD of ``m`` as an :class:`SvdFactors` triple."""
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise ValueError("svd_factors: input contains non-finite values")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    return SvdFactors(u=u, sigma=s, v=vt.T)


def nuclear_norm(m) -> float:
    """Sum of singular values of ``m``."""
    return float(np.linalg.svd(np.asarray(m, dtype=float), compute_uv=False).sum())


def l21_norm(m) -> float:
    """Sum of column l2 norms of ``m``."""
    return float(np.linalg.norm(np.asarray(m, dtype=float), axis=0).sum())


def solve_spd(mat, rhs) -> np.ndarray:
    """Solve ``mat @ z = rhs`` for symmetric positive definite ``mat``.

    Uses a Cholesky factorization; raises :class:`SingularSystemError` when
    the factorization fails (matrix singular or indefinite).
    """
    try:
        factor = cho_factor(mat, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise SingularSystemError(
            "Cholesky factorization failed; the system is singular "
            "(increase the ridge weight)"
        ) from exc
    return cho_solve(factor, rhs, check_finite=False)


def ridge_solve(mat, rhs, lam) -> np.ndarray:
    r"""Ridge least squares: argmin_Z 0.5*||rhs - mat Z||_F^2 + 0.5*lam*||Z||_F^2.

    Solved through the normal equations
    ``(mat.T mat + lam I) Z = mat.T rhs`` with an SPD factorization of the
    regularized Gram matrix (no explicit inverse).

    Parameters
    ----------
    mat : array_like, shape (m, n)
        Design matrix multiplying the unknown from the left.
    rhs : array_like, shape (m, p)
        Target being approximated by ``mat @ Z``.
    lam : float
        Nonnegative ridge weight. With ``lam = 0`` the Gram matrix must be
        invertible, otherwise :class:`SingularSystemError` is raised.
    """
    if lam < 0:
        raise ValueError(f"ridge weight must be nonnegative, got {lam}")
    mat = np.asarray(mat, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    gram = mat.T @ mat
    if lam > 0:
        gram[np.diag_indices_from(gram)] += lam
    return solve_spd(gram, mat.T @ rhs)


def svt(m, tau) -> np.ndarray:
    r"""Singular value thresholding: ``U max(Sigma - tau, 0) V^T``.

    The unique minimizer of ``tau*||J||_* + 0.5*||J - m||_F^2``. Singular
    values of the result equal ``max(sigma_i - tau, 0)``.
    """
    if tau < 0:
        raise ValueError(f"threshold must be nonnegative, got {tau}")
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise ValueError("svt: input contains non-finite values")
    if tau == 0:
        return m.copy()
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    return (u * np.maximum(s - tau, 0.0)) @ vt


def prox_l21_columns(r, tau) -> np.ndarray:
    r"""Column-wise group soft threshold.

    Each column ``r_j`` maps to ``r_j * max(0, ||r_j||_2 - tau) / ||r_j||_2``,
    the unique minimizer of ``tau*||s||_2 + 0.5*||s - r_j||_2^2``; columns
    with norm at most ``tau`` map to zero.
    """
    if tau < 0:
        raise ValueError(f"threshold must be nonnegative, got {tau}")
    r = np.asarray(r, dtype=float)
    norms = np.linalg.norm(r, axis=0)
    scale = np.zeros_like(norms)
    above = norms > tau
    scale[above] = (norms[above] - tau) / norms[above]
    return r * scale
