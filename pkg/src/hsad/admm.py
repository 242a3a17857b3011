r"""Classical alternating-direction solver for the dictionary-learnable
low-rank-plus-column-sparse model.

The model splits a bands x pixels observation ``X`` into a background
``D @ L`` (atoms times coefficients) and a column-sparse anomaly part
``S``::

    min_{D,L,S}  0.5*||X - D L - S||_F^2 + 0.5*lambda1*||D||_F^2
                 + lambda2*||L||_*  +  lambda3*||S||_{2,1}

with the l2,1 groups taken per pixel (column). An auxiliary ``J = L``
splits the nuclear term, giving the scaled augmented Lagrangian::

    0.5*||X - D L - S||_F^2 + 0.5*lambda1*||D||_F^2 + lambda2*||J||_*
    + lambda3*||S||_{2,1} + 0.5*mu*||L - J + d||_F^2

where ``d`` is the scaled multiplier. Every subproblem has a closed form:
ridge solves for D and L, the column soft threshold for S, singular value
thresholding for J, and a residual step for d, with ``mu`` geometrically
increased up to a cap after each sweep.
"""

import csv
from dataclasses import dataclass, replace

import numpy as np

from .evaluation import AnomalyScoreMap
from .numerics import l21_norm, nuclear_norm, prox_l21_columns, ridge_solve, solve_spd, svt


class NumericalAbort(RuntimeError):
    """A solver produced non-finite values; carries where and which variable."""

    def __init__(self, iteration: int, variable: str, stage_kind: str = "iteration"):
        self.iteration = iteration
        self.variable = variable
        super().__init__(
            f"non-finite values in {variable} at {stage_kind} {iteration}"
        )


@dataclass(frozen=True)
class AdmmConfig:
    """Penalty weights and stopping controls.

    ``eps_primal`` bounds the coupling residual ``||L - J||_F`` and
    ``eps_recon`` bounds the squared change of the reconstruction between
    sweeps; both must hold to stop early. When left as None they default to
    ``1e-6 * ||X||_F`` and ``1e-8 * ||X||_F**2`` at run time.
    """

    lambda1: float = 0.5
    lambda2: float = 1.2e-5
    lambda3: float = 1e-5
    mu: float = 1.0
    rho: float = 1.5
    mu_max: float = 1e6
    eps_primal: float | None = None
    eps_recon: float | None = None
    max_iters: int = 100
    normalize_atoms: bool = True

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("penalty weights must be nonnegative")
        if self.mu <= 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.rho <= 1:
            raise ValueError(f"rho must exceed 1, got {self.rho}")
        if self.mu > self.mu_max:
            raise ValueError(f"mu={self.mu} exceeds mu_max={self.mu_max}")
        for name in ("eps_primal", "eps_recon"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be at least 1, got {self.max_iters}")


@dataclass(frozen=True)
class LrrState:
    """The evolving variable tuple (D, L, S, J, d, mu)."""

    d_atoms: np.ndarray   # bands x k dictionary atoms
    l_coef: np.ndarray    # k x pixels coefficients
    s_anom: np.ndarray    # bands x pixels column-sparse anomalies
    j_aux: np.ndarray     # k x pixels auxiliary copy of l_coef
    d_mult: np.ndarray    # k x pixels scaled multiplier
    mu: float

    @classmethod
    def initial(cls, d0: np.ndarray, l0: np.ndarray, n_bands: int, mu: float) -> "LrrState":
        d0 = np.asarray(d0, dtype=float)
        l0 = np.asarray(l0, dtype=float)
        if d0.shape[1] != l0.shape[0]:
            raise ValueError(
                f"atom count {d0.shape[1]} does not match coefficient rows {l0.shape[0]}"
            )
        zeros_like_l = np.zeros_like(l0)
        return cls(
            d_atoms=d0,
            l_coef=l0,
            s_anom=np.zeros((n_bands, l0.shape[1])),
            j_aux=zeros_like_l,
            d_mult=zeros_like_l.copy(),
            mu=float(mu),
        )


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    objective: float
    primal_residual: float
    recon_error: float
    mu: float


@dataclass(frozen=True)
class AdmmResult:
    state: LrrState
    trace: tuple
    stop_reason: str  # "converged" or "max_iters"

    @property
    def n_iters(self) -> int:
        return len(self.trace)


def _as_values(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=float)


def reconstruction(state: LrrState) -> np.ndarray:
    """The model's image estimate ``D L + S``."""
    return state.d_atoms @ state.l_coef + state.s_anom


def objective(x, state: LrrState, cfg: AdmmConfig) -> float:
    """The model objective (data fit, atom ridge, nuclear, l2,1 terms)."""
    x = _as_values(x)
    fit = x - state.d_atoms @ state.l_coef - state.s_anom
    return float(
        0.5 * np.sum(fit * fit)
        + 0.5 * cfg.lambda1 * np.sum(state.d_atoms * state.d_atoms)
        + cfg.lambda2 * nuclear_norm(state.l_coef)
        + cfg.lambda3 * l21_norm(state.s_anom)
    )


def augmented_lagrangian(x, state: LrrState, cfg: AdmmConfig) -> float:
    """Scaled augmented Lagrangian (nuclear term on J, coupling on L - J + d)."""
    x = _as_values(x)
    fit = x - state.d_atoms @ state.l_coef - state.s_anom
    couple = state.l_coef - state.j_aux + state.d_mult
    return float(
        0.5 * np.sum(fit * fit)
        + 0.5 * cfg.lambda1 * np.sum(state.d_atoms * state.d_atoms)
        + cfg.lambda2 * nuclear_norm(state.j_aux)
        + cfg.lambda3 * l21_norm(state.s_anom)
        + 0.5 * state.mu * np.sum(couple * couple)
    )


def update_d(x, state: LrrState, cfg: AdmmConfig) -> LrrState:
    """Exact atom update: ``D = (X - S) L^T (L L^T + lambda1 I)^{-1}``."""
    x = _as_values(x)
    d_new = ridge_solve(state.l_coef.T, (x - state.s_anom).T, cfg.lambda1).T
    return replace(state, d_atoms=d_new)


def update_l(x, state: LrrState, cfg: AdmmConfig) -> LrrState:
    """Exact coefficient update ``(D^T D + mu I)^{-1} [D^T (X - S) + mu (J - d)]``."""
    x = _as_values(x)
    d = state.d_atoms
    gram = d.T @ d
    gram[np.diag_indices_from(gram)] += state.mu
    rhs = d.T @ (x - state.s_anom) + state.mu * (state.j_aux - state.d_mult)
    return replace(state, l_coef=solve_spd(gram, rhs))


def update_s(x, state: LrrState, cfg: AdmmConfig) -> LrrState:
    """Column soft threshold of the fit residual at lambda3."""
    x = _as_values(x)
    residual = x - state.d_atoms @ state.l_coef
    return replace(state, s_anom=prox_l21_columns(residual, cfg.lambda3))


def update_j(state: LrrState, cfg: AdmmConfig) -> LrrState:
    """Singular value thresholding of ``L + d`` at ``lambda2 / mu``."""
    return replace(state, j_aux=svt(state.l_coef + state.d_mult, cfg.lambda2 / state.mu))


def update_multiplier(state: LrrState, cfg: AdmmConfig) -> LrrState:
    """Scaled dual ascent ``d += L - J``, then ``mu = min(rho*mu, mu_max)``."""
    d_new = state.d_mult + (state.l_coef - state.j_aux)
    return replace(state, d_mult=d_new, mu=min(cfg.rho * state.mu, cfg.mu_max))


def normalize_atoms(state: LrrState) -> LrrState:
    """Rescale atoms to unit l2 norm, folding the inverse scale into L.

    Preserves the product ``D @ L``; zero-norm atoms are left untouched.
    """
    norms = np.linalg.norm(state.d_atoms, axis=0)
    scale = np.where(norms > 0, norms, 1.0)
    return replace(
        state,
        d_atoms=state.d_atoms / scale,
        l_coef=state.l_coef * scale[:, None],
    )


def _check_finite(arr: np.ndarray, iteration: int, variable: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalAbort(iteration, variable)


def admm_run(x, cfg: AdmmConfig | None = None, init=None) -> AdmmResult:
    """Run the full alternating loop from a (d0, l0) starting point.

    One sweep updates D, L, S, J, then the multiplier; atoms are optionally
    renormalized after the D step (``cfg.normalize_atoms``). Stops when the
    coupling residual and the squared reconstruction change both fall below
    their tolerances, or at ``max_iters``. The trace holds one record per
    sweep with ``mu`` as used during that sweep.
    """
    x = _as_values(x)
    cfg = cfg if cfg is not None else AdmmConfig()
    if init is None:
        raise ValueError("admm_run requires an init pair (d0, l0)")
    d0, l0 = init
    state = LrrState.initial(d0, l0, n_bands=x.shape[0], mu=cfg.mu)
    if state.l_coef.shape[1] != x.shape[1]:
        raise ValueError(
            f"coefficient columns {state.l_coef.shape[1]} do not match pixel count {x.shape[1]}"
        )

    norm_x = float(np.linalg.norm(x))
    eps_primal = cfg.eps_primal if cfg.eps_primal is not None else 1e-6 * max(norm_x, 1e-6)
    eps_recon = cfg.eps_recon if cfg.eps_recon is not None else 1e-8 * max(norm_x, 1e-6) ** 2

    prev_recon = reconstruction(state)
    trace = []
    stop_reason = "max_iters"
    for iteration in range(1, cfg.max_iters + 1):
        mu_used = state.mu
        state = update_d(x, state, cfg)
        _check_finite(state.d_atoms, iteration, "d_atoms")
        if cfg.normalize_atoms:
            state = normalize_atoms(state)
        state = update_l(x, state, cfg)
        _check_finite(state.l_coef, iteration, "l_coef")
        state = update_s(x, state, cfg)
        _check_finite(state.s_anom, iteration, "s_anom")
        state = update_j(state, cfg)
        _check_finite(state.j_aux, iteration, "j_aux")
        state = update_multiplier(state, cfg)
        _check_finite(state.d_mult, iteration, "d_mult")

        primal = float(np.linalg.norm(state.l_coef - state.j_aux))
        recon = reconstruction(state)
        recon_err = float(np.linalg.norm(x - recon))
        trace.append(
            IterationRecord(
                iteration=iteration,
                objective=objective(x, state, cfg),
                primal_residual=primal,
                recon_error=recon_err,
                mu=mu_used,
            )
        )
        recon_change_sq = float(np.sum((recon - prev_recon) ** 2))
        prev_recon = recon
        if primal < eps_primal and recon_change_sq < eps_recon:
            stop_reason = "converged"
            break
    return AdmmResult(state=state, trace=tuple(trace), stop_reason=stop_reason)


def anomaly_scores(state: LrrState, rows: int | None = None, cols: int | None = None) -> AnomalyScoreMap:
    """Per-pixel anomaly strength: column norms of S, min-max scaled to [0, 1].

    Without ``rows``/``cols`` the map is returned as a single row.
    """
    norms = np.linalg.norm(state.s_anom, axis=0)
    if rows is None or cols is None:
        rows, cols = 1, norms.size
    if rows * cols != norms.size:
        raise ValueError(f"rows*cols = {rows * cols} does not match pixel count {norms.size}")
    span = norms.max() - norms.min()
    scores = np.zeros_like(norms) if span == 0 else (norms - norms.min()) / span
    return AnomalyScoreMap(scores=scores.reshape(rows, cols))


def write_trace_csv(trace, path) -> None:
    """Trace CSV: iter, objective, primal_residual, recon_error, mu."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "objective", "primal_residual", "recon_error", "mu"])
        for rec in trace:
            writer.writerow(
                [rec.iteration, repr(rec.objective), repr(rec.primal_residual),
                 repr(rec.recon_error), repr(rec.mu)]
            )
