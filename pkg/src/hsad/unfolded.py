"""Multi-stage unfolded solver with trainable per-stage scalars.

Each stage replays one sweep of the alternating solver with its own four
scalars: the atom ridge weight, the coupling weight (which generates the
coefficient-update matrices and the multiplier step), the sparse threshold,
and the singular-value threshold. Initialized from the classical schedule,
an untrained K-stage forward pass is arithmetically identical to K solver
sweeps; training then adjusts the 4K scalars against the reconstruction
loss with a derivative-free coordinate search.
"""

import csv
import json
from dataclasses import dataclass, replace

import numpy as np

from . import admm
from .admm import AdmmConfig, LrrState, NumericalAbort
from .numerics import svt


@dataclass(frozen=True)
class StageParams:
    """One stage's scalars: ridge weight, coupling weight, two thresholds.

    All are nonnegative with a strictly positive coupling weight; training
    works on their logarithms, so trained values stay strictly positive.
    """

    lambda1: float
    mu: float
    lambda3: float
    theta: float

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError(f"stage coupling weight mu must be positive, got {self.mu}")
        for name in ("lambda1", "lambda3", "theta"):
            if getattr(self, name) < 0:
                raise ValueError(f"stage parameter {name} must be nonnegative")

    def to_raw(self) -> np.ndarray:
        values = np.array([self.lambda1, self.mu, self.lambda3, self.theta])
        if (values <= 0).any():
            raise ValueError("log reparameterization requires strictly positive parameters")
        return np.log(values)

    @classmethod
    def from_raw(cls, raw) -> "StageParams":
        lam1, mu, lam3, theta = np.exp(np.asarray(raw, dtype=float))
        return cls(lambda1=float(lam1), mu=float(mu), lambda3=float(lam3), theta=float(theta))


@dataclass(frozen=True)
class UnfoldedModel:
    """An ordered stack of stages plus the atom count they expect."""

    stages: tuple
    k_atoms: int
    normalize_each_stage: bool = False

    def __post_init__(self):
        if len(self.stages) < 1:
            raise ValueError("model needs at least one stage")
        object.__setattr__(self, "stages", tuple(self.stages))

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    def raw_params(self) -> np.ndarray:
        return np.concatenate([s.to_raw() for s in self.stages])

    def with_raw_params(self, raw) -> "UnfoldedModel":
        raw = np.asarray(raw, dtype=float)
        if raw.size != 4 * self.n_stages:
            raise ValueError(f"expected {4 * self.n_stages} raw values, got {raw.size}")
        stages = tuple(StageParams.from_raw(raw[4 * i : 4 * i + 4]) for i in range(self.n_stages))
        return replace(self, stages=stages)


@dataclass(frozen=True)
class StageRecord:
    stage: int
    loss: float
    primal_residual: float
    recon_error: float
    mu: float


def init_from_admm(k_stages: int, k_atoms: int = 15, cfg: AdmmConfig | None = None) -> UnfoldedModel:
    """Stage scalars matching the classical solver's schedule.

    Stage k receives the ridge and sparse weights unchanged, the coupling
    weight the geometric schedule would hold at sweep k, and the
    singular-value threshold ``lambda2 / mu_k``. The coupling weight follows
    the same capped recurrence as the solver so the two match bit for bit.
    """
    if k_stages < 1:
        raise ValueError(f"k_stages must be at least 1, got {k_stages}")
    cfg = cfg if cfg is not None else AdmmConfig()
    stages = []
    mu = cfg.mu
    for _ in range(k_stages):
        stages.append(
            StageParams(lambda1=cfg.lambda1, mu=mu, lambda3=cfg.lambda3, theta=cfg.lambda2 / mu)
        )
        mu = min(cfg.rho * mu, cfg.mu_max)
    return UnfoldedModel(stages=tuple(stages), k_atoms=k_atoms)


_SUBNET_NAMES = (
    "dictionary update",
    "coefficient update",
    "sparse update",
    "auxiliary update",
    "multiplier update",
)


def forward(model: UnfoldedModel, x, init) -> tuple[LrrState, tuple]:
    """Run all stages from a (d0, l0) start with J and d at zero.

    With stage normalization off and parameters from
    :func:`init_from_admm`, stage k's state equals the classical solver's
    sweep-k state (same arithmetic).
    """
    x = np.asarray(getattr(x, "values", x), dtype=float)
    d0, l0 = init
    state = LrrState.initial(d0, l0, n_bands=x.shape[0], mu=model.stages[0].mu)
    n_pixels = x.shape[1]
    trace = []
    for k, stage in enumerate(model.stages):
        state = replace(state, mu=stage.mu)
        stage_cfg = AdmmConfig(
            lambda1=stage.lambda1, lambda2=stage.theta * stage.mu, lambda3=stage.lambda3
        )
        state = admm.update_d(x, state, stage_cfg)
        _check(state.d_atoms, k, _SUBNET_NAMES[0])
        if model.normalize_each_stage:
            state = admm.normalize_atoms(state)
        state = admm.update_l(x, state, stage_cfg)
        _check(state.l_coef, k, _SUBNET_NAMES[1])
        state = admm.update_s(x, state, stage_cfg)
        _check(state.s_anom, k, _SUBNET_NAMES[2])
        state = replace(state, j_aux=svt(state.l_coef + state.d_mult, stage.theta))
        _check(state.j_aux, k, _SUBNET_NAMES[3])
        state = replace(state, d_mult=state.d_mult + (state.l_coef - state.j_aux))
        _check(state.d_mult, k, _SUBNET_NAMES[4])

        recon = admm.reconstruction(state)
        trace.append(
            StageRecord(
                stage=k,
                loss=float(np.sum((x - recon) ** 2) / n_pixels),
                primal_residual=float(np.linalg.norm(state.l_coef - state.j_aux)),
                recon_error=float(np.linalg.norm(x - recon)),
                mu=stage.mu,
            )
        )
    return state, tuple(trace)


def _check(arr, stage, subnet) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalAbort(stage, subnet, stage_kind="stage")


def loss(x, x_hat) -> float:
    """Mean squared spectrum error: ``sum_i ||x_i - xhat_i||^2 / n_pixels``."""
    x = np.asarray(getattr(x, "values", x), dtype=float)
    x_hat = np.asarray(getattr(x_hat, "values", x_hat), dtype=float)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    return float(np.sum((x - x_hat) ** 2) / x.shape[1])


def train(
    model: UnfoldedModel, x, init, budget: int, seed: int = 0
) -> tuple[UnfoldedModel, list]:
    """Coordinate-wise finite-difference descent on the log parameters.

    Visits the 4K log-scalars in a seed-shuffled order; each visit estimates
    the loss slope by central differences, then backtracks a signed step on
    that coordinate until the loss strictly improves. ``budget`` caps the
    total number of loss evaluations. Returns the best model found and the
    history of accepted losses (leading entry is the starting loss).
    """
    x = np.asarray(getattr(x, "values", x), dtype=float)
    n_params = 4 * model.n_stages
    if budget < n_params:
        raise ValueError(f"budget {budget} is below the parameter count {n_params}")

    evals = 0

    def evaluate(raw) -> float:
        nonlocal evals
        evals += 1
        state, _ = forward(model.with_raw_params(raw), x, init)
        return loss(x, admm.reconstruction(state))

    raw = model.raw_params()
    best = evaluate(raw)
    history = [best]
    rng = np.random.default_rng(seed)
    steps = np.full(n_params, 0.5)
    fd_step = 1e-4
    step_min, step_max = 1e-3, 2.0

    while evals + 3 <= budget:
        improved = False
        for i in rng.permutation(n_params):
            if evals + 3 > budget:
                break
            probe = np.zeros(n_params)
            probe[i] = fd_step
            slope = (evaluate(raw + probe) - evaluate(raw - probe)) / (2 * fd_step)
            if not np.isfinite(slope) or slope == 0:
                continue
            direction = -np.sign(slope)
            # at most a few backtracks per visit so one stubborn coordinate
            # cannot starve the rest of the sweep; step sizes persist across
            # sweeps, so rejected coordinates resume from the reduced step
            for _ in range(4):
                if steps[i] < step_min or evals >= budget:
                    break
                candidate = raw.copy()
                candidate[i] += direction * steps[i]
                trial = evaluate(candidate)
                if trial < best:
                    raw, best = candidate, trial
                    history.append(best)
                    steps[i] = min(steps[i] * 2, step_max)
                    improved = True
                    break
                steps[i] /= 2
        if not improved and (steps < step_min).all():
            break
    return model.with_raw_params(raw), history


def save_checkpoint(model: UnfoldedModel, path) -> None:
    """Checkpoint JSON: ``{k_atoms, K, stages: [{lambda1, mu, lambda3, theta}]}``."""
    doc = {
        "k_atoms": model.k_atoms,
        "K": model.n_stages,
        "stages": [
            {"lambda1": s.lambda1, "mu": s.mu, "lambda3": s.lambda3, "theta": s.theta}
            for s in model.stages
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_checkpoint(path, normalize_each_stage: bool = False) -> UnfoldedModel:
    with open(path) as fh:
        doc = json.load(fh)
    stages = tuple(
        StageParams(
            lambda1=s["lambda1"], mu=s["mu"], lambda3=s["lambda3"], theta=s["theta"]
        )
        for s in doc["stages"]
    )
    if len(stages) != doc["K"]:
        raise ValueError(f"checkpoint K={doc['K']} does not match {len(stages)} stages")
    return UnfoldedModel(
        stages=stages, k_atoms=int(doc["k_atoms"]), normalize_each_stage=normalize_each_stage
    )


def write_loss_history_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for i, value in enumerate(history):
            writer.writerow([i, repr(float(value))])
