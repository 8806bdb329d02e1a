"""The CPD solver family built on fiber-sampled gradients.

One stochastic iteration updates a single factor matrix from a fiber sample:

* brascpd  - proximal gradient step with diminishing step alpha / k^beta_exp,
             gradient scaled by 1/|F|.
* adacpd   - proximal gradient step with an elementwise accumulated-squared-
             gradient (Adagrad) step matrix.
* spg      - proximal gradient step with the locally optimal constant step
             1/L_bar derived from the sampled Gram matrix (no momentum).
* ascpd    - spg plus a Nesterov momentum step with beta from (L_bar, mu_bar);
             the update is taken at the extrapolated point Y and the sampled
             objective is regularized by lambda/2 * ||A - A_k||^2 so the
             condition number L_bar/mu_bar stays below the target.

`als_sweep` is the full-batch block-coordinate baseline: each mode solves its
matrix least-squares subproblem exactly (unconstrained) or by an inner
accelerated projected-gradient loop (constrained).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .constraints import Constraint
from .sampling import FiberSample
from .tensor import (
    DenseTensor,
    KruskalModel,
    gather_fiber_rows,
    kr_rows,
    mttkrp,
)

logger = logging.getLogger(__name__)

SOLVERS = ("ascpd", "spg", "brascpd", "adacpd", "als")


# ---------------------------------------------------------------------------
# step schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Diminishing:
    """alpha_k = alpha / k^beta_exp, gradient scaled by 1/|F|."""

    alpha: float = 0.1
    beta_exp: float = 1e-6

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")

    def step(self, k: int) -> float:
        if k < 1:
            raise ValueError("diminishing step defined for k >= 1")
        return self.alpha / k ** self.beta_exp


@dataclass(frozen=True)
class Adagrad:
    """Elementwise step eta / (b + sum of squared gradients)^(1/2 + eps)."""

    eta: float = 1.0
    b: float = 1e-6
    eps: float = 1e-6

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.b < 0 or self.eps < 0:
            raise ValueError("b and eps must be >= 0")


@dataclass(frozen=True)
class LocallyOptimal:
    """Constant step 1/L_bar with the condition-number cap enforced by the lambda rule."""

    cond_target: float = 100.0

    def __post_init__(self):
        if self.cond_target <= 1:
            raise ValueError("cond_target must exceed 1")


Schedule = Diminishing | Adagrad | LocallyOptimal

_SCHEDULE_FOR = {"brascpd": Diminishing, "adacpd": Adagrad,
                 "ascpd": LocallyOptimal, "spg": LocallyOptimal}


def default_schedule(solver: str) -> Schedule | None:
    kind = _SCHEDULE_FOR.get(solver)
    return kind() if kind is not None else None


# ---------------------------------------------------------------------------
# state and curvature
# ---------------------------------------------------------------------------

@dataclass
class SolverState:
    """Mutable per-trial state; owned by exactly one run."""

    model: KruskalModel
    extrapolation: KruskalModel | None = None   # Y factors, ascpd only
    iteration: int = 0
    adagrad_accumulator: list[np.ndarray] | None = None
    work_units: int = 0                         # tensor entries touched so far


def init_state(rng: np.random.Generator, dims, rank: int, solver: str) -> SolverState:
    """Factors i.i.d. uniform [0,1); Y starts equal to A; accumulators start at zero."""
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}; choose from {SOLVERS}")
    model = KruskalModel([rng.random((int(d), rank)) for d in dims])
    state = SolverState(model=model)
    if solver == "ascpd":
        state.extrapolation = model.copy()
    if solver == "adacpd":
        state.adagrad_accumulator = [np.zeros((int(d), rank)) for d in dims]
    return state


@dataclass(frozen=True)
class CurvatureEstimate:
    """Extreme eigenvalues of the sampled Gram matrix and the derived step quantities."""

    gram: np.ndarray
    L: float
    mu: float
    lam: float

    @property
    def L_bar(self) -> float:
        return self.L + self.lam

    @property
    def mu_bar(self) -> float:
        return self.mu + self.lam

    @property
    def beta(self) -> float:
        sl = math.sqrt(self.L_bar)
        sm = math.sqrt(self.mu_bar)
        return (sl - sm) / (sl + sm)


def eigen_extremes(gram: np.ndarray) -> tuple[float, float]:
    """(largest, smallest) eigenvalue of a symmetric PSD matrix; smallest clamped at 0."""
    gram = np.asarray(gram, dtype=np.float64)
    if not np.isfinite(gram).all():
        raise ValueError("Gram matrix has non-finite entries")
    w = np.linalg.eigvalsh(gram)
    return float(w[-1]), float(max(w[0], 0.0))


def lambda_rule(L: float, mu: float, cond_target: float) -> float:
    """Regularizer keeping (L+lam)/(mu+lam) <= cond_target + 1."""
    if cond_target <= 1:
        raise ValueError("cond_target must exceed 1")
    if mu > 0 and L / mu < cond_target:
        return float(mu)
    return float(L / cond_target)


def estimate_curvature(gram: np.ndarray, cond_target: float) -> CurvatureEstimate | None:
    """Curvature of a sampled subproblem, or None when the sample is degenerate (L == 0)."""
    L, mu = eigen_extremes(gram)
    if L <= 0.0:
        return None
    return CurvatureEstimate(gram=gram, L=L, mu=mu, lam=lambda_rule(L, mu, cond_target))


# ---------------------------------------------------------------------------
# sampled objective / gradient
# ---------------------------------------------------------------------------

def sampled_objective(t: DenseTensor, model: KruskalModel, sample: FiberSample,
                      at: np.ndarray) -> float:
    """0.5 * ||X_F - K_F @ at.T||_F^2 over the sampled fibers.

    The 1/2 makes the gradient exactly `at @ (K_F.T K_F) - X_F.T K_F`, i.e.
    the sampled Gram matrix is the Hessian of this function.
    """
    x_rows = gather_fiber_rows(t, sample.mode, sample.indices)
    k_rows = kr_rows(model, sample.mode, sample.indices)
    resid = x_rows - k_rows @ np.asarray(at, dtype=np.float64).T
    return 0.5 * float(np.vdot(resid, resid))


def sampled_gradient(t: DenseTensor, model: KruskalModel, sample: FiberSample,
                     at: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the sampled objective at `at`, plus the Gram matrix K_F.T K_F.

    grad = at @ (K_F.T K_F) - X_F.T K_F with K_F = kr_rows(model, mode, F).
    The Gram matrix is returned for reuse as the curvature estimate.  Touches
    |F| * I_mode tensor entries.
    """
    at = np.asarray(at, dtype=np.float64)
    i = sample.mode
    if at.shape != (t.dims[i], model.rank):
        raise ValueError(f"expected shape {(t.dims[i], model.rank)}, got {at.shape}")
    k_f = kr_rows(model, i, sample.indices)
    gram = k_f.T @ k_f
    x_f = gather_fiber_rows(t, i, sample.indices)
    grad = at @ gram - x_f.T @ k_f
    return grad, gram


def full_gradient(t: DenseTensor, model: KruskalModel, mode: int,
                  at: np.ndarray | None = None) -> np.ndarray:
    """Gradient of the halved full objective w.r.t. factor `mode`: A K^T K - X^(mode)T K."""
    if at is None:
        at = model.factors[mode]
    gram = hadamard_gram(model, skip=mode)
    return np.asarray(at, dtype=np.float64) @ gram - mttkrp(t, model, mode)


def hadamard_gram(model: KruskalModel, skip: int) -> np.ndarray:
    """K^T K for the full Khatri-Rao product, as the Hadamard product of factor Grams."""
    out = np.ones((model.rank, model.rank))
    for n, f in enumerate(model.factors):
        if n != skip:
            out *= f.T @ f
    return out


# ---------------------------------------------------------------------------
# stochastic iterations (each touches exactly one mode)
# ---------------------------------------------------------------------------

def _charge(state: SolverState, t: DenseTensor, sample: FiberSample) -> None:
    state.work_units += sample.size * t.dims[sample.mode]
    state.iteration += 1


def ascpd_iteration(state: SolverState, t: DenseTensor, sample: FiberSample,
                    constraints: list[Constraint], cond_target: float) -> CurvatureEstimate | None:
    """Accelerated update: prox step at the extrapolation Y, then a momentum step.

    grad_F = grad_f(Y) + lam * (Y - A); A_next = prox(Y - grad_F / L_bar);
    Y_next = A_next + beta * (A_next - A).  Returns the curvature estimate
    (None for a degenerate sample, which leaves the factors untouched).
    """
    i = sample.mode
    a_old = state.model.factors[i]
    y_old = state.extrapolation.factors[i]
    grad, gram = sampled_gradient(t, state.model, sample, y_old)
    _charge(state, t, sample)
    est = estimate_curvature(gram, cond_target)
    if est is None:
        logger.warning("iteration %d: all-zero sampled rows on mode %d; skipping update",
                       state.iteration, i)
        return None
    grad_reg = grad + est.lam * (y_old - a_old)
    a_new = constraints[i].prox(y_old - grad_reg / est.L_bar)
    state.extrapolation.factors[i] = a_new + est.beta * (a_new - a_old)
    state.model.factors[i] = a_new
    return est


def spg_iteration(state: SolverState, t: DenseTensor, sample: FiberSample,
                  constraints: list[Constraint], cond_target: float) -> CurvatureEstimate | None:
    """The ascpd update without extrapolation or momentum: prox(A - grad / L_bar)."""
    i = sample.mode
    a_old = state.model.factors[i]
    grad, gram = sampled_gradient(t, state.model, sample, a_old)
    _charge(state, t, sample)
    est = estimate_curvature(gram, cond_target)
    if est is None:
        logger.warning("iteration %d: all-zero sampled rows on mode %d; skipping update",
                       state.iteration, i)
        return None
    state.model.factors[i] = constraints[i].prox(a_old - grad / est.L_bar)
    return est


def brascpd_iteration(state: SolverState, t: DenseTensor, sample: FiberSample,
                      constraints: list[Constraint], schedule: Diminishing) -> None:
    """Proximal gradient step A - (alpha_k / |F|) * grad with diminishing alpha_k."""
    i = sample.mode
    a_old = state.model.factors[i]
    grad, _ = sampled_gradient(t, state.model, sample, a_old)
    _charge(state, t, sample)
    alpha_k = schedule.step(state.iteration)
    state.model.factors[i] = constraints[i].prox(a_old - (alpha_k / sample.size) * grad)


def adacpd_iteration(state: SolverState, t: DenseTensor, sample: FiberSample,
                     constraints: list[Constraint], schedule: Adagrad) -> None:
    """Adagrad step: accumulate squared gradients, scale elementwise, prox."""
    i = sample.mode
    a_old = state.model.factors[i]
    grad, _ = sampled_gradient(t, state.model, sample, a_old)
    _charge(state, t, sample)
    acc = state.adagrad_accumulator[i]
    acc += grad * grad
    denom = (schedule.b + acc) ** (0.5 + schedule.eps)
    delta = np.divide(schedule.eta * grad, denom,
                      out=np.zeros_like(grad), where=denom > 0)
    state.model.factors[i] = constraints[i].prox(a_old - delta)


# ---------------------------------------------------------------------------
# full-batch baseline
# ---------------------------------------------------------------------------

def _solve_normal_equations(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve A @ gram = rhs for A, adding a tiny ridge if the Gram is singular."""
    try:
        sol = np.linalg.solve(gram, rhs.T).T
        if np.isfinite(sol).all():
            return sol
    except np.linalg.LinAlgError:
        pass
    r = gram.shape[0]
    ridge = 1e-12 * np.trace(gram) / r
    if ridge <= 0:
        ridge = 1e-12
    try:
        return np.linalg.solve(gram + ridge * np.eye(r), rhs.T).T
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("Gram matrix singular beyond ridge repair") from exc


def _prox_block_solve(a0: np.ndarray, gram: np.ndarray, rhs: np.ndarray,
                      constraint: Constraint, max_inner: int = 50,
                      rel_tol: float = 1e-8) -> np.ndarray:
    """Constrained block subproblem via accelerated projected gradient.

    Minimizes 0.5||X - K A^T||^2 s.t. the constraint, using step 1/L and
    momentum beta from the Gram's extreme eigenvalues, until the relative
    factor change drops below rel_tol or max_inner iterations.
    """
    L, mu = eigen_extremes(gram)
    if L <= 0.0:
        return a0
    beta = (math.sqrt(L) - math.sqrt(mu)) / (math.sqrt(L) + math.sqrt(mu))
    a_prev = a0
    y = a0
    for _ in range(max_inner):
        grad = y @ gram - rhs
        a_new = constraint.prox(y - grad / L)
        change = np.linalg.norm(a_new - a_prev)
        scale = max(np.linalg.norm(a_prev), 1e-30)
        y = a_new + beta * (a_new - a_prev)
        a_prev = a_new
        if change <= rel_tol * scale:
            break
    return a_prev


def als_sweep(state: SolverState, t: DenseTensor, constraints: list[Constraint]) -> None:
    """One pass over all modes, each solving its least-squares block in place.

    Updated factors are used immediately by the later modes of the same sweep.
    The sweep is charged four full-MTTKRP equivalents of work (one
    full-iteration unit).
    """
    model = state.model
    for i in range(t.order):
        gram = hadamard_gram(model, skip=i)
        rhs = mttkrp(t, model, i)
        if constraints[i].kind == "none":
            model.factors[i] = _solve_normal_equations(gram, rhs)
        else:
            model.factors[i] = _prox_block_solve(model.factors[i], gram, rhs, constraints[i])
    state.iteration += 1
    state.work_units += 4 * math.prod(t.dims)


# ---------------------------------------------------------------------------
# run-level configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolverConfig:
    """Everything one trial needs besides the data tensor."""

    solver: str
    rank: int
    constraint: str = "none"
    blocksizes: int | tuple[int, ...] = 1
    schedule: Schedule | None = None
    seed: int = 0
    max_full_iters: int = 100
    tol: float | None = None

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; choose from {SOLVERS}")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.max_full_iters < 0:
            raise ValueError("max_full_iters must be >= 0")
        if self.tol is not None and self.tol <= 0:
            raise ValueError("tol must be positive when given")
        expected = _SCHEDULE_FOR.get(self.solver)
        if self.schedule is not None and expected is not None \
                and not isinstance(self.schedule, expected):
            raise ValueError(f"solver {self.solver} takes a {expected.__name__} schedule, "
                             f"got {type(self.schedule).__name__}")

    def resolved_schedule(self) -> Schedule | None:
        return self.schedule if self.schedule is not None else default_schedule(self.solver)

    def blocks_for(self, order: int) -> tuple[int, ...]:
        if isinstance(self.blocksizes, int):
            return (self.blocksizes,) * order
        blocks = tuple(int(b) for b in self.blocksizes)
        if len(blocks) == 1:
            return blocks * order
        if len(blocks) != order:
            raise ValueError(f"need {order} blocksizes, got {len(blocks)}")
        return blocks
