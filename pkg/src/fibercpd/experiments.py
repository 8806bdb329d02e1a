"""Synthetic data generation, the reconstruction-error metric, work-equivalent
full-iteration accounting, the single-trial run loop, and Monte-Carlo trials.

Work accounting: every solver charges the tensor entries its (partial) MTTKRPs
touch.  One full iteration is 4 * prod(dims) entries (the batch baseline's
per-sweep cost, counting its acceleration bookkeeping), so stochastic and
batch solvers are compared after the same amount of arithmetic.  A checkpoint
(metric evaluation) fires each time the running entry count crosses a multiple
of that unit.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .constraints import Constraint, per_mode
from .sampling import RNG_ALGORITHM, FiberSampler
from .solvers import (
    Adagrad,
    Diminishing,
    LocallyOptimal,
    SolverConfig,
    adacpd_iteration,
    als_sweep,
    ascpd_iteration,
    brascpd_iteration,
    init_state,
    spg_iteration,
)
from .tensor import DenseTensor, KruskalModel, frob_norm, reconstruct, relative_error, row_count

FULL_ITERATION_MTTKRPS = 4


@dataclass(frozen=True)
class SyntheticSpec:
    """Random low-rank tensor plus optional Gaussian noise at a target SNR (dB)."""

    dims: tuple[int, ...]
    rank: int
    snr_db: float | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if any(d < 1 for d in self.dims):
            raise ValueError("dims must be positive")


def generate_synthetic(spec: SyntheticSpec) -> tuple[DenseTensor, KruskalModel, float]:
    """(noisy tensor, ground-truth factors, noise scale sigma).

    Factors are i.i.d. uniform [0,1).  Noise is i.i.d. standard normal, scaled
    so the realized signal-to-noise ratio ||clean||^2 / (sigma^2 ||noise||^2)
    hits 10^(snr_db/10) exactly for this realization.
    """
    rng = np.random.default_rng(spec.seed)
    truth = KruskalModel([rng.random((d, spec.rank)) for d in spec.dims])
    clean = reconstruct(truth)
    if spec.snr_db is None:
        return clean, truth, 0.0
    noise = rng.standard_normal(clean.values.size)
    sigma = frob_norm(clean) / (math.sqrt(10.0 ** (spec.snr_db / 10.0)) * np.linalg.norm(noise))
    noisy = DenseTensor(spec.dims, clean.values + sigma * noise)
    return noisy, truth, float(sigma)


def metric(t: DenseTensor, model: KruskalModel) -> float:
    """Relative reconstruction error ||t - reconstruct(model)||_F / ||t||_F."""
    return relative_error(t, model)


def full_iteration_cost(dims) -> int:
    return FULL_ITERATION_MTTKRPS * math.prod(int(d) for d in dims)


def stochastic_iters_per_full(dims, blocksizes) -> int:
    """Stochastic iterations whose average touched entries equal one full iteration."""
    dims = tuple(int(d) for d in dims)
    if isinstance(blocksizes, int):
        blocksizes = (blocksizes,) * len(dims)
    per_iter = [min(int(b), row_count(dims, n)) * dims[n]
                for n, b in enumerate(blocksizes)]
    mean_entries = sum(per_iter) / len(per_iter)
    return max(1, round(full_iteration_cost(dims) / mean_entries))


@dataclass
class WorkAccountant:
    """Tracks touched entries and reports crossings of full-iteration multiples."""

    full_iteration_cost: int
    entries_touched: int = 0
    _last_index: int = 0

    def update(self, total_entries: int) -> int | None:
        """Record the new total; return the full-iteration index if one was crossed."""
        self.entries_touched = total_entries
        index = total_entries // self.full_iteration_cost
        if index > self._last_index:
            self._last_index = index
            return index
        return None


@dataclass(frozen=True)
class Checkpoint:
    full_iter: int
    work_units: int
    m: float
    wall_seconds: float


@dataclass
class RunRecord:
    """Metric trace of one trial (or the average of several)."""

    solver: str
    seed: int
    trial: int | None
    config: dict
    checkpoints: list[Checkpoint]

    @property
    def final_metric(self) -> float:
        return self.checkpoints[-1].m

    def metrics(self) -> np.ndarray:
        return np.array([c.m for c in self.checkpoints])


def _config_echo(cfg: SolverConfig, dims, extra: dict | None = None) -> dict:
    echo = {
        "solver": cfg.solver,
        "dims": ",".join(str(d) for d in dims),
        "rank": cfg.rank,
        "constraint": cfg.constraint,
        "block": ",".join(str(b) for b in cfg.blocks_for(len(dims))),
    }
    schedule = cfg.resolved_schedule()
    if isinstance(schedule, LocallyOptimal):
        echo["cond"] = schedule.cond_target
    elif isinstance(schedule, Diminishing):
        echo["alpha"] = schedule.alpha
        echo["beta_exp"] = schedule.beta_exp
    elif isinstance(schedule, Adagrad):
        echo["eta"] = schedule.eta
        echo["b"] = schedule.b
        echo["eps"] = schedule.eps
    echo.update({
        "seed": cfg.seed,
        "max_full_iters": cfg.max_full_iters,
        "tol": "" if cfg.tol is None else cfg.tol,
        "rng": RNG_ALGORITHM,
    })
    if extra:
        echo.update(extra)
    return echo


def run(t: DenseTensor, cfg: SolverConfig, trial: int = 0,
        echo_extra: dict | None = None) -> RunRecord:
    """Run one solver trial to its full-iteration budget (or tolerance).

    Deterministic given cfg.seed: the solver stream is spawned from the seed
    with a distinct spawn key so it never coincides with a data-generation
    stream built from the same integer.
    """
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1,)))
    state = init_state(rng, t.dims, cfg.rank, cfg.solver)
    constraints = per_mode(Constraint(cfg.constraint), t.order)
    accountant = WorkAccountant(full_iteration_cost(t.dims))
    start = time.perf_counter()
    m0 = metric(t, state.model)
    checkpoints = [Checkpoint(0, 0, m0, 0.0)]
    record = RunRecord(solver=cfg.solver, seed=cfg.seed, trial=trial,
                       config=_config_echo(cfg, t.dims, echo_extra),
                       checkpoints=checkpoints)
    if cfg.max_full_iters == 0 or (cfg.tol is not None and m0 <= cfg.tol):
        return record

    if cfg.solver == "als":
        for sweep in range(1, cfg.max_full_iters + 1):
            als_sweep(state, t, constraints)
            m = metric(t, state.model)
            checkpoints.append(Checkpoint(sweep, state.work_units, m,
                                          time.perf_counter() - start))
            if cfg.tol is not None and m <= cfg.tol:
                break
        return record

    sampler = FiberSampler(t.dims, cfg.blocks_for(t.order), rng=rng)
    schedule = cfg.resolved_schedule()
    while True:
        sample = sampler.draw()
        if cfg.solver == "ascpd":
            ascpd_iteration(state, t, sample, constraints, schedule.cond_target)
        elif cfg.solver == "spg":
            spg_iteration(state, t, sample, constraints, schedule.cond_target)
        elif cfg.solver == "brascpd":
            brascpd_iteration(state, t, sample, constraints, schedule)
        else:
            adacpd_iteration(state, t, sample, constraints, schedule)
        index = accountant.update(state.work_units)
        if index is None:
            continue
        m = metric(t, state.model)
        checkpoints.append(Checkpoint(index, state.work_units, m,
                                      time.perf_counter() - start))
        if index >= cfg.max_full_iters or (cfg.tol is not None and m <= cfg.tol):
            return record


def run_trials(data, cfg: SolverConfig, trials: int = 10,
               echo_extra: dict | None = None) -> tuple[RunRecord, list[RunRecord]]:
    """Monte-Carlo trials: trial k is seeded cfg.seed + k.

    `data` is either a fixed DenseTensor (reused by every trial) or a
    SyntheticSpec (a fresh tensor is generated per trial with the trial seed).
    Returns (averaged record, per-trial records).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    extra = dict(echo_extra or {})
    extra["trials"] = trials
    records = []
    for k in range(trials):
        seed_k = cfg.seed + k
        if isinstance(data, SyntheticSpec):
            tensor, _, _ = generate_synthetic(replace(data, seed=seed_k))
        else:
            tensor = data
        try:
            records.append(run(tensor, replace(cfg, seed=seed_k), trial=k, echo_extra=extra))
        except Exception as exc:
            raise RuntimeError(f"trial {k} (seed {seed_k}) failed: {exc}") from exc
    return average_records(records), records


def _permutation_free_mean(values: list[float]) -> float:
    # summing in sorted order makes the mean independent of trial order, bit for bit
    return float(np.mean(np.sort(np.asarray(values))))


def average_records(records: list[RunRecord]) -> RunRecord:
    """Per-checkpoint mean across trials, aligned on the full-iteration index."""
    if not records:
        raise ValueError("nothing to average")
    by_index: dict[int, list[Checkpoint]] = {}
    for rec in records:
        for cp in rec.checkpoints:
            by_index.setdefault(cp.full_iter, []).append(cp)
    checkpoints = [
        Checkpoint(idx,
                   round(_permutation_free_mean([c.work_units for c in cps])),
                   _permutation_free_mean([c.m for c in cps]),
                   _permutation_free_mean([c.wall_seconds for c in cps]))
        for idx, cps in sorted(by_index.items())
    ]
    return RunRecord(solver=records[0].solver, seed=records[0].seed, trial=None,
                     config=dict(records[0].config), checkpoints=checkpoints)
