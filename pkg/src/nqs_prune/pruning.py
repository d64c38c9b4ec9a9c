"""Iterative pruning (IMP-WR, IMP-CT, IRP-WR) and lottery-ticket training.

One pruning run: pre-train a dense network for j steps, store the
rewind point theta_wr, then repeat I times: remove a fraction p_r of the
surviving weights (smallest magnitude, or uniformly at random), rewind
the survivors to theta_wr or keep training them in place, train k steps,
record metrics.  Tickets re-train a stored mask in isolation from
either the original initialization, a fresh random one, or with a
density-matched random mask.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .ansatz import ArchitectureSpec, MaskedAnsatz, init_parameters
from .hamiltonian import Hamiltonian
from .observables import (
    MetricsRecord,
    absolute_error_per_spin,
    fidelity,
    magnetization_x,
    magnetization_z,
    relative_error,
)
from .rngs import derive_seed, substream
from .sampler import SampleBatch, SamplerConfig, sample_batch
from .sr import SRConfig, TrainingDiverged, TrainResult, train

STRATEGIES = ("magnitude", "random")
RESETS = ("rewind", "continue")
METRIC_TAIL_STEPS = 100


@dataclass(frozen=True)
class PruneSchedule:
    n_iterations: int
    p_r: float = 0.12
    pre_steps: int = 10_000
    steps_per_iteration: int = 1_000
    strategy: str = "magnitude"
    reset: str = "rewind"

    def __post_init__(self):
        if not 0.0 < self.p_r < 1.0:
            raise ValueError(f"p_r must lie in (0, 1), got {self.p_r}")
        if self.n_iterations < 1 or self.pre_steps < 0 or self.steps_per_iteration < 1:
            raise ValueError("invalid schedule sizes")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.reset not in RESETS:
            raise ValueError(f"reset must be one of {RESETS}")


def prune_count(p_r: float, ones: int) -> int:
    """Round-half-up with a floor of one weight per iteration."""
    return max(1, int(np.floor(p_r * ones + 0.5)))


def select_prune_set(theta: np.ndarray, mask: np.ndarray, p_r: float, strategy: str, rng: np.random.Generator) -> np.ndarray | None:
    """Indices to prune, or None when the schedule is exhausted.

    Magnitude strategy takes the smallest |theta| among unmasked entries,
    ties broken by lowest index; random picks uniformly without
    replacement.  Refuses (returns None) if pruning would empty the mask.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}")
    unmasked = np.flatnonzero(mask)
    if unmasked.size < 2:
        return None
    count = prune_count(p_r, unmasked.size)
    if unmasked.size - count < 1:
        return None
    if strategy == "magnitude":
        order = np.argsort(np.abs(theta[unmasked]), kind="stable")
        return unmasked[order[:count]]
    return np.sort(rng.choice(unmasked, size=count, replace=False))


@dataclass
class IterationRecord:
    iteration: int
    mask: np.ndarray
    theta: np.ndarray  # final parameters of the iteration (masked entries 0)
    metrics: MetricsRecord


@dataclass
class PruningTrajectory:
    arch: ArchitectureSpec
    schedule: PruneSchedule
    seed: int
    theta_init: np.ndarray
    theta_wr: np.ndarray
    pretrain_energies: np.ndarray
    records: list[IterationRecord]
    exhausted: bool = False
    diverged: str | None = None

    def record_for(self, iteration: int) -> IterationRecord:
        for rec in self.records:
            if rec.iteration == iteration:
                return rec
        raise KeyError(f"iteration {iteration} not in trajectory (1..{len(self.records)})")

    def iteration_for_density(self, rho: float) -> IterationRecord:
        """Record whose parameters-per-spin is closest to rho."""
        if not self.records:
            raise ValueError("empty trajectory")
        return min(self.records, key=lambda r: abs(r.metrics.rho - rho))


def rewound_parameters(theta_wr: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Rewind: unmasked entries reset to theta_wr, masked entries exact 0."""
    return np.where(mask, theta_wr, 0.0)


def _observe(ansatz: MaskedAnsatz, sampler_cfg: SamplerConfig, seed: int, iteration: int) -> SampleBatch:
    return sample_batch(ansatz, replace(sampler_cfg, seed=derive_seed(seed, "obs", iteration)))


def _iteration_metrics(
    ansatz: MaskedAnsatz,
    result: TrainResult,
    obs: SampleBatch,
    iteration: int,
    sampler_cfg: SamplerConfig,
    e_ref: float | None,
    prev: tuple[MaskedAnsatz, SampleBatch] | None,
) -> MetricsRecord:
    tail = min(METRIC_TAIL_STEPS, result.energies.size)
    energy = float(result.energies[-tail:].mean())
    var = float(result.variances[-tail:].mean())
    rec = MetricsRecord(
        iteration=iteration,
        n=ansatz.ones,
        rho=ansatz.ones / ansatz.n_sites,
        energy=energy,
        variance=var,
        stat_err=float(np.sqrt(max(var, 0.0) / sampler_cfg.n_samples)),
        m_z=magnetization_z(obs),
        m_x=magnetization_x(ansatz, obs),
    )
    if e_ref is not None:
        rec.rel_err = relative_error(energy, e_ref)
        rec.abs_err_per_spin = absolute_error_per_spin(energy, e_ref, ansatz.n_sites)
    if prev is not None:
        prev_ansatz, prev_batch = prev
        rec.fidelity = fidelity(prev_ansatz, ansatz, prev_batch, obs)
    return rec


def run_iterative_pruning(
    arch: ArchitectureSpec,
    ham: Hamiltonian,
    schedule: PruneSchedule,
    sampler_cfg: SamplerConfig,
    sr_cfg: SRConfig,
    seed: int,
    e_ref: float | None = None,
    on_pretrained=None,
    on_iteration=None,
    resume_from: "TrajectoryState | None" = None,
) -> PruningTrajectory:
    """Run the iterative pruning loop; see the module docstring.

    All randomness is derived from `seed` per phase, so pre-training
    history never leaks into iteration training, and a run resumed from
    `resume_from` (a completed-iteration state) continues bit-for-bit.
    Divergence truncates the trajectory, keeping completed iterations.
    """
    if resume_from is None:
        theta_init = init_parameters(arch, seed=seed)
        ansatz = MaskedAnsatz(arch, theta_init.copy())
        pre = train(ansatz, ham, sampler_cfg, sr_cfg, schedule.pre_steps, seed=derive_seed(seed, "pretrain"))
        theta_wr = ansatz.theta.copy()
        pretrain_energies = pre.energies
        start_iteration = 1
        prev = (ansatz.copy(), _observe(ansatz, sampler_cfg, seed, 0))
        if on_pretrained is not None:
            on_pretrained(ansatz, theta_init, theta_wr)
    else:
        theta_init = resume_from.theta_init
        theta_wr = resume_from.theta_wr
        ansatz = resume_from.ansatz
        pretrain_energies = np.empty(0)
        start_iteration = resume_from.iteration + 1
        prev = (ansatz.copy(), _observe(ansatz, sampler_cfg, seed, resume_from.iteration))

    traj = PruningTrajectory(
        arch=arch,
        schedule=schedule,
        seed=seed,
        theta_init=theta_init,
        theta_wr=theta_wr,
        pretrain_energies=pretrain_energies,
        records=[],
    )
    for i in range(start_iteration, schedule.n_iterations + 1):
        sel = select_prune_set(ansatz.theta, ansatz.mask, schedule.p_r, schedule.strategy, substream(seed, "prune", i))
        if sel is None:
            traj.exhausted = True
            break
        ansatz = ansatz.apply_prune(sel)
        if schedule.reset == "rewind":
            ansatz.theta[:] = rewound_parameters(theta_wr, ansatz.mask)
        try:
            result = train(ansatz, ham, sampler_cfg, sr_cfg, schedule.steps_per_iteration, seed=derive_seed(seed, "iter", i))
        except TrainingDiverged as exc:
            traj.diverged = f"iteration {i}: {exc}"
            break
        obs = _observe(ansatz, sampler_cfg, seed, i)
        metrics = _iteration_metrics(ansatz, result, obs, i, sampler_cfg, e_ref, prev)
        record = IterationRecord(iteration=i, mask=ansatz.mask.copy(), theta=ansatz.theta.copy(), metrics=metrics)
        traj.records.append(record)
        if on_iteration is not None:
            on_iteration(record, ansatz)
        prev = (ansatz.copy(), obs)
    return traj


@dataclass
class TrajectoryState:
    """Completed-iteration state needed to resume a pruning run."""

    iteration: int
    ansatz: MaskedAnsatz
    theta_init: np.ndarray
    theta_wr: np.ndarray


TICKET_VARIANTS = ("theta_init_m_imp", "theta_rand_m_imp", "theta_init_m_rand")


def make_ticket(variant: str, trajectory, iteration: int, seed: int = 0, use_rewind_init: bool = False) -> MaskedAnsatz:
    """Sparse network for isolated training, from a stored trajectory.

    theta_init_m_imp pairs the stored initialization with the pruned
    mask; theta_rand_m_imp draws a fresh initialization for the same
    mask; theta_init_m_rand keeps the initialization but scrambles the
    mask to a uniformly random one of equal density.  `use_rewind_init`
    substitutes the rewind point theta_wr for the initialization.
    """
    if variant not in TICKET_VARIANTS:
        raise ValueError(f"variant must be one of {TICKET_VARIANTS}")
    arch = trajectory.arch
    mask_imp = trajectory.record_for(iteration).mask
    theta_base = trajectory.theta_wr if use_rewind_init else trajectory.theta_init
    if variant == "theta_init_m_imp":
        return MaskedAnsatz(arch, theta_base.copy(), mask_imp)
    if variant == "theta_rand_m_imp":
        return MaskedAnsatz(arch, init_parameters(arch, seed=seed), mask_imp)
    ones = int(mask_imp.sum())
    mask_rand = np.zeros(arch.n_init, dtype=bool)
    mask_rand[substream(seed, "ticket-mask").choice(arch.n_init, size=ones, replace=False)] = True
    return MaskedAnsatz(arch, theta_base.copy(), mask_rand)


def train_ticket(
    ticket: MaskedAnsatz,
    ham: Hamiltonian,
    sampler_cfg: SamplerConfig,
    sr_cfg: SRConfig,
    n_steps: int,
    seed: int,
    e_ref: float | None = None,
    iteration: int = 0,
) -> tuple[MetricsRecord, TrainResult]:
    """Train a ticket in isolation; the mask is fixed throughout."""
    mask_before = ticket.mask.copy()
    result = train(ticket, ham, sampler_cfg, sr_cfg, n_steps, seed=seed)
    assert np.array_equal(ticket.mask, mask_before), "mask changed during isolated training"
    obs = _observe(ticket, sampler_cfg, seed, iteration)
    metrics = _iteration_metrics(ticket, result, obs, iteration, sampler_cfg, e_ref, prev=None)
    return metrics, result
