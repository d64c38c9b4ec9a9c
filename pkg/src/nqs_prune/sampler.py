"""Metropolis-Hastings sampling of |psi|^2.

Proposal rules: "single_flip" flips one uniformly chosen spin;
"mixed_plaquette" (toric lattices only) flips, with equal probability,
either one spin or the four edges of a uniformly chosen dual plaquette
(the star of a lattice vertex, which preserves every B_p product).
Both rules are symmetric, so acceptance is min(1, exp(2 dlogpsi)).

Each chain owns a Philox stream keyed by (seed, chain index); batches
are therefore bit-identical for fixed (seed, n_chains) however chains
are executed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .ansatz import FeedForward, MaskedAnsatz
from .lattice import ToricLattice, all_up, check_spins, flip, random_config, vertex_stars
from .rngs import substream

RULES = ("single_flip", "mixed_plaquette")
REFRESH_EVERY = 1000  # accepted moves between from-scratch cache rebuilds


class StuckChainWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    n_samples: int = 1024
    n_chains: int = 16
    burn_in_sweeps: int = 10
    sweep_length: int | None = None  # proposals per recorded sample; default N
    rule: str = "single_flip"
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1 or self.n_chains < 1 or self.burn_in_sweeps < 0:
            raise ValueError("invalid sampler sizes")
        if self.n_samples % self.n_chains:
            raise ValueError(f"n_samples={self.n_samples} not divisible by n_chains={self.n_chains}")
        if self.rule not in RULES:
            raise ValueError(f"rule must be one of {RULES}")


@dataclass
class SampleBatch:
    configs: np.ndarray  # (n_samples, N) int8
    log_psis: np.ndarray  # (n_samples,)
    acceptance_rate: float
    stuck: bool = False


@dataclass
class ChainState:
    sigma: np.ndarray
    log_psi: float
    rng: np.random.Generator
    accepted_since_refresh: int = 0


def _check_rule(rule: str, lattice) -> None:
    if rule == "mixed_plaquette" and not isinstance(lattice, ToricLattice):
        raise ValueError("mixed_plaquette rule requires a toric lattice")


def propose(rule: str, sigma: np.ndarray, rng: np.random.Generator, lattice) -> np.ndarray:
    """Symmetric proposal: indices to flip."""
    _check_rule(rule, lattice)
    if rule == "mixed_plaquette" and rng.random() >= 0.5:
        stars = vertex_stars(lattice)
        return np.asarray(stars[rng.integers(0, stars.shape[0])])
    return np.array([rng.integers(0, lattice.n_sites)], dtype=np.int64)


def metropolis_step(ansatz: MaskedAnsatz, chain: ChainState, rule: str) -> ChainState:
    """One proposal; accept with min(1, exp(2 dlogpsi)). Mutates the chain."""
    lattice = ansatz.arch.lattice
    flips = propose(rule, chain.sigma, chain.rng, lattice)
    delta = ansatz.log_psi_delta(chain.sigma, flips)
    if delta >= 0.0 or chain.rng.random() < np.exp(2.0 * delta):
        chain.sigma = flip(chain.sigma, flips)
        chain.log_psi += delta
        chain.accepted_since_refresh += 1
        if chain.accepted_since_refresh >= REFRESH_EVERY:
            chain.log_psi = ansatz.log_psi(chain.sigma)
            chain.accepted_since_refresh = 0
    return chain


def initial_config(lattice, rng: np.random.Generator) -> np.ndarray:
    """TFIM chains start uniformly random; toric chains start all-up
    (a plaquette-satisfying configuration in the target sector)."""
    if isinstance(lattice, ToricLattice):
        return all_up(lattice.n_sites)
    return random_config(lattice.n_sites, rng)


def _predraw(cfg: SamplerConfig, chain_index: int, lattice, n_prop: int, n_cells: int):
    rng = substream(cfg.seed, chain_index)
    sigma0 = initial_config(lattice, rng)
    sites = rng.integers(0, lattice.n_sites, size=n_prop)
    u_acc = rng.random(n_prop)
    if cfg.rule == "mixed_plaquette":
        use_cell = rng.random(n_prop) >= 0.5
        cell_pick = rng.integers(0, n_cells, size=n_prop)
    else:
        use_cell = np.zeros(n_prop, dtype=bool)
        cell_pick = np.zeros(n_prop, dtype=np.int64)
    return sigma0, sites, u_acc, use_cell, cell_pick


def sample_batch(ansatz: MaskedAnsatz, cfg: SamplerConfig) -> SampleBatch:
    """Sample n_samples configurations from |psi|^2.

    Every chain burns in burn_in_sweeps*N proposals from its initial
    configuration, then records one sample every sweep_length proposals;
    the batch concatenates chains in chain order.
    """
    lattice = ansatz.arch.lattice
    _check_rule(cfg.rule, lattice)
    n = lattice.n_sites
    sweep = cfg.sweep_length if cfg.sweep_length is not None else n
    per_chain = cfg.n_samples // cfg.n_chains
    n_burn = cfg.burn_in_sweeps * n
    n_prop = n_burn + per_chain * sweep
    cells = np.asarray(vertex_stars(lattice)) if isinstance(lattice, ToricLattice) else np.zeros((1, 4), dtype=np.int64)

    configs = np.empty((cfg.n_chains, per_chain, n), dtype=np.int8)
    accepts = 0
    if isinstance(ansatz.arch, FeedForward):
        from ._kernels import run_ffnn_chain

        wt = np.ascontiguousarray(ansatz._weights().T)
        for c in range(cfg.n_chains):
            sigma0, sites, u_acc, use_cell, cell_pick = _predraw(cfg, c, lattice, n_prop, cells.shape[0])
            accepts += run_ffnn_chain(sigma0, wt, sites, u_acc, use_cell, cell_pick, cells, n_burn, sweep, REFRESH_EVERY, configs[c])
    else:
        for c in range(cfg.n_chains):
            accepts += _run_generic_chain(ansatz, cfg, c, lattice, n_prop, n_burn, sweep, cells, configs[c])

    flat = configs.reshape(cfg.n_samples, n)
    rate = accepts / (cfg.n_chains * n_prop)
    stuck = accepts == 0
    if stuck:
        warnings.warn("no accepted moves in an entire batch; chains look stuck", StuckChainWarning, stacklevel=2)
    return SampleBatch(configs=flat, log_psis=ansatz.log_psi_batch(flat), acceptance_rate=rate, stuck=stuck)


def _run_generic_chain(ansatz, cfg, chain_index, lattice, n_prop, n_burn, sweep, cells, out) -> int:
    """Reference chain loop for non-FFNN architectures (same pre-drawn streams)."""
    sigma0, sites, u_acc, use_cell, cell_pick = _predraw(cfg, chain_index, lattice, n_prop, cells.shape[0])
    sigma = sigma0.copy()
    logpsi = ansatz.log_psi(sigma)
    n_acc = 0
    rec = 0
    for t in range(n_prop):
        flips = cells[cell_pick[t]] if use_cell[t] else sites[t : t + 1]
        lp2 = logpsi + ansatz.log_psi_delta(sigma, flips)
        if lp2 >= logpsi or u_acc[t] < np.exp(2.0 * (lp2 - logpsi)):
            sigma = flip(sigma, flips)
            logpsi = lp2
            n_acc += 1
        if t >= n_burn and (t - n_burn + 1) % sweep == 0:
            out[rec] = sigma
            rec += 1
    return n_acc


def magnetization_of_batch(batch: SampleBatch) -> float:
    """Mean per-site z magnetization of the batch (diagnostic helper)."""
    return float(batch.configs.mean())
