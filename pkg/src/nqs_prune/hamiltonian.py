"""Hamiltonians and local-energy evaluation.

Two models:

* TransverseFieldIsing on a SquareLattice:
      H = - sum_<ij> sz_i sz_j - kappa * sum_i sx_i
* ToricCode on a ToricLattice:
      H = - sum_v A_v - sum_p B_p,
  with B_p the product of sz over a plaquette (diagonal) and A_v the
  product of sx over a vertex star (flips the star's four edges).

All amplitude ratios are taken in log space, exp(dlogpsi), guarded
against overflow above DELTA_CLAMP.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .lattice import SquareLattice, ToricLattice, bonds, check_spins, plaquettes, vertex_stars

DELTA_CLAMP = 700.0  # exp overflow guard for log-amplitude differences


@dataclass(frozen=True)
class TransverseFieldIsing:
    lattice: SquareLattice
    kappa: float

    def __post_init__(self):
        if not np.isfinite(self.kappa) or self.kappa < 0:
            raise ValueError(f"kappa must be finite and non-negative, got {self.kappa}")

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites


@dataclass(frozen=True)
class ToricCode:
    lattice: ToricLattice

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites


Hamiltonian = TransverseFieldIsing | ToricCode


@dataclass(frozen=True)
class ConnectedElement:
    """Off-diagonal term: flipping `flips` on sigma gives amplitude H_{sigma,sigma'}."""

    flips: tuple
    amplitude: float


@lru_cache(maxsize=None)
def flip_table(ham: Hamiltonian) -> tuple[np.ndarray, np.ndarray]:
    """(flip_sets, amplitudes) of all off-diagonal terms.

    flip_sets is (n_terms, k) with k = 1 for the TFIM (single-site sx) and
    k = 4 for the toric code (vertex stars); amplitudes is (n_terms,).
    """
    if isinstance(ham, TransverseFieldIsing):
        n = ham.n_sites
        sets = np.arange(n, dtype=np.int64).reshape(n, 1)
        amps = np.full(n, -ham.kappa)
    else:
        sets = np.asarray(vertex_stars(ham.lattice))
        amps = np.full(sets.shape[0], -1.0)
    sets.setflags(write=False)
    amps.setflags(write=False)
    return sets, amps


def connected_elements(ham: Hamiltonian, sigma: np.ndarray) -> list[ConnectedElement]:
    """Off-diagonal matrix elements reachable from sigma (sigma-independent here)."""
    check_spins(sigma, ham.n_sites)
    sets, amps = flip_table(ham)
    return [ConnectedElement(tuple(int(i) for i in s), float(a)) for s, a in zip(sets, amps)]


def diagonal_energy_batch(ham: Hamiltonian, configs: np.ndarray) -> np.ndarray:
    """<sigma|H|sigma> for each row of configs."""
    configs = np.asarray(configs)
    s = configs.astype(np.float64, copy=False)
    if isinstance(ham, TransverseFieldIsing):
        b = bonds(ham.lattice)
        return -np.sum(s[..., b[:, 0]] * s[..., b[:, 1]], axis=-1)
    quads = plaquettes(ham.lattice)
    prod = s[..., quads[:, 0]] * s[..., quads[:, 1]] * s[..., quads[:, 2]] * s[..., quads[:, 3]]
    return -np.sum(prod, axis=-1)


def diagonal_energy(ham: Hamiltonian, sigma: np.ndarray) -> float:
    sigma = check_spins(sigma, ham.n_sites)
    return float(diagonal_energy_batch(ham, sigma[None, :])[0])


def safe_exp(delta: np.ndarray) -> np.ndarray:
    """exp(delta) with clamping above DELTA_CLAMP (warns once per call)."""
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta > DELTA_CLAMP):
        warnings.warn(
            f"log-amplitude ratio above {DELTA_CLAMP}; clamping to avoid overflow",
            RuntimeWarning,
            stacklevel=2,
        )
        delta = np.minimum(delta, DELTA_CLAMP)
    return np.exp(delta)


def local_energies(ham: Hamiltonian, ansatz, configs: np.ndarray, log_psis: np.ndarray | None = None) -> np.ndarray:
    """E_loc(sigma) = <sigma|H|Psi>/<sigma|Psi> for each row of configs."""
    configs = np.asarray(configs)
    if log_psis is None:
        log_psis = ansatz.log_psi_batch(configs)
    if not np.all(np.isfinite(log_psis)):
        bad = int(np.flatnonzero(~np.isfinite(log_psis))[0])
        raise FloatingPointError(f"non-finite log-amplitude for configuration {configs[bad].tolist()}")
    sets, amps = flip_table(ham)
    ratios = ansatz.flip_log_ratios(configs, sets, log_psis=log_psis)  # (B, n_terms)
    return diagonal_energy_batch(ham, configs) + safe_exp(ratios) @ amps


def local_energy(ham: Hamiltonian, ansatz, sigma: np.ndarray) -> float:
    sigma = check_spins(sigma, ham.n_sites)
    return float(local_energies(ham, ansatz, sigma[None, :])[0])
