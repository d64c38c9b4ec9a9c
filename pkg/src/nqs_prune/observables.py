"""Physics diagnostics: energy statistics, errors, magnetizations and the
Monte Carlo fidelity between two sampled states."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .ansatz import MaskedAnsatz
from .hamiltonian import safe_exp
from .sampler import SampleBatch


def energy_stats(e_loc: np.ndarray) -> tuple[float, float, float]:
    """(mean, unbiased sample variance, statistical error sqrt(var/N_s))."""
    e_loc = np.asarray(e_loc, dtype=np.float64)
    if e_loc.size < 2:
        raise ValueError("need at least two local-energy samples")
    mean = float(e_loc.mean())
    var = float(e_loc.var(ddof=1))
    return mean, var, float(np.sqrt(var / e_loc.size))


def relative_error(energy: float, e_ref: float) -> float:
    """|(E_ref - E)/E_ref|."""
    if e_ref == 0.0:
        raise ValueError("relative error undefined for E_ref = 0")
    return abs((e_ref - energy) / e_ref)


def absolute_error_per_spin(energy: float, e_ref: float, n_spins: int) -> float:
    return abs(e_ref - energy) / n_spins


def magnetization_z(batch: SampleBatch) -> float:
    """Sampled M_z = <sum_i sigma_i>/N."""
    return float(batch.configs.astype(np.float64).mean())


def magnetization_x(ansatz: MaskedAnsatz, batch: SampleBatch) -> float:
    """Sampled M_x = <sum_i psi(sigma^(i))/psi(sigma)>/N (single-site flips)."""
    n = ansatz.n_sites
    sets = np.arange(n, dtype=np.int64).reshape(n, 1)
    ratios = ansatz.flip_log_ratios(batch.configs, sets, log_psis=batch.log_psis)
    return float(safe_exp(ratios).mean())


def fidelity_estimate(
    ansatz_a: MaskedAnsatz,
    ansatz_b: MaskedAnsatz,
    batch_a: SampleBatch,
    batch_b: SampleBatch,
) -> tuple[float, float]:
    """Raw two-population fidelity estimate and its standard error.

    F^2 = E_a[psi_b/psi_a] * E_b[psi_a/psi_b]; each mean is computed with
    the batch-max log-ratio factored out for overflow safety.
    """
    ra = ansatz_b.log_psi_batch(batch_a.configs) - batch_a.log_psis
    rb = ansatz_a.log_psi_batch(batch_b.configs) - batch_b.log_psis

    def log_mean_and_relvar(r: np.ndarray) -> tuple[float, float]:
        m = r.max()
        vals = np.exp(r - m)
        mean = vals.mean()
        relvar = float(vals.var(ddof=1) / (mean * mean * r.size)) if r.size > 1 else 0.0
        return float(m + np.log(mean)), relvar

    la, va = log_mean_and_relvar(ra)
    lb, vb = log_mean_and_relvar(rb)
    f_sq = np.exp(la + lb)
    f = float(np.sqrt(max(f_sq, 0.0)))
    se = 0.5 * f * float(np.sqrt(va + vb))
    return f, se


def fidelity(ansatz_a, ansatz_b, batch_a, batch_b) -> float:
    """Fidelity estimate clamped to [0, 1 + 3 se] and capped at 1."""
    f, se = fidelity_estimate(ansatz_a, ansatz_b, batch_a, batch_b)
    return min(min(f, 1.0 + 3.0 * se), 1.0)


@dataclass
class MetricsRecord:
    """Per-iteration observables written to the results log."""

    iteration: int
    n: int  # remaining parameters
    rho: float  # parameters per spin
    energy: float
    variance: float
    stat_err: float
    rel_err: float | None = None
    abs_err_per_spin: float | None = None
    m_x: float | None = None
    m_z: float | None = None
    fidelity: float | None = None

    def __post_init__(self):
        if self.variance < -1e-12:
            raise ValueError("variance must be non-negative")

    def to_row(self) -> dict:
        d = asdict(self)
        d["E"] = d.pop("energy")
        d["var"] = d.pop("variance")
        return d

    @classmethod
    def from_row(cls, row: dict) -> "MetricsRecord":
        d = dict(row)
        d["energy"] = d.pop("E")
        d["variance"] = d.pop("var")
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})
