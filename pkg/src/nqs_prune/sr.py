"""Stochastic reconfiguration (natural-gradient) updates.

Solves (S + lambda I) delta = dE/dtheta over the unmasked coordinates,
with S the quantum Fisher matrix
    S_kl = <O_k O_l> - <O_k><O_l>,   O_k = d log psi / d theta_k,
and updates theta <- theta - eta * delta.  Dense Cholesky is used up to
`dense_threshold` unmasked parameters, a matrix-free preconditioned
conjugate gradient beyond that.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .ansatz import MaskedAnsatz
from .hamiltonian import Hamiltonian, local_energies
from .observables import energy_stats
from .rngs import derive_seed
from .sampler import SamplerConfig, sample_batch

SOLVERS = ("dense_cholesky", "conjugate_gradient")


@dataclass(frozen=True)
class SRConfig:
    eta: float = 8e-3
    diag_shift: float = 1e-4  # the regularization lambda in S + lambda I
    solver: str = "dense_cholesky"
    cg_tol: float = 1e-6
    cg_max_iter: int = 1000
    dense_threshold: int = 4096

    def __post_init__(self):
        if not (np.isfinite(self.eta) and self.eta >= 0):
            raise ValueError(f"eta must be finite and >= 0, got {self.eta}")
        if not (np.isfinite(self.diag_shift) and self.diag_shift > 0):
            raise ValueError(f"diag_shift must be finite and positive, got {self.diag_shift}")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")


class CGConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"conjugate gradient did not converge: residual {residual:.3e} after {iterations} iterations")
        self.residual = residual
        self.iterations = iterations


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, snapshot: MaskedAnsatz, energies: np.ndarray):
        super().__init__(f"non-finite energy at step {step}")
        self.step = step
        self.snapshot = snapshot  # last finite state
        self.energies = energies


class EstimatorSet:
    """Log-derivative matrix O (N_s x n_unmasked) and local energies.

    Optional weights turn the sample means into exact expectation values
    (used with full-enumeration estimator sets); they must sum to 1.
    """

    def __init__(self, log_derivs: np.ndarray, e_loc: np.ndarray, weights: np.ndarray | None = None):
        log_derivs = np.asarray(log_derivs, dtype=np.float64)
        e_loc = np.asarray(e_loc, dtype=np.float64)
        if log_derivs.ndim != 2 or e_loc.shape != (log_derivs.shape[0],):
            raise ValueError("log_derivs must be (N_s, n) with matching e_loc")
        self.log_derivs = log_derivs
        self.e_loc = e_loc
        if weights is None:
            self.weights = None
            self.o_mean = log_derivs.mean(axis=0)
            self.e_mean = float(e_loc.mean())
        else:
            weights = np.asarray(weights, dtype=np.float64)
            if weights.shape != e_loc.shape or abs(weights.sum() - 1.0) > 1e-9:
                raise ValueError("weights must match e_loc and sum to 1")
            self.weights = weights
            self.o_mean = weights @ log_derivs
            self.e_mean = float(weights @ e_loc)

    @property
    def n_samples(self) -> int:
        return self.log_derivs.shape[0]

    @property
    def n_params(self) -> int:
        return self.log_derivs.shape[1]

    def centered(self) -> np.ndarray:
        """Rows (O - <O>) scaled so that S = A^T A."""
        a = self.log_derivs - self.o_mean
        if self.weights is None:
            return a / np.sqrt(self.n_samples)
        return a * np.sqrt(self.weights)[:, None]


def estimate_gradient(est: EstimatorSet) -> np.ndarray:
    """dE/dtheta_k = 2 (<O_k E_loc> - <O_k><E_loc>), via centered E_loc."""
    resid = est.e_loc - est.e_mean
    if est.weights is None:
        return 2.0 / est.n_samples * (est.log_derivs.T @ resid)
    return 2.0 * (est.log_derivs.T @ (est.weights * resid))


def s_matvec(est: EstimatorSet, v: np.ndarray) -> np.ndarray:
    """S @ v without materializing S."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (est.n_params,):
        raise ValueError(f"v must have shape ({est.n_params},)")
    ov = est.log_derivs @ v
    if est.weights is None:
        return est.log_derivs.T @ ov / est.n_samples - est.o_mean * (est.o_mean @ v)
    return est.log_derivs.T @ (est.weights * ov) - est.o_mean * (est.o_mean @ v)


def s_diagonal(est: EstimatorSet) -> np.ndarray:
    sq = est.log_derivs**2
    mean_sq = sq.mean(axis=0) if est.weights is None else est.weights @ sq
    return mean_sq - est.o_mean**2


def _solve_dense(est: EstimatorSet, grad: np.ndarray, shift: float) -> np.ndarray:
    """Cholesky solve of (S + lambda I) delta = grad, retrying with 10x shifts.

    With S = A^T A the solve is done in whichever space is smaller: the
    parameter space directly, or (when n_params > n_samples) the sample
    space via (A^T A + lam)^-1 g = (g - A^T (A A^T + lam)^-1 A g)/lam,
    which is the same exact solution at a fraction of the cost.
    """
    a = est.centered()
    dual = a.shape[1] > a.shape[0]
    s = a @ a.T if dual else a.T @ a
    idx = np.diag_indices_from(s)
    applied = 0.0
    for attempt in range(8):
        lam = shift * 10.0**attempt
        s[idx] += lam - applied
        applied = lam
        try:
            factor = scipy.linalg.cho_factor(s, lower=True, check_finite=False)
            if dual:
                u = scipy.linalg.cho_solve(factor, a @ grad, check_finite=False)
                delta = (grad - a.T @ u) / lam
            else:
                delta = scipy.linalg.cho_solve(factor, grad, check_finite=False)
        except scipy.linalg.LinAlgError:
            warnings.warn(f"Cholesky failed at diagonal shift {lam:.1e}; retrying with 10x", RuntimeWarning, stacklevel=3)
            continue
        if np.all(np.isfinite(delta)):
            return delta
        warnings.warn(f"non-finite SR solution at diagonal shift {lam:.1e}; retrying with 10x", RuntimeWarning, stacklevel=3)
    raise scipy.linalg.LinAlgError("Cholesky failed after repeated diagonal-shift increases")


def _solve_cg(est: EstimatorSet, grad: np.ndarray, cfg: SRConfig) -> np.ndarray:
    """Preconditioned CG on (S + lambda I) x = grad, M = diag(S) + lambda."""
    shift = cfg.diag_shift
    precond = 1.0 / (s_diagonal(est) + shift)
    x = np.zeros_like(grad)
    r = grad.copy()
    z = precond * r
    p = z.copy()
    rz = r @ z
    b_norm = float(np.linalg.norm(grad))
    if b_norm == 0.0:
        return x
    for it in range(cfg.cg_max_iter):
        if np.linalg.norm(r) <= cfg.cg_tol * b_norm:
            return x
        ap = s_matvec(est, p) + shift * p
        alpha = rz / (p @ ap)
        x += alpha * p
        r -= alpha * ap
        z = precond * r
        rz_next = r @ z
        p = z + (rz_next / rz) * p
        rz = rz_next
    residual = float(np.linalg.norm(r))
    if residual <= cfg.cg_tol * b_norm:
        return x
    raise CGConvergenceError(residual, cfg.cg_max_iter)


def solve_sr_system(est: EstimatorSet, grad: np.ndarray, cfg: SRConfig) -> np.ndarray:
    if cfg.solver == "dense_cholesky" and est.n_params <= cfg.dense_threshold:
        return _solve_dense(est, grad, cfg.diag_shift)
    return _solve_cg(est, grad, cfg)


def sr_update(ansatz: MaskedAnsatz, est: EstimatorSet, cfg: SRConfig) -> MaskedAnsatz:
    """theta <- theta - eta * (S + lambda I)^{-1} grad on unmasked coordinates."""
    if est.n_params != ansatz.ones:
        raise ValueError("estimator set does not match the ansatz mask")
    grad = estimate_gradient(est)
    delta = solve_sr_system(est, grad, cfg)
    ansatz.theta[ansatz.unmasked] -= cfg.eta * delta
    return ansatz


@dataclass
class TrainResult:
    energies: np.ndarray
    variances: np.ndarray
    acceptance: np.ndarray
    ansatz: MaskedAnsatz


def train(
    ansatz: MaskedAnsatz,
    ham: Hamiltonian,
    sampler_cfg: SamplerConfig,
    sr_cfg: SRConfig,
    n_steps: int,
    seed: int | None = None,
    step_offset: int = 0,
    on_step=None,
) -> TrainResult:
    """SR optimization loop: sample -> local energies -> derivatives -> update.

    Each step draws a fresh batch from the stream (seed, "step", global
    step index), so trajectories are reproducible and resumable from any
    step boundary.  Raises TrainingDiverged (carrying the last finite
    state) if the sampled energy goes non-finite.
    """
    base_seed = sampler_cfg.seed if seed is None else seed
    energies = np.empty(n_steps)
    variances = np.empty(n_steps)
    acceptance = np.empty(n_steps)
    prev_theta = ansatz.theta.copy()
    for t in range(n_steps):
        step_seed = derive_seed(base_seed, "step", step_offset + t)
        batch = sample_batch(ansatz, replace(sampler_cfg, seed=step_seed))
        e_loc = local_energies(ham, ansatz, batch.configs, batch.log_psis)
        energy, var, _ = energy_stats(e_loc)
        if not (np.isfinite(energy) and np.isfinite(var)):
            snapshot = MaskedAnsatz(ansatz.arch, prev_theta, ansatz.mask)
            raise TrainingDiverged(step_offset + t, snapshot, energies[:t].copy())
        energies[t] = energy
        variances[t] = var
        acceptance[t] = batch.acceptance_rate
        prev_theta = ansatz.theta.copy()
        est = EstimatorSet(ansatz.log_derivatives_batch(batch.configs), e_loc)
        sr_update(ansatz, est, sr_cfg)
        if on_step is not None:
            on_step(step_offset + t, energy, var)
    return TrainResult(energies, variances, acceptance, ansatz)
