"""Masked neural-network wavefunctions.

Two architectures, both bias-free, both real and positive (the network
output is log psi):

* FeedForward: one hidden ReLU layer of width alpha*N,
      log psi(sigma) = sum_i relu((W sigma)_i),
  parameter layout row-major by hidden unit, theta[i*N + j] = W[i, j].
* ShallowConv: n_f kernels of side k_d correlated with the 2D spin grid
  using VALID padding, GELU activation,
      log psi(sigma) = sum over kernels and output positions of gelu(h),
  parameter layout kernel-major, each kernel row-major over
  (channel, row, col).  Square lattices feed one channel; toric lattices
  feed two channels (horizontal and vertical edge sublattices).

Masked parameters are stored as exact zeros in theta and are never
updated; derivative vectors contain only unmasked coordinates, in mask
(index) order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import ndtr

from .lattice import SquareLattice, ToricLattice, check_spins
from .rngs import substream

SQRT_2PI = float(np.sqrt(2.0 * np.pi))


@dataclass(frozen=True)
class FeedForward:
    """Single hidden ReLU layer, width alpha * n_sites, no biases."""

    lattice: SquareLattice | ToricLattice
    alpha: float

    def __post_init__(self):
        w = self.alpha * self.lattice.n_sites
        if self.alpha <= 0 or abs(w - round(w)) > 1e-9 or round(w) < 1:
            raise ValueError(f"alpha*N must be a positive integer, got alpha={self.alpha}, N={self.lattice.n_sites}")

    @property
    def width(self) -> int:
        return int(round(self.alpha * self.lattice.n_sites))

    @property
    def n_init(self) -> int:
        return self.width * self.lattice.n_sites

    @property
    def default_init_scheme(self) -> str:
        return "normal"


@dataclass(frozen=True)
class ShallowConv:
    """Single convolutional layer, n_f kernels of side k_d, GELU, VALID padding."""

    lattice: SquareLattice | ToricLattice
    n_f: int
    k_d: int = 3

    def __post_init__(self):
        if self.n_f < 1 or self.k_d < 1:
            raise ValueError("n_f and k_d must be positive")
        if self.lattice.L < self.k_d:
            raise ValueError(f"VALID padding needs L >= k_d, got L={self.lattice.L}, k_d={self.k_d}")

    @property
    def channels(self) -> int:
        return 2 if isinstance(self.lattice, ToricLattice) else 1

    @property
    def out_side(self) -> int:
        return self.lattice.L - self.k_d + 1

    @property
    def n_init(self) -> int:
        return self.n_f * self.channels * self.k_d**2

    @property
    def default_init_scheme(self) -> str:
        return "lecun-truncated"


ArchitectureSpec = FeedForward | ShallowConv

INIT_SCHEMES = ("normal", "lecun-truncated")


def _truncated_normal(rng: np.random.Generator, size: int) -> np.ndarray:
    """Standard normal truncated to [-2, 2], via inverse CDF."""
    from scipy.special import ndtri

    lo, hi = ndtr(-2.0), ndtr(2.0)
    return ndtri(lo + (hi - lo) * rng.random(size))


def init_parameters(arch: ArchitectureSpec, scheme: str | None = None, seed: int = 0) -> np.ndarray:
    """Flat initial parameter vector; deterministic for a fixed seed.

    "normal" draws N(0, 0.1^2); "lecun-truncated" draws the fan-in-scaled
    truncated normal (LeCun normal, truncation-corrected so the output
    standard deviation is exactly sqrt(1/fan_in)).
    """
    scheme = scheme or arch.default_init_scheme
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = substream(seed, "init")
    if scheme == "normal":
        return rng.normal(0.0, 0.1, size=arch.n_init)
    if isinstance(arch, ShallowConv):
        fan_in = arch.channels * arch.k_d**2
    else:
        fan_in = arch.lattice.n_sites
    # 0.8796... is the stddev of a standard normal truncated to [-2, 2]
    return _truncated_normal(rng, arch.n_init) * np.sqrt(1.0 / fan_in) / 0.87962566103423978


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact Gaussian-CDF GELU."""
    return x * ndtr(x)


def gelu_prime(x: np.ndarray) -> np.ndarray:
    return ndtr(x) + x * np.exp(-0.5 * x * x) / SQRT_2PI


def full_mask(arch: ArchitectureSpec) -> np.ndarray:
    return np.ones(arch.n_init, dtype=bool)


class MaskedAnsatz:
    """Architecture + flat parameters theta + binary mask.

    The effective weights are theta with masked entries held at exact
    zero.  theta may be updated in place between sampling epochs (single
    writer); the mask is immutable, pruning returns a new instance.
    """

    def __init__(self, arch: ArchitectureSpec, theta: np.ndarray, mask: np.ndarray | None = None):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (arch.n_init,):
            raise ValueError(f"theta must have shape ({arch.n_init},), got {theta.shape}")
        if mask is None:
            mask = full_mask(arch)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != theta.shape:
            raise ValueError("mask and theta shapes differ")
        if not mask.any():
            raise ValueError("mask must keep at least one parameter")
        self.arch = arch
        self.theta = np.where(mask, theta, 0.0)
        self.mask = mask.copy()
        self.mask.setflags(write=False)
        self.unmasked = np.flatnonzero(self.mask)
        self.unmasked.setflags(write=False)

    @property
    def ones(self) -> int:
        return int(self.unmasked.size)

    @property
    def n_init(self) -> int:
        return self.arch.n_init

    @property
    def n_sites(self) -> int:
        return self.arch.lattice.n_sites

    def copy(self) -> "MaskedAnsatz":
        return MaskedAnsatz(self.arch, self.theta.copy(), self.mask)

    # -- evaluation ---------------------------------------------------------

    def _weights(self) -> np.ndarray:
        if isinstance(self.arch, FeedForward):
            return self.theta.reshape(self.arch.width, self.n_sites)
        a = self.arch
        return self.theta.reshape(a.n_f, a.channels, a.k_d, a.k_d)

    def _grids(self, configs: np.ndarray) -> np.ndarray:
        """(B, C, L, L) float input planes for the convolutional net."""
        lat = self.arch.lattice
        L = lat.L
        x = np.asarray(configs, dtype=np.float64)
        if isinstance(lat, ToricLattice):
            return x.reshape(-1, 2, L, L)
        return x.reshape(-1, 1, L, L)

    def _preactivations(self, configs: np.ndarray) -> np.ndarray:
        """FFNN: (B, width) hidden pre-activations. CNN: (B, n_f, Lo, Lo)."""
        x = np.asarray(configs, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if isinstance(self.arch, FeedForward):
            return x @ self._weights().T
        windows = sliding_window_view(self._grids(x), (self.arch.k_d, self.arch.k_d), axis=(2, 3))
        return np.einsum("bcxykl,fckl->bfxy", windows, self._weights())

    def log_psi_batch(self, configs: np.ndarray) -> np.ndarray:
        h = self._preactivations(configs)
        if isinstance(self.arch, FeedForward):
            return np.maximum(h, 0.0).sum(axis=1)
        return gelu(h).reshape(h.shape[0], -1).sum(axis=1)

    def log_psi(self, sigma: np.ndarray) -> float:
        sigma = check_spins(sigma, self.n_sites)
        val = float(self.log_psi_batch(sigma[None, :])[0])
        if not np.isfinite(val):
            raise FloatingPointError(f"non-finite log-amplitude for {sigma.tolist()}")
        return val

    def flip_log_ratios(self, configs: np.ndarray, flip_sets: np.ndarray, log_psis: np.ndarray | None = None) -> np.ndarray:
        """log psi(flip(sigma, s)) - log psi(sigma) for every config x flip set.

        flip_sets is (n_sets, k); returns (B, n_sets).  The FFNN path
        updates pre-activations incrementally instead of re-evaluating.
        """
        x = np.asarray(configs, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        flip_sets = np.asarray(flip_sets, dtype=np.int64)
        if log_psis is None:
            log_psis = self.log_psi_batch(x)
        out = np.empty((x.shape[0], flip_sets.shape[0]))
        if isinstance(self.arch, FeedForward):
            from ._kernels import ffnn_flip_logpsi

            w = self._weights()
            wt = np.ascontiguousarray(w.T)
            ffnn_flip_logpsi(x @ w.T, x, wt, flip_sets, out)
        else:
            for i, s in enumerate(flip_sets):
                xf = x.copy()
                xf[:, s] *= -1.0
                out[:, i] = self.log_psi_batch(xf)
        return out - log_psis[:, None]

    def log_psi_delta(self, sigma: np.ndarray, flips) -> float:
        """log psi(flip(sigma, flips)) - log psi(sigma)."""
        sigma = check_spins(sigma, self.n_sites)
        idx = np.asarray(flips, dtype=np.int64).ravel()
        if idx.size == 0:
            return 0.0
        if idx.min() < 0 or idx.max() >= self.n_sites:
            raise ValueError(f"flip indices out of range [0, {self.n_sites})")
        return float(self.flip_log_ratios(sigma[None, :], idx[None, :])[0, 0])

    def log_derivatives_batch(self, configs: np.ndarray) -> np.ndarray:
        """(B, ones) d log psi / d theta_k over unmasked k, in mask order.

        ReLU subgradient at exactly 0 is taken as 0.
        """
        x = np.asarray(configs, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        h = self._preactivations(x)
        if isinstance(self.arch, FeedForward):
            from ._kernels import relu_masked_outer

            rows, cols = np.divmod(self.unmasked, np.int64(self.n_sites))
            out = np.empty((x.shape[0], self.unmasked.size))
            relu_masked_outer(h, x, rows, cols, out)
            return out
        a = self.arch
        windows = sliding_window_view(self._grids(x), (a.k_d, a.k_d), axis=(2, 3))
        grad = np.einsum("bfxy,bcxykl->bfckl", gelu_prime(h), windows)
        return grad.reshape(x.shape[0], -1)[:, self.unmasked]

    def log_derivatives(self, sigma: np.ndarray) -> np.ndarray:
        sigma = check_spins(sigma, self.n_sites)
        return self.log_derivatives_batch(sigma[None, :])[0]

    # -- pruning ------------------------------------------------------------

    def apply_prune(self, indices) -> "MaskedAnsatz":
        """New ansatz with the given (currently unmasked) indices masked off."""
        idx = np.asarray(indices, dtype=np.int64).ravel()
        if idx.size == 0:
            return MaskedAnsatz(self.arch, self.theta.copy(), self.mask)
        if np.unique(idx).size != idx.size:
            raise ValueError("duplicate prune indices")
        if not self.mask[idx].all():
            raise ValueError("pruning an already-masked index")
        mask = self.mask.copy()
        mask[idx] = False
        return MaskedAnsatz(self.arch, self.theta, mask)
