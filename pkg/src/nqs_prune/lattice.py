"""Lattice geometry and spin-configuration manipulation.

Site indexing conventions (fixed; mask and weight layouts depend on them):

* SquareLattice: N = L*L sites, row-major, site = row*L + col.
* ToricLattice: N = 2*L*L spins on the edges of an L x L periodic square
  lattice.  Horizontal edges come first: h(r, c) = r*L + c is the edge east
  of vertex (r, c).  Vertical edges follow: v(r, c) = L*L + r*L + c is the
  edge south of vertex (r, c).  The plaquette with top-left vertex (r, c)
  has edges [h(r,c), h(r+1,c), v(r,c), v(r,c+1)]; the star of vertex (r, c)
  has edges [h(r,c), h(r,c-1), v(r,c), v(r-1,c)] (all arithmetic mod L).

Spin configurations are plain int8 arrays over {+1, -1}.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

BOUNDARIES = ("open", "periodic")


@dataclass(frozen=True)
class SquareLattice:
    """L x L square lattice of sites, open or periodic boundary."""

    L: int
    boundary: str = "open"

    def __post_init__(self):
        if self.L < 1:
            raise ValueError(f"L must be a positive integer, got {self.L}")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")

    @property
    def n_sites(self) -> int:
        return self.L * self.L

    def site(self, row: int, col: int) -> int:
        return (row % self.L) * self.L + (col % self.L)


@dataclass(frozen=True)
class ToricLattice:
    """Edge spins of an L x L periodic lattice; always periodic."""

    L: int

    def __post_init__(self):
        if self.L < 2:
            raise ValueError(f"toric lattice needs L >= 2, got {self.L}")

    @property
    def n_sites(self) -> int:
        return 2 * self.L * self.L

    def h_edge(self, row: int, col: int) -> int:
        return (row % self.L) * self.L + (col % self.L)

    def v_edge(self, row: int, col: int) -> int:
        return self.L * self.L + (row % self.L) * self.L + (col % self.L)


Lattice = SquareLattice | ToricLattice


@lru_cache(maxsize=None)
def bonds(lattice: SquareLattice) -> np.ndarray:
    """Nearest-neighbour bonds as an (n_bonds, 2) int array.

    Row-major site order; each site emits its horizontal bond before its
    vertical one.  Open boundary: 2*L*(L-1) bonds; periodic: 2*L*L (each
    directed wrap-around pair appears once).
    """
    L = lattice.L
    periodic = lattice.boundary == "periodic"
    pairs = []
    for r in range(L):
        for c in range(L):
            s = r * L + c
            if c + 1 < L or periodic:
                pairs.append((s, lattice.site(r, c + 1)))
            if r + 1 < L or periodic:
                pairs.append((s, lattice.site(r + 1, c)))
    out = np.asarray(pairs, dtype=np.int64)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def plaquettes(lattice: ToricLattice) -> np.ndarray:
    """(L*L, 4) edge indices of each plaquette, row-major by top-left vertex."""
    L = lattice.L
    quads = [
        [lattice.h_edge(r, c), lattice.h_edge(r + 1, c), lattice.v_edge(r, c), lattice.v_edge(r, c + 1)]
        for r in range(L)
        for c in range(L)
    ]
    out = np.asarray(quads, dtype=np.int64)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def vertex_stars(lattice: ToricLattice) -> np.ndarray:
    """(L*L, 4) edge indices of each vertex star, row-major by vertex."""
    L = lattice.L
    quads = [
        [lattice.h_edge(r, c), lattice.h_edge(r, c - 1), lattice.v_edge(r, c), lattice.v_edge(r - 1, c)]
        for r in range(L)
        for c in range(L)
    ]
    out = np.asarray(quads, dtype=np.int64)
    out.setflags(write=False)
    return out


def toric_cells(lattice: ToricLattice) -> tuple[np.ndarray, np.ndarray]:
    """(plaquettes, vertex stars) edge-index quadruples."""
    return plaquettes(lattice), vertex_stars(lattice)


def flip(sigma: np.ndarray, sites) -> np.ndarray:
    """Copy of sigma with the listed sites negated; the input is unchanged."""
    sigma = np.asarray(sigma)
    idx = np.asarray(sites, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= sigma.shape[-1]):
        raise ValueError(f"flip indices out of range [0, {sigma.shape[-1]})")
    out = sigma.copy()
    out[..., idx] *= -1
    return out


def all_up(n_sites: int) -> np.ndarray:
    return np.ones(n_sites, dtype=np.int8)


def random_config(n_sites: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random +-1 configuration."""
    return (1 - 2 * rng.integers(0, 2, size=n_sites)).astype(np.int8)


def check_spins(sigma: np.ndarray, n_sites: int | None = None) -> np.ndarray:
    """Validate a +-1 configuration and return it as int8."""
    sigma = np.asarray(sigma)
    if n_sites is not None and sigma.shape[-1] != n_sites:
        raise ValueError(f"configuration length {sigma.shape[-1]} != lattice size {n_sites}")
    if not np.all(np.abs(sigma) == 1):
        raise ValueError("spin values must be +-1")
    return sigma.astype(np.int8, copy=False)
