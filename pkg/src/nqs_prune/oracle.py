"""Ground-truth machinery: exact diagonalization, full enumeration, and
the analytic sparse toric-code construction.

Basis convention for enumeration and matrix-free operators: basis state
s in [0, 2^N) encodes spin sigma_j = +1 when bit j of s is 0, so s = 0 is
the all-up configuration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ansatz import FeedForward, MaskedAnsatz
from .hamiltonian import Hamiltonian, ToricCode, TransverseFieldIsing, diagonal_energy_batch, flip_table
from .lattice import ToricLattice, bonds as square_bonds

MAX_ENUM_SPINS = 20
_ENUM_CHUNK = 1 << 14


class CapacityError(ValueError):
    """System too large for an exact routine."""


@dataclass(frozen=True)
class ExactSolution:
    energy: float
    method: str  # "lanczos" | "dense" | "analytic"
    n_spins: int


def configs_for_states(states: np.ndarray, n_spins: int) -> np.ndarray:
    """Decode basis-state integers into (len(states), N) +-1 configurations."""
    bits = (states[:, None] >> np.arange(n_spins)[None, :]) & 1
    return (1 - 2 * bits).astype(np.int8)


def all_configurations(n_spins: int) -> np.ndarray:
    if n_spins > MAX_ENUM_SPINS:
        raise CapacityError(f"enumeration limited to N <= {MAX_ENUM_SPINS}, got {n_spins}")
    return configs_for_states(np.arange(1 << n_spins, dtype=np.int64), n_spins)


def _diag_vector(ham: Hamiltonian) -> np.ndarray:
    """Diagonal of H over all 2^N basis states, evaluated in chunks."""
    n = ham.n_sites
    dim = 1 << n
    out = np.empty(dim)
    for lo in range(0, dim, _ENUM_CHUNK):
        hi = min(lo + _ENUM_CHUNK, dim)
        states = np.arange(lo, hi, dtype=np.int64)
        out[lo:hi] = diagonal_energy_batch(ham, configs_for_states(states, n))
    return out


def _xor_masks(ham: Hamiltonian) -> tuple[np.ndarray, np.ndarray]:
    sets, amps = flip_table(ham)
    masks = np.zeros(sets.shape[0], dtype=np.int64)
    for k in range(sets.shape[1]):
        masks |= np.int64(1) << sets[:, k].astype(np.int64)
    return masks, np.asarray(amps)


def apply_hamiltonian(ham: Hamiltonian, vec: np.ndarray, diag: np.ndarray | None = None) -> np.ndarray:
    """Matrix-free H @ vec over the full 2^N basis."""
    if diag is None:
        diag = _diag_vector(ham)
    out = diag * vec
    idx = np.arange(vec.size, dtype=np.int64)
    masks, amps = _xor_masks(ham)
    for m, a in zip(masks, amps):
        if a != 0.0:
            out += a * vec[idx ^ m]
    return out


def lanczos_ground_energy(ham: Hamiltonian, max_n: int = MAX_ENUM_SPINS, ritz_tol: float = 1e-12, max_iter: int = 200) -> ExactSolution:
    """Ground energy by matrix-free Lanczos with full reorthogonalization.

    Starts from the normalized all-ones vector (deterministic) and stops
    when successive lowest Ritz values agree to ritz_tol.
    """
    n = ham.n_sites
    if n > max_n:
        raise CapacityError(f"Lanczos limited to N <= {max_n}, got {n}")
    dim = 1 << n
    diag = _diag_vector(ham)
    q = np.full(dim, 1.0 / np.sqrt(dim))
    basis = [q]
    alphas: list[float] = []
    betas: list[float] = []
    prev_ritz = np.inf
    for _ in range(max_iter):
        w = apply_hamiltonian(ham, basis[-1], diag)
        alphas.append(float(basis[-1] @ w))
        # full reorthogonalization keeps the Krylov basis numerically orthogonal
        for b in basis:
            w -= (b @ w) * b
        for b in basis:
            w -= (b @ w) * b
        t = np.zeros((len(alphas), len(alphas)))
        t[np.diag_indices_from(t)] = alphas
        for i, b in enumerate(betas):
            t[i, i + 1] = t[i + 1, i] = b
        ritz = float(np.linalg.eigvalsh(t)[0])
        beta = float(np.linalg.norm(w))
        if abs(ritz - prev_ritz) < ritz_tol or beta < 1e-14 or len(alphas) == dim:
            return ExactSolution(ritz, "lanczos", n)
        prev_ritz = ritz
        betas.append(beta)
        basis.append(w / beta)
    return ExactSolution(prev_ritz, "lanczos", n)


def pauli_sparse_hamiltonian(ham: Hamiltonian, max_n: int = 16):
    """Explicit sparse matrix from Kronecker products of Pauli operators.

    Built independently of the matrix-free path (same basis convention:
    site j acts on bit j); used as a cross-check oracle.
    """
    import scipy.sparse as sp

    n = ham.n_sites
    if n > max_n:
        raise CapacityError(f"sparse matrix construction limited to N <= {max_n}, got {n}")
    sz = sp.diags([1.0, -1.0]).tocsr()
    sx = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))

    def site_op(ops: dict[int, sp.spmatrix]) -> sp.spmatrix:
        m = sp.identity(1, format="csr")
        for j in range(n):  # bit j is the fast axis: kron left-multiplies higher bits
            m = sp.kron(ops.get(j, sp.identity(2, format="csr")), m, format="csr")
        return m

    h = sp.csr_matrix((1 << n, 1 << n))
    if isinstance(ham, TransverseFieldIsing):
        for i, j in square_bonds(ham.lattice):
            h = h - site_op({int(i): sz, int(j): sz})
        for i in range(n):
            h = h - ham.kappa * site_op({i: sx})
    else:
        from .lattice import plaquettes, vertex_stars

        for quad in plaquettes(ham.lattice):
            h = h - site_op({int(e): sz for e in quad})
        for quad in vertex_stars(ham.lattice):
            h = h - site_op({int(e): sx for e in quad})
    return h


def dense_ground_energy(ham: Hamiltonian, max_n: int = 12) -> ExactSolution:
    """Ground energy from the explicit Pauli-product matrix (independent of
    the matrix-free path); dense eigensolver below 2^11, sparse above."""
    from scipy.sparse.linalg import eigsh

    n = ham.n_sites
    if n > max_n:
        raise CapacityError(f"dense oracle limited to N <= {max_n}, got {n}")
    h = pauli_sparse_hamiltonian(ham, max_n=max_n)
    if n <= 11:
        energy = float(np.linalg.eigvalsh(h.toarray())[0])
    else:
        energy = float(eigsh(h, k=1, which="SA", return_eigenvectors=False, tol=0)[0])
    return ExactSolution(energy, "dense", n)


@dataclass(frozen=True)
class EnumeratedExpectation:
    energy: float
    energy_sq: float
    variance: float
    log_norm: float  # log sum_sigma |psi|^2, relative to nothing (absolute)
    overlap: float | None = None


def _log_psi_all(ansatz: MaskedAnsatz) -> np.ndarray:
    n = ansatz.n_sites
    if n > MAX_ENUM_SPINS:
        raise CapacityError(f"enumeration limited to N <= {MAX_ENUM_SPINS}, got {n}")
    dim = 1 << n
    out = np.empty(dim)
    for lo in range(0, dim, _ENUM_CHUNK):
        hi = min(lo + _ENUM_CHUNK, dim)
        states = np.arange(lo, hi, dtype=np.int64)
        out[lo:hi] = ansatz.log_psi_batch(configs_for_states(states, n))
    return out


def enumerate_expectation(ansatz: MaskedAnsatz, ham: Hamiltonian, other: MaskedAnsatz | None = None) -> EnumeratedExpectation:
    """Exact <H>, <H^2>, norm (and overlap with `other`) over all 2^N states.

    All sums are taken log-safe relative to the maximum log-amplitude.
    <H^2> uses sum_sigma p_sigma E_loc(sigma)^2, exact for Hermitian H.
    """
    n = ham.n_sites
    if n != ansatz.n_sites:
        raise ValueError("ansatz and Hamiltonian lattice sizes differ")
    logs = _log_psi_all(ansatz)
    ref = logs.max()
    prob = np.exp(2.0 * (logs - ref))
    norm = prob.sum()
    prob /= norm

    diag = _diag_vector(ham)
    idx = np.arange(logs.size, dtype=np.int64)
    e_loc = diag.copy()
    masks, amps = _xor_masks(ham)
    for m, a in zip(masks, amps):
        if a != 0.0:
            e_loc += a * np.exp(logs[idx ^ m] - logs)
    energy = float(prob @ e_loc)
    energy_sq = float(prob @ (e_loc * e_loc))
    overlap = None
    if other is not None:
        overlap = enumerate_overlap(ansatz, other)
    return EnumeratedExpectation(
        energy=energy,
        energy_sq=energy_sq,
        variance=energy_sq - energy * energy,
        log_norm=float(np.log(norm) + 2.0 * ref),
        overlap=overlap,
    )


def enumerate_overlap(a: MaskedAnsatz, b: MaskedAnsatz) -> float:
    """Exact normalized overlap <a|b> / (|a| |b|) by full enumeration."""
    if a.n_sites != b.n_sites:
        raise ValueError("ansatz sizes differ")
    la, lb = _log_psi_all(a), _log_psi_all(b)
    ra, rb = la.max(), lb.max()
    num = np.exp((la - ra) + (lb - rb)).sum()
    den = np.sqrt(np.exp(2.0 * (la - ra)).sum() * np.exp(2.0 * (lb - rb)).sum())
    return float(num / den)


# -- analytic toric-code construction ---------------------------------------

# The 8 sign vectors over a plaquette with an odd number of minus signs:
# first the four with a single -1, then the four with a single +1.
ODD_PARITY_PATTERNS = np.array(
    [
        [-1, 1, 1, 1],
        [1, -1, 1, 1],
        [1, 1, -1, 1],
        [1, 1, 1, -1],
        [1, -1, -1, -1],
        [-1, 1, -1, -1],
        [-1, -1, 1, -1],
        [-1, -1, -1, 1],
    ],
    dtype=np.float64,
)


def toric_ground_energy(L: int) -> float:
    """Exact toric-code ground energy, -2 L^2 (all stabilizers at +1)."""
    if L < 2:
        raise ValueError("toric code needs L >= 2")
    return -2.0 * L * L


def build_toric_solution(L: int, W: float, arch: FeedForward | None = None) -> MaskedAnsatz:
    """Sparse FFNN realizing the odd-parity-filter toric-code ground state.

    Eight hidden units per plaquette, each connected to the plaquette's
    four edges with one odd-parity sign pattern of magnitude W.  The
    resulting log psi is 8W per satisfied plaquette and 4W per violated
    one, so every broken plaquette condition suppresses the amplitude by
    exp(-4W).  Exactly 32 L^2 weights are unmasked.
    """
    from .lattice import plaquettes

    lat = ToricLattice(L)
    if arch is None:
        arch = FeedForward(lat, alpha=4.0)  # width 4N = 8 L^2, exactly enough
    if arch.lattice != lat:
        raise ValueError("architecture lattice does not match L")
    n_plaq = L * L
    if arch.width < 8 * n_plaq:
        raise CapacityError(f"need width >= {8 * n_plaq}, architecture has {arch.width}")
    theta = np.zeros(arch.n_init)
    mask = np.zeros(arch.n_init, dtype=bool)
    n = lat.n_sites
    for p, quad in enumerate(plaquettes(lat)):
        for f, pattern in enumerate(ODD_PARITY_PATTERNS):
            unit = 8 * p + f
            for edge, sign in zip(quad, pattern):
                k = unit * n + int(edge)
                theta[k] = W * sign
                mask[k] = True
    return MaskedAnsatz(arch, theta, mask)
