import numpy as np
import pytest
from scipy.stats import chisquare

from nqs_prune.ansatz import FeedForward, MaskedAnsatz, ShallowConv
from nqs_prune.hamiltonian import local_energies, TransverseFieldIsing
from nqs_prune.lattice import SquareLattice, ToricLattice, all_up, plaquettes
from nqs_prune.oracle import all_configurations, build_toric_solution
from nqs_prune.rngs import substream
from nqs_prune.sampler import (
    ChainState,
    SamplerConfig,
    StuckChainWarning,
    metropolis_step,
    propose,
    sample_batch,
)


def random_ffnn(lat, alpha=2.0, seed=0, scale=0.15):
    arch = FeedForward(lat, alpha)
    return MaskedAnsatz(arch, np.random.default_rng(seed).normal(0, scale, arch.n_init))


def test_single_flip_proposals_uniform():
    lat = SquareLattice(4)
    rng = substream(0, "test")
    counts = np.zeros(16, dtype=int)
    for _ in range(100_000):
        flips = propose("single_flip", all_up(16), rng, lat)
        assert flips.size == 1
        counts[flips[0]] += 1
    assert chisquare(counts).pvalue > 1e-3


def test_mixed_rule_frequencies_and_cells():
    lat = ToricLattice(3)
    rng = substream(1, "test")
    n_quad = 0
    draws = 100_000
    stars = {tuple(sorted(q)) for q in np.asarray(plaquettes(lat)).tolist()}  # not these
    for _ in range(draws):
        flips = propose("mixed_plaquette", all_up(18), rng, lat)
        if flips.size == 4:
            n_quad += 1
            assert tuple(sorted(flips.tolist())) not in stars  # star cells, not B_p plaquettes
        else:
            assert flips.size == 1
    assert abs(n_quad / draws - 0.5) < 0.01


def test_mixed_rule_requires_toric():
    with pytest.raises(ValueError):
        propose("mixed_plaquette", all_up(16), substream(0, "x"), SquareLattice(4))
    arch = FeedForward(SquareLattice(4), 1.0)
    ans = MaskedAnsatz(arch, np.zeros(arch.n_init))
    with pytest.raises(ValueError):
        sample_batch(ans, SamplerConfig(rule="mixed_plaquette"))


def test_star_flips_preserve_plaquette_syndrome():
    lat = ToricLattice(3)
    rng = substream(3, "test")
    sigma = all_up(18)
    quads = np.asarray(plaquettes(lat))
    for _ in range(200):
        flips = propose("mixed_plaquette", sigma, rng, lat)
        if flips.size == 4:
            flipped = sigma.copy()
            flipped[flips] *= -1
            assert np.array_equal(sigma[quads].prod(axis=1), flipped[quads].prod(axis=1))


def test_metropolis_always_accepts_uphill():
    lat = SquareLattice(3)
    arch = FeedForward(lat, 1.0)
    uniform = MaskedAnsatz(arch, np.zeros(arch.n_init))
    chain = ChainState(sigma=all_up(9), log_psi=0.0, rng=substream(0, "chain"))
    for _ in range(100):
        metropolis_step(uniform, chain, "single_flip")
    assert chain.accepted_since_refresh == 100  # delta = 0 accepts every move


def test_metropolis_acceptance_probability_quarter():
    class Stub:
        def __init__(self, lattice):
            from types import SimpleNamespace

            self.arch = SimpleNamespace(lattice=lattice)

        def log_psi_delta(self, sigma, flips):
            return -np.log(2.0)

        def log_psi(self, sigma):
            return 0.0

    lat = SquareLattice(3)
    stub = Stub(lat)
    chain = ChainState(sigma=all_up(9), log_psi=0.0, rng=substream(7, "chain"))
    trials = 40_000
    accepted = 0
    for _ in range(trials):
        before = chain.accepted_since_refresh
        metropolis_step(stub, chain, "single_flip")
        accepted += chain.accepted_since_refresh != before
    p_hat = accepted / trials
    assert abs(p_hat - 0.25) < 4 * np.sqrt(0.25 * 0.75 / trials)


def test_chain_cache_tracks_log_psi():
    lat = SquareLattice(3)
    ans = random_ffnn(lat, seed=5)
    sigma = all_up(9)
    chain = ChainState(sigma=sigma, log_psi=ans.log_psi(sigma), rng=substream(2, "chain"))
    for _ in range(3000):
        metropolis_step(ans, chain, "single_flip")
    assert abs(chain.log_psi - ans.log_psi(chain.sigma)) <= 1e-9


def test_batch_shapes_and_chain_major_order():
    lat = SquareLattice(3)
    ans = random_ffnn(lat, seed=1)
    cfg = SamplerConfig(n_samples=1024, n_chains=16, seed=9)
    batch = sample_batch(ans, cfg)
    assert batch.configs.shape == (1024, 9)
    assert batch.log_psis.shape == (1024,)
    assert 0.0 <= batch.acceptance_rate <= 1.0
    assert np.allclose(batch.log_psis, ans.log_psi_batch(batch.configs))
    # chain 0 of a 16-chain batch is exactly the single-chain batch
    solo = sample_batch(ans, SamplerConfig(n_samples=64, n_chains=1, seed=9))
    assert np.array_equal(batch.configs[:64], solo.configs)


def test_batch_determinism_bitwise():
    lat = SquareLattice(3)
    ans = random_ffnn(lat, seed=3)
    cfg = SamplerConfig(n_samples=512, n_chains=8, seed=4)
    a = sample_batch(ans, cfg)
    b = sample_batch(ans, cfg)
    assert np.array_equal(a.configs, b.configs)
    assert np.array_equal(a.log_psis, b.log_psis)
    c = sample_batch(ans, SamplerConfig(n_samples=512, n_chains=8, seed=5))
    assert not np.array_equal(a.configs, c.configs)


def test_generic_path_matches_contract_for_cnn():
    lat = SquareLattice(4)
    arch = ShallowConv(lat, 2)
    ans = MaskedAnsatz(arch, np.random.default_rng(0).normal(0, 0.3, arch.n_init))
    cfg = SamplerConfig(n_samples=64, n_chains=4, burn_in_sweeps=2, seed=11)
    a = sample_batch(ans, cfg)
    b = sample_batch(ans, cfg)
    assert np.array_equal(a.configs, b.configs)
    assert np.allclose(a.log_psis, ans.log_psi_batch(a.configs))


def test_uniform_state_magnetization():
    lat = SquareLattice(4)
    arch = FeedForward(lat, 1.0)
    ans = MaskedAnsatz(arch, np.zeros(arch.n_init))
    cfg = SamplerConfig(n_samples=1024, n_chains=16, seed=12)
    batch = sample_batch(ans, cfg)
    n_tot = 1024 * 16
    assert abs(batch.configs.astype(float).mean()) <= 4.0 / np.sqrt(n_tot)


def test_detailed_balance_transition_matrix():
    # single-flip Metropolis on N=4 spins: pi_i P_ij == pi_j P_ji to 1e-12
    lat = SquareLattice(2)
    ans = random_ffnn(lat, alpha=2.0, seed=6, scale=0.4)
    cfgs = all_configurations(4)
    logs = ans.log_psi_batch(cfgs)
    dim = 16
    p = np.zeros((dim, dim))
    for s in range(dim):
        for site in range(4):
            s2 = s ^ (1 << site)
            p[s, s2] = 0.25 * min(1.0, np.exp(2.0 * (logs[s2] - logs[s])))
        p[s, s] = 1.0 - p[s].sum()
    pi = np.exp(2.0 * (logs - logs.max()))
    pi /= pi.sum()
    flow = pi[:, None] * p
    assert np.abs(flow - flow.T).max() <= 1e-12
    assert np.allclose(p.sum(axis=1), 1.0)


def test_sampled_distribution_matches_enumeration():
    lat = SquareLattice(2)
    ans = random_ffnn(lat, alpha=2.0, seed=13, scale=0.3)
    cfgs = all_configurations(4)
    logs = ans.log_psi_batch(cfgs)
    p_exact = np.exp(2.0 * (logs - logs.max()))
    p_exact /= p_exact.sum()
    cfg = SamplerConfig(n_samples=200_000, n_chains=16, sweep_length=8, seed=3)
    batch = sample_batch(ans, cfg)
    bits = ((1 - batch.configs) // 2).astype(np.int64)
    states = (bits * (1 << np.arange(4))).sum(axis=1)
    counts = np.bincount(states, minlength=16)
    assert chisquare(counts, p_exact * counts.sum()).pvalue > 1e-3


def test_chain_streams_are_independent():
    lat = SquareLattice(3)
    ham = TransverseFieldIsing(lat, 1.5)
    ans = random_ffnn(lat, seed=20)
    n_chains, per_chain, repeats = 16, 64, 20
    energies = np.empty((repeats, n_chains))
    for r in range(repeats):
        batch = sample_batch(ans, SamplerConfig(n_samples=n_chains * per_chain, n_chains=n_chains, seed=100 + r))
        e = local_energies(ham, ans, batch.configs, batch.log_psis).reshape(n_chains, per_chain)
        energies[r] = e.mean(axis=1)
    corr = np.corrcoef(energies.T)
    off_diag = corr[np.triu_indices(n_chains, k=1)]
    assert abs(off_diag.mean()) < 0.1


@pytest.mark.filterwarnings("ignore::nqs_prune.sampler.StuckChainWarning")
def test_toric_mixed_rule_explores_ground_sector():
    sol = build_toric_solution(2, 1.2)
    quads = np.asarray(plaquettes(ToricLattice(2)))

    def satisfied_fraction(rule, seed):
        cfg = SamplerConfig(n_samples=512, n_chains=8, rule=rule, seed=seed)
        batch = sample_batch(sol, cfg)
        return (batch.configs[:, quads].prod(axis=2) == 1).mean()

    mixed = np.median([satisfied_fraction("mixed_plaquette", s) for s in range(5)])
    single = np.median([satisfied_fraction("single_flip", s) for s in range(5)])
    assert mixed >= single - 1e-12


def test_mixed_rule_moves_at_large_weights():
    # single flips freeze at large W; star moves keep the chain mobile
    sol = build_toric_solution(2, 12.0)
    batch = sample_batch(sol, SamplerConfig(n_samples=256, n_chains=4, rule="mixed_plaquette", seed=1))
    assert batch.acceptance_rate > 0.2
    assert not np.all(batch.configs == 1)


def test_stuck_chain_warning():
    sol = build_toric_solution(2, 40.0)
    with pytest.warns(StuckChainWarning):
        batch = sample_batch(sol, SamplerConfig(n_samples=128, n_chains=4, rule="single_flip", seed=2))
    assert batch.stuck
    assert batch.acceptance_rate == 0.0


def test_sampler_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(n_samples=100, n_chains=16)
    with pytest.raises(ValueError):
        SamplerConfig(rule="teleport")
    assert SamplerConfig(n_samples=64, n_chains=4).sweep_length is None
