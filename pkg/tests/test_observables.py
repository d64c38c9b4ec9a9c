import numpy as np
import pytest

from nqs_prune.ansatz import FeedForward, MaskedAnsatz
from nqs_prune.hamiltonian import TransverseFieldIsing, local_energies
from nqs_prune.lattice import SquareLattice, all_up
from nqs_prune.observables import (
    MetricsRecord,
    absolute_error_per_spin,
    energy_stats,
    fidelity,
    fidelity_estimate,
    magnetization_x,
    magnetization_z,
    relative_error,
)
from nqs_prune.oracle import enumerate_expectation, enumerate_overlap
from nqs_prune.sampler import SampleBatch, SamplerConfig, sample_batch


def random_ansatz(lat, seed, scale=0.2, alpha=1.0):
    arch = FeedForward(lat, alpha)
    return MaskedAnsatz(arch, np.random.default_rng(seed).normal(0, scale, arch.n_init))


def test_energy_stats_examples():
    assert energy_stats(np.full(100, -18.0)) == (-18.0, 0.0, 0.0)
    mean, var, err = energy_stats(np.array([0.0, 2.0]))
    assert (mean, var, err) == (1.0, 2.0, 1.0)
    with pytest.raises(ValueError):
        energy_stats(np.array([1.0]))


def test_error_measures():
    assert relative_error(-18.0, -18.0) == 0.0
    assert relative_error(-17.9, -18.0) == pytest.approx(0.1 / 18.0)
    assert absolute_error_per_spin(-17.9, -18.0, 18) == pytest.approx(0.1 / 18.0)
    with pytest.raises(ValueError):
        relative_error(1.0, 0.0)


def make_batch(ansatz, configs):
    configs = np.asarray(configs, dtype=np.int8)
    return SampleBatch(configs=configs, log_psis=ansatz.log_psi_batch(configs), acceptance_rate=1.0)


def test_magnetizations_deterministic_cases():
    lat = SquareLattice(3)
    uniform = MaskedAnsatz(FeedForward(lat, 1.0), np.zeros(81))
    allup_batch = make_batch(uniform, np.tile(all_up(9), (32, 1)))
    assert magnetization_z(allup_batch) == 1.0
    assert magnetization_x(uniform, allup_batch) == 1.0  # every flip ratio is exactly 1

    sampled = sample_batch(uniform, SamplerConfig(n_samples=1024, n_chains=16, seed=1))
    assert magnetization_x(uniform, sampled) == 1.0
    assert abs(magnetization_z(sampled)) <= 3.0 / np.sqrt(1024 * 9)


def test_sampled_m_x_nonnegative():
    lat = SquareLattice(3)
    ans = random_ansatz(lat, seed=3)
    batch = sample_batch(ans, SamplerConfig(n_samples=512, n_chains=8, seed=2))
    mx = magnetization_x(ans, batch)
    assert mx >= 0.0  # ratios of a positive wavefunction are positive


def test_fidelity_identical_states_is_one():
    lat = SquareLattice(3)
    ans = random_ansatz(lat, seed=5)
    batch = sample_batch(ans, SamplerConfig(n_samples=256, n_chains=8, seed=7))
    assert fidelity(ans, ans, batch, batch) == 1.0


def test_fidelity_disjoint_support_is_zero():
    lat = SquareLattice(3)
    arch = FeedForward(lat, 1.0)
    big = 150.0
    # strongly peaked on all-up vs all-down
    up = MaskedAnsatz(arch, np.full(arch.n_init, big / 81.0))
    down = MaskedAnsatz(arch, np.full(arch.n_init, -big / 81.0))
    batch_up = make_batch(up, np.tile(all_up(9), (16, 1)))
    batch_down = make_batch(down, np.tile(-all_up(9), (16, 1)))
    assert fidelity(up, down, batch_up, batch_down) <= 1e-10


def test_fidelity_symmetric_on_same_batches():
    lat = SquareLattice(3)
    a = random_ansatz(lat, seed=8)
    b = random_ansatz(lat, seed=9)
    ba = sample_batch(a, SamplerConfig(n_samples=256, n_chains=8, seed=10))
    bb = sample_batch(b, SamplerConfig(n_samples=256, n_chains=8, seed=11))
    assert fidelity(a, b, ba, bb) == fidelity(b, a, bb, ba)


def test_fidelity_matches_enumerated_overlap():
    lat = SquareLattice(3)
    for seed in range(5):
        a = random_ansatz(lat, seed=20 + seed)
        b = random_ansatz(lat, seed=40 + seed)
        exact = enumerate_overlap(a, b)
        ba = sample_batch(a, SamplerConfig(n_samples=1024, n_chains=16, seed=60 + seed))
        bb = sample_batch(b, SamplerConfig(n_samples=1024, n_chains=16, seed=80 + seed))
        f, se = fidelity_estimate(a, b, ba, bb)
        assert abs(f - exact) <= 3 * se + 1e-3


def test_sampled_variance_matches_enumeration():
    lat = SquareLattice(3)
    ham = TransverseFieldIsing(lat, 2.0)
    ans = random_ansatz(lat, seed=31)
    ex = enumerate_expectation(ans, ham)
    batch = sample_batch(ans, SamplerConfig(n_samples=2048, n_chains=16, seed=5))
    e_loc = local_energies(ham, ans, batch.configs, batch.log_psis)
    _, var_hat, _ = energy_stats(e_loc)
    resid = e_loc - e_loc.mean()
    m4 = np.mean(resid**4)
    se_var = np.sqrt(max(m4 - var_hat**2, 0.0) / e_loc.size)
    assert abs(var_hat - ex.variance) <= 3 * se_var + 1e-9


def test_metrics_record_roundtrip():
    rec = MetricsRecord(iteration=3, n=500, rho=31.25, energy=-50.1, variance=0.2, stat_err=0.014,
                        rel_err=1e-4, abs_err_per_spin=6e-4, m_x=0.9, m_z=0.01, fidelity=0.99)
    row = rec.to_row()
    assert row["E"] == -50.1 and row["var"] == 0.2 and "energy" not in row
    back = MetricsRecord.from_row(row)
    assert back == rec
    with pytest.raises(ValueError):
        MetricsRecord(iteration=0, n=1, rho=1.0, energy=0.0, variance=-1.0, stat_err=0.0)
