import numpy as np
import pytest

from nqs_prune.ansatz import (
    FeedForward,
    MaskedAnsatz,
    ShallowConv,
    full_mask,
    gelu,
    gelu_prime,
    init_parameters,
)
from nqs_prune.lattice import SquareLattice, ToricLattice, all_up, flip, random_config
from nqs_prune.oracle import ODD_PARITY_PATTERNS


def random_ansatz(arch, seed=0, scale=0.1):
    rng = np.random.default_rng(seed)
    return MaskedAnsatz(arch, rng.normal(0.0, scale, arch.n_init))


def test_parameter_counts():
    assert FeedForward(SquareLattice(10), 5.0).n_init == 50_000
    assert ShallowConv(SquareLattice(10), 4).n_init == 36
    assert FeedForward(ToricLattice(3), 8.0).n_init == 2592
    # toric grids feed two channels
    assert ShallowConv(ToricLattice(3), 4).n_init == 72


def test_ffnn_width_must_be_integral():
    FeedForward(SquareLattice(10), 2.5)  # 250 hidden units, fine
    with pytest.raises(ValueError):
        FeedForward(SquareLattice(3), 2.5)  # 22.5 units
    with pytest.raises(ValueError):
        FeedForward(SquareLattice(3), -1.0)


def test_cnn_needs_room_for_valid_padding():
    with pytest.raises(ValueError):
        ShallowConv(SquareLattice(2), 4)  # L < k_d


def test_init_deterministic_and_scheme_moments():
    arch = FeedForward(SquareLattice(10), 5.0)
    a = init_parameters(arch, seed=11)
    b = init_parameters(arch, seed=11)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, init_parameters(arch, seed=12))

    n = a.size
    assert abs(a.mean()) <= 3 * 0.1 / np.sqrt(n)
    assert abs(a.std() - 0.1) <= 3 * 0.1 / np.sqrt(2 * n)

    conv = ShallowConv(SquareLattice(4), 1200)  # n_init = 10800
    c = init_parameters(conv, seed=3)
    target = np.sqrt(1.0 / 9.0)
    assert abs(c.std() - target) <= 3 * target / np.sqrt(2 * c.size)
    assert np.abs(c).max() <= 2 * target / 0.8796256610342297 + 1e-12  # truncation bound

    with pytest.raises(ValueError):
        init_parameters(arch, scheme="xavier")


def test_log_psi_zero_parameters():
    for arch in (FeedForward(SquareLattice(3), 2.0), ShallowConv(SquareLattice(4), 3)):
        ans = MaskedAnsatz(arch, np.zeros(arch.n_init))
        sigma = random_config(arch.lattice.n_sites, np.random.default_rng(0))
        assert ans.log_psi(sigma) == 0.0


def test_single_hidden_unit_relu_value():
    # one unit with weights (W, W, W, -W) sees 2W on the all-up input
    arch = FeedForward(SquareLattice(2), 1.0)
    w = 0.7
    theta = np.zeros(arch.n_init)
    theta[:4] = [w, w, w, -w]
    ans = MaskedAnsatz(arch, theta)
    assert ans.log_psi(all_up(4)) == pytest.approx(2 * w)


def test_odd_parity_filter_sums():
    # eight odd-parity units on one 4-site block: 8W when the block product
    # is +1, 4W when it is -1
    arch = FeedForward(SquareLattice(2), 2.0)  # 8 hidden units, 4 sites
    w = 1.3
    theta = np.zeros(arch.n_init)
    for u, pattern in enumerate(ODD_PARITY_PATTERNS):
        theta[u * 4 : (u + 1) * 4] = w * pattern
    ans = MaskedAnsatz(arch, theta)
    assert ans.log_psi(all_up(4)) == pytest.approx(8 * w)
    assert ans.log_psi(np.array([1, 1, -1, -1], dtype=np.int8)) == pytest.approx(8 * w)
    assert ans.log_psi(np.array([-1, 1, 1, 1], dtype=np.int8)) == pytest.approx(4 * w)
    assert ans.log_psi(np.array([-1, -1, -1, 1], dtype=np.int8)) == pytest.approx(4 * w)


@pytest.mark.parametrize("make_arch", [lambda lat: FeedForward(lat, 2.0), None])
def test_log_psi_delta_matches_recompute(make_arch):
    if make_arch is None:
        arch = ShallowConv(SquareLattice(4), 3)
        lat = arch.lattice
    else:
        lat = SquareLattice(4)
        arch = make_arch(lat)
    ans = random_ansatz(arch, seed=2)
    rng = np.random.default_rng(7)
    n = lat.n_sites
    worst = 0.0
    for _ in range(1000):
        sigma = random_config(n, rng)
        k = rng.integers(1, 5)
        sites = rng.choice(n, size=k, replace=False)
        delta = ans.log_psi_delta(sigma, sites)
        exact = ans.log_psi(flip(sigma, sites)) - ans.log_psi(sigma)
        worst = max(worst, abs(delta - exact))
    assert worst <= 1e-10


def test_log_psi_delta_trivial_cases():
    arch = FeedForward(SquareLattice(3), 1.0)
    ans = random_ansatz(arch)
    sigma = all_up(9)
    assert ans.log_psi_delta(sigma, []) == 0.0
    zero = MaskedAnsatz(arch, np.zeros(arch.n_init))
    assert zero.log_psi_delta(sigma, [3]) == 0.0
    with pytest.raises(ValueError):
        ans.log_psi_delta(sigma, [9])


def test_log_derivatives_zero_theta_relu_subgradient():
    arch = FeedForward(SquareLattice(3), 2.0)
    ans = MaskedAnsatz(arch, np.zeros(arch.n_init))
    out = ans.log_derivatives(all_up(9))
    assert out.shape == (arch.n_init,)
    assert np.all(out == 0.0)


@pytest.mark.parametrize("arch_kind", ["ffnn", "cnn"])
def test_log_derivatives_match_central_differences(arch_kind):
    if arch_kind == "ffnn":
        arch = FeedForward(SquareLattice(3), 2.0)
    else:
        arch = ShallowConv(SquareLattice(4), 3)
    ans = random_ansatz(arch, seed=4, scale=0.3)
    rng = np.random.default_rng(1)
    sigma = random_config(arch.lattice.n_sites, rng)
    grad = ans.log_derivatives(sigma)
    h = ans._preactivations(sigma[None, :])[0]
    eps = 1e-5
    coords = rng.choice(arch.n_init, size=min(50, arch.n_init), replace=False)
    for k in coords:
        if arch_kind == "ffnn" and np.abs(h).min() < 1e-6:
            pytest.skip("pre-activation at a ReLU kink")
        theta_p = ans.theta.copy()
        theta_p[k] += eps
        theta_m = ans.theta.copy()
        theta_m[k] -= eps
        fd = (MaskedAnsatz(arch, theta_p).log_psi(sigma) - MaskedAnsatz(arch, theta_m).log_psi(sigma)) / (2 * eps)
        assert grad[k] == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_masked_coordinates_never_in_output():
    arch = FeedForward(SquareLattice(3), 2.0)
    ans = random_ansatz(arch, seed=9)
    pruned = ans.apply_prune([0, 5, 17])
    sigma = random_config(9, np.random.default_rng(3))
    out = pruned.log_derivatives(sigma)
    assert out.shape == (arch.n_init - 3,)
    # the same parameter values with a full mask, columns removed afterwards
    same_theta_full_mask = MaskedAnsatz(arch, pruned.theta.copy())
    full = same_theta_full_mask.log_derivatives(sigma)
    assert np.array_equal(out, np.delete(full, [0, 5, 17]))


def test_masked_parameters_never_influence_log_psi():
    arch = FeedForward(SquareLattice(3), 2.0)
    rng = np.random.default_rng(12)
    theta = rng.normal(0, 0.5, arch.n_init)
    mask = rng.random(arch.n_init) < 0.6
    mask[0] = True
    masked = MaskedAnsatz(arch, theta, mask)
    manually_zeroed = MaskedAnsatz(arch, np.where(mask, theta, 0.0))
    for _ in range(100):
        sigma = random_config(9, rng)
        assert masked.log_psi(sigma) == manually_zeroed.log_psi(sigma)


def test_apply_prune_contracts():
    arch = FeedForward(SquareLattice(2), 2.0)
    ans = random_ansatz(arch, seed=1)
    same = ans.apply_prune([])
    assert np.array_equal(same.theta, ans.theta) and np.array_equal(same.mask, ans.mask)

    nearly_all = ans.apply_prune(np.arange(1, arch.n_init))
    assert nearly_all.ones == 1

    pruned = ans.apply_prune([3])
    assert pruned.ones == ans.ones - 1
    with pytest.raises(ValueError):
        pruned.apply_prune([3])
    with pytest.raises(ValueError):
        ans.apply_prune([1, 1])
    with pytest.raises(ValueError):
        ans.apply_prune(np.arange(arch.n_init))  # would empty the mask

    # masking k is the same as zeroing theta_k
    sigma = random_config(4, np.random.default_rng(0))
    theta_zeroed = ans.theta.copy()
    theta_zeroed[3] = 0.0
    assert pruned.log_psi(sigma) == MaskedAnsatz(arch, theta_zeroed).log_psi(sigma)


def test_cnn_output_position_count():
    for L, k_d in [(4, 3), (5, 3), (6, 5)]:
        arch = ShallowConv(SquareLattice(L), 2, k_d)
        ans = random_ansatz(arch, seed=0)
        h = ans._preactivations(all_up(L * L)[None, :])
        assert h.shape == (1, 2, L - k_d + 1, L - k_d + 1)
        assert arch.out_side == L - k_d + 1


def test_cnn_toric_two_channel_input():
    arch = ShallowConv(ToricLattice(4), 3)
    ans = random_ansatz(arch, seed=6)
    sigma = random_config(32, np.random.default_rng(2))
    grids = ans._grids(sigma[None, :])
    assert grids.shape == (1, 2, 4, 4)
    assert np.array_equal(grids[0, 0].ravel(), sigma[:16])
    assert np.array_equal(grids[0, 1].ravel(), sigma[16:])


def test_gelu_exact_form():
    from scipy.special import ndtr

    x = np.linspace(-4, 4, 41)
    assert np.allclose(gelu(x), x * ndtr(x))
    eps = 1e-6
    fd = (gelu(x + eps) - gelu(x - eps)) / (2 * eps)
    assert np.allclose(gelu_prime(x), fd, atol=1e-9)


def test_mask_is_write_protected():
    arch = FeedForward(SquareLattice(2), 1.0)
    ans = random_ansatz(arch)
    with pytest.raises(ValueError):
        ans.mask[0] = False


def test_constructor_validation():
    arch = FeedForward(SquareLattice(2), 1.0)
    with pytest.raises(ValueError):
        MaskedAnsatz(arch, np.zeros(5))
    with pytest.raises(ValueError):
        MaskedAnsatz(arch, np.zeros(arch.n_init), np.zeros(arch.n_init, dtype=bool))
    assert np.all(full_mask(arch))
