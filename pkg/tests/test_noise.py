import math

import numpy as np
import pytest
from scipy import integrate

from kspara.littlewood_paley import block_norms, partition_for
from kspara.noise import (
    brownian_batch,
    bump,
    derive_seed,
    make_heterogeneity,
    mollifier_array,
    mollifier_symbol,
    ou_variance,
    ou_weight,
    pair_white_noise,
    parse_sigma,
    parse_trig,
    sample_brownian,
    sample_increments,
    sample_ou_pair,
    shell_representatives,
    stochastic_convolution,
    white_noise_field,
)
from kspara.spectral_core import Lattice


def test_shell_representatives_cover_each_pair_once():
    N = 5
    reps = shell_representatives(N)
    seen = set()
    for m in map(tuple, reps):
        assert m != (0, 0)
        assert m not in seen and (-m[0], -m[1]) not in seen
        seen.add(m)
    assert len(reps) == ((2 * N + 1) ** 2 - 1) // 2
    shells = np.max(np.abs(reps), axis=1)
    assert np.all(np.diff(shells) >= 0)


def test_increments_reproducible_and_hermitian():
    lat = Lattice(4)
    a = sample_increments(lat, 0.1, 3, 7)
    assert np.array_equal(a, sample_increments(lat, 0.1, 3, 7))
    assert not np.array_equal(a, sample_increments(lat, 0.1, 3, 8))
    assert lat.hermitian_defect(a) == 0
    assert np.all(a[..., 4, 4].imag == 0)


def test_increment_prefix_independent_of_lattice_size():
    # shell ordering keeps low modes identical when N grows
    small, big = Lattice(3), Lattice(6)
    a = sample_increments(small, 0.1, 2, 5)
    b = sample_increments(big, 0.1, 2, 5)
    assert np.array_equal(a[..., 3, 3], b[..., 6, 6])


def test_increment_variance():
    lat = Lattice(3)
    dt = 0.02
    dW = brownian_batch(lat, 1.0, 50, [derive_seed(1, s) for s in range(200)])  # 1e4 draws per mode
    v = np.abs(dW) ** 2
    m = v.reshape(-1, *lat.shape).mean(axis=0)
    se = v.reshape(-1, *lat.shape).std(axis=0) / math.sqrt(v.shape[0] * v.shape[1])
    assert np.all(np.abs(m - dt) < 4 * se)


def test_white_noise_single_mode_pairing():
    lat = Lattice(3)
    W = sample_brownian(lat, 0.4, 4, 11)
    test = np.zeros((4, 2) + lat.shape, complex)
    test[2, 1, 3 - 1, 3 + 2] = 1.0  # phi_hat^2_2(-w) with w = (1, -2)
    assert math.isclose(pair_white_noise(W, test), W.dW[2, 1, 3 + 1, 3 - 2].real, abs_tol=1e-15)
    assert np.allclose(white_noise_field(W, 1), W.dW[1] / 0.1)
    with pytest.raises(IndexError):
        white_noise_field(W, 4)


def test_white_noise_covariance():
    lat = Lattice(2)
    M, T = 3, 0.3
    rng = np.random.default_rng(3)
    phi = lat.hermitize(rng.normal(size=(M, 2) + lat.shape) + 1j * rng.normal(size=(M, 2) + lat.shape))
    psi = lat.hermitize(rng.normal(size=(M, 2) + lat.shape) + 1j * rng.normal(size=(M, 2) + lat.shape))
    seeds = [derive_seed(2, s) for s in range(10_000)]
    dW = brownian_batch(lat, T, M, seeds)
    x = np.real(np.sum(phi[..., ::-1, ::-1] * dW, axis=(1, 2, 3, 4)))
    y = np.real(np.sum(psi[..., ::-1, ::-1] * dW, axis=(1, 2, 3, 4)))
    prod = x * y
    exact = (T / M) * np.real(np.sum(phi * np.conj(psi)))  # L2 pairing in time and space
    assert abs(prod.mean() - exact) < 3 * prod.std() / math.sqrt(len(prod))


def test_mollifier():
    assert bump(0.0) == 1.0 and bump(1.0) == 0.0 and bump(1.5) == 0.0
    m = mollifier_symbol(0.25)
    lat = Lattice(6)
    arr = mollifier_array(m, lat)
    r = np.sqrt(lat.norm2)
    assert np.all(arr[r >= 4] == 0) and np.all(arr[r < 4] > 0)
    assert np.all(mollifier_array(None, lat) == 1)
    with pytest.raises(ValueError):
        mollifier_symbol(0.0)


def test_trig_parsing_and_coefficients():
    assert parse_trig("1;0.5:1:0") == [(1.0, 0, 0, "cos"), (0.5, 1, 0, "cos")]
    with pytest.raises(ValueError):
        parse_trig("1;bad")
    lat = Lattice(4)
    sig = make_heterogeneity("trig", "1;0.5:1:0:cos", 0.5, 5, lat)
    c = sig.at_step(0)
    assert np.count_nonzero(c) == 3
    assert c[4, 4] == 1.0 and c[5, 4] == 0.25 and c[3, 4] == 0.25


def test_constant_heterogeneity():
    lat = Lattice(3)
    sig = make_heterogeneity("constant", 2.0, 1.0, 4, lat)
    assert sig.coeffs.shape == (5,) + lat.shape
    assert np.all(sig.coeffs[:, 3, 3] == 2.0) and np.count_nonzero(sig.coeffs) == 5
    assert sig.is_constant_in_space and sig.is_constant_in_time
    # H^2 norm of a constant is the constant
    assert math.isclose(sig.sobolev_h2, 2.0)


def test_sqrt_deterministic_initial_value():
    lat = Lattice(8)
    rho0 = lat.mode((0, 0), 1.0) + lat.mode((1, 0), 0.25) + lat.mode((1, 1), 0.1j)
    sig = make_heterogeneity("sqrt-deterministic", rho0, 0.01, 2, lat)
    assert np.max(np.abs(lat.to_grid(sig.at_step(0)) - np.sqrt(lat.to_grid(rho0)))) < 1e-12
    assert not sig.is_constant_in_time


def test_sqrt_deterministic_rejects_negative_density():
    lat = Lattice(4)
    rho0 = lat.mode((0, 0), 0.1) + lat.mode((1, 0), 0.5)
    with pytest.raises(ValueError):
        make_heterogeneity("sqrt-deterministic", rho0, 0.01, 2, lat)


def test_parse_sigma():
    lat = Lattice(3)
    assert parse_sigma("const:0.5", 1.0, 2, lat).coeffs[0, 3, 3] == 0.5
    with pytest.raises(ValueError):
        parse_sigma("weird:1", 1.0, 2, lat)
    with pytest.raises(ValueError):
        parse_sigma("sqrt-det", 1.0, 2, lat)


def test_ou_weight():
    a = np.array([0.0, 2.0])
    assert np.allclose(ou_weight(a, 0.1), [1.0, math.sqrt((1 - math.exp(-0.4)) / 0.4)])


def test_stochastic_convolution_trivial_cases():
    lat = Lattice(4)
    dW = sample_increments(lat, 0.1, 3, 0)
    zero = make_heterogeneity("constant", 0.0, 0.3, 3, lat)
    assert not np.any(stochastic_convolution(dW, zero, None, lat))
    one = make_heterogeneity("trig", "1;0.5:1:0", 0.3, 3, lat)
    ti = stochastic_convolution(dW, one, mollifier_symbol(0.5), lat)
    assert not np.any(ti[:, 4, 4]) and not np.any(ti[0])
    assert lat.hermitian_defect(ti) < 1e-15
    assert np.max(np.abs(np.imag(np.fft.ifft2(np.fft.ifftshift(ti[-1]))))) < 1e-10


def test_stochastic_convolution_grid_mismatch():
    lat = Lattice(4)
    sig = make_heterogeneity("constant", 1.0, 0.3, 3, lat)
    with pytest.raises(ValueError):
        stochastic_convolution(sample_increments(lat, 0.1, 4, 0), sig, None, lat)


def test_ito_isometry_small():
    lat = Lattice(4)
    T, M = 0.2, 4
    sig = make_heterogeneity("trig", "1;0.5:1:0;0.3:0:1:sin", T, M, lat)
    moll = mollifier_symbol(0.25)
    dW = brownian_batch(lat, T, M, [derive_seed(9, s) for s in range(4000)])
    ti = stochastic_convolution(dW, sig, moll, lat)[:, -1]
    for w in [(1, 0), (0, 2), (1, -1), (2, 1)]:
        x = np.abs(ti[:, w[0] + 4, w[1] + 4]) ** 2
        exact = ou_variance(sig.at_step(0), moll, lat, T, w)
        assert exact > 0
        assert abs(x.mean() - exact) < 4 * x.std() / math.sqrt(len(x))


def test_ou_variance_constant_sigma_closed_form():
    lat = Lattice(3)
    a = 4 * np.pi**2 * 5
    # sigma = 1, no mollifier: sum_j |2 pi w^j|^2 (1 - e^{-2 a t}) / (2 a) = (1 - e^{-2 a t}) / 2
    assert math.isclose(ou_variance(lat.mode((0, 0), 1.0), None, lat, 0.01, (1, 2)), (1 - math.exp(-2 * a * 0.01)) / 2)
    assert ou_variance(lat.mode((0, 0), 1.0), None, lat, 0.01, (0, 0)) == 0


def test_exact_ou_pair_moments():
    lat = Lattice(2)
    T = 0.05
    S = 6000
    X = np.array([sample_ou_pair(lat, T, derive_seed(4, s)) for s in range(S)])  # (S, 2, L, L)
    for w in [(1, 0), (1, 1), (0, 2)]:
        a = 4 * np.pi**2 * (w[0] ** 2 + w[1] ** 2)
        m = lambda k: integrate.quad(lambda u: u**k * math.exp(-2 * a * u), 0, T)[0]  # noqa: E731
        i = (w[0] + 2, w[1] + 2)
        ti, I = X[:, 0][(slice(None),) + i], X[:, 1][(slice(None),) + i]
        for vals, exact in ((np.abs(ti) ** 2, a * m(0)), (np.abs(I) ** 2, a * m(2)), (np.real(ti * np.conj(I)), a * m(1))):
            assert abs(vals.mean() - exact) < 4 * vals.std() / math.sqrt(S)


def test_regularity_signature():
    lat = Lattice(64)
    part = partition_for(64)
    ks = np.arange(2, 6)
    logs = [np.log2(block_norms(sample_ou_pair(lat, 0.5, derive_seed(5, s))[0], lat, np.inf, part)[ks + 1]) for s in range(100)]
    slope = np.polyfit(ks, np.mean(logs, axis=0), 1)[0]
    assert 0.8 <= slope <= 1.3


def test_large_seeds_keep_all_bits():
    lat = Lattice(2)
    s = (1 << 63) + 5
    assert not np.array_equal(sample_increments(lat, 0.1, 1, s), sample_increments(lat, 0.1, 1, s + 1))
    a, _ = sample_ou_pair(lat, 0.1, s)
    b, _ = sample_ou_pair(lat, 0.1, s + 1)
    assert not np.array_equal(a, b)
