import numpy as np
import pytest

from kspara.spectral_core import (
    Lattice,
    apply_heat,
    convolve_direct,
    divergence,
    duhamel_accumulate,
    duhamel_at,
    elliptic_multiplier,
    grad_heat_multiplier,
    grad_poisson,
    gradient,
    heat_multiplier,
    phi1,
    solve_poisson,
    trapezoid_weights,
)

from conftest import random_field


def test_lattice_shape_and_symmetry():
    lat = Lattice(5)
    assert lat.shape == (11, 11)
    f = lat.freqs.reshape(-1, 2)
    assert {tuple(x) for x in f} == {tuple(-x) for x in f}
    assert lat.points().shape == (11, 11, 2)


def test_single_cosine_on_grid():
    lat = Lattice(4)
    c = lat.mode((0, 0), 1.0) + lat.mode((1, 0), 0.25) + lat.mode((0, 2), 0.5j)
    x = lat.points()
    want = 1 + 0.5 * np.cos(2 * np.pi * x[..., 0]) - np.sin(2 * np.pi * 2 * x[..., 1])
    assert np.allclose(lat.to_grid(c), want, atol=1e-13)


@pytest.mark.parametrize("P", [None, 24, 31])
def test_transform_round_trip(rng, P):
    lat = Lattice(6)
    c = random_field(lat, rng)
    assert np.max(np.abs(lat.from_grid(lat.to_grid(c, P)) - c)) < 1e-13


def test_spatial_field_is_real(rng):
    lat = Lattice(7)
    c = random_field(lat, rng)
    assert lat.hermitian_defect(c) < 1e-15
    assert np.isrealobj(lat.to_grid(c))


def test_dealiased_product_matches_brute_convolution(rng):
    lat = Lattice(4)
    f, g = random_field(lat, rng), random_field(lat, rng)
    assert np.max(np.abs(lat.product(f, g) - convolve_direct(f, g, lat))) < 1e-12


def test_multipliers():
    w = np.array([[1, 0], [2, -1], [0, 0]])
    assert np.allclose(heat_multiplier(0.1, w), np.exp(-0.1 * 4 * np.pi**2 * np.array([1, 5, 0])))
    g = elliptic_multiplier(w, 1)
    assert g[2] == 0
    assert np.isclose(g[0], 1j / (2 * np.pi))
    assert grad_heat_multiplier(-0.1, w, 1)[0] == 0
    with pytest.raises(ValueError):
        heat_multiplier(-1.0, w)


def test_heat_semigroup_property(rng):
    lat = Lattice(5)
    c = random_field(lat, rng)
    assert np.allclose(apply_heat(apply_heat(c, 0.01, lat), 0.02, lat), apply_heat(c, 0.03, lat), atol=1e-15)


def test_poisson_inverts_minus_laplacian(rng):
    lat = Lattice(6)
    f = random_field(lat, rng, mean_free=True)
    u = solve_poisson(f, lat)
    assert np.max(np.abs(lat.lap * u - f)) < 1e-12
    assert u[lat.N, lat.N] == 0
    assert np.allclose(grad_poisson(f, lat), gradient(u, lat))
    assert np.max(np.abs(divergence(grad_poisson(f, lat), lat) + f)) < 1e-12


def test_phi1_and_trapezoid_weights():
    a = np.array([0.0, 1e-12, 1.0, 400.0])
    dt = 0.1
    assert np.allclose(phi1(a, dt), [dt, dt, (1 - np.exp(-0.1)) / 1.0, (1 - np.exp(-40)) / 400], rtol=1e-12)
    wl, wr = trapezoid_weights(a, dt)
    assert np.allclose(wl + wr, phi1(a, dt), rtol=1e-12)


def test_duhamel_exact_for_constant_forcing(rng):
    lat = Lattice(4)
    f = random_field(lat, rng)
    M, dt = 7, 0.03
    F = np.broadcast_to(f, (M + 1,) + lat.shape)
    a = lat.lap
    exact = phi1(a, M * dt) * f
    for rule in ("left", "trapezoid"):
        assert np.allclose(duhamel_accumulate(F, dt, lat, rule)[-1], exact, atol=1e-15)
    assert np.allclose(duhamel_at(F, 3 * dt, dt, lat), phi1(a, 3 * dt) * f)
    with pytest.raises(ValueError):
        duhamel_at(F, 0.05, dt, lat)


def test_trapezoid_exact_for_affine_forcing():
    lat = Lattice(3)
    M, dt = 5, 0.02
    t = np.arange(M + 1) * dt
    c = lat.mode((1, 1), 1.0)
    F = t[:, None, None] * c
    a = 4 * np.pi**2 * 2
    T = M * dt
    exact = (T / a - (1 - np.exp(-a * T)) / a**2) * c
    assert np.allclose(duhamel_accumulate(F, dt, lat, "trapezoid")[-1], exact, atol=1e-16)
