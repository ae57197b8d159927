import math

import numpy as np
import pytest

from kspara.littlewood_paley import (
    DyadicPartition,
    besov_norm,
    block_norms,
    bony_parts,
    chi,
    commutator_CPR,
    holder_norm,
    lp_block,
    paraproduct,
    partition_for,
    required_kmax,
    resonant,
    rho,
    sim_restricted_convolution,
    smooth_step,
)
from kspara.spectral_core import Lattice

from conftest import random_field


def _step(s):
    # independent evaluation of the smooth step exp(-1/s) / (exp(-1/s) + exp(-1/(1-s)))
    if s <= 0:
        return 0.0
    if s >= 1:
        return 1.0
    a, b = math.exp(-1 / s), math.exp(-1 / (1 - s))
    return a / (a + b)


def _rho(k, r):
    c = lambda x: _step((0.5 - x) / (0.5 - 9 / 32))  # noqa: E731
    return c(r) if k == -1 else c(r / 2 ** (k + 1)) - c(r / 2**k)


@pytest.mark.parametrize("N,K", [(1, 2), (4, 4), (16, 6), (64, 8), (100, 8)])
def test_required_kmax(N, K):
    # smallest K with 9/32 * 2^(K+1) >= sqrt(2) N, worked by hand
    assert required_kmax(N) == K


def test_chi_and_rho_values():
    assert chi(0.0) == 1.0 and chi(9 / 32) == 1.0 and chi(0.5) == 0.0
    for k in (-1, 0, 3):
        for r in (0.1, 0.3, 0.45, 1.7, 3.0, 7.9):
            assert math.isclose(float(rho(k, r)), _rho(k, r), abs_tol=1e-15)
    assert float(smooth_step(0.5)) == 0.5


@pytest.mark.parametrize("N", [1, 4, 13, 32])
def test_partition_of_unity(N):
    part = partition_for(N)
    assert np.max(np.abs(part.blocks.sum(axis=0) - 1.0)) < 1e-12


def test_block_supports():
    part = partition_for(16)
    r = np.sqrt(part.lattice.norm2)
    for k, (lo, hi) in zip(part.ks, part.supports()):
        b = part.blocks[k + 1]
        assert np.all(b[(r < lo) | (r >= hi)] == 0)


def test_partition_rejects_short_cover():
    with pytest.raises(ValueError):
        DyadicPartition(Lattice(16), 3)


def test_single_mode_norms():
    lat = Lattice(8)
    w = (3, 4)  # |w| = 5
    u = lat.mode(w, 0.5)  # cos(2 pi w.x)
    bn = block_norms(u, lat, math.inf)
    want = np.array([_rho(k, 5.0) for k in range(-1, required_kmax(8) + 1)])
    assert np.allclose(bn, want, atol=1e-12)
    assert np.allclose(block_norms(u, lat, 2.0), want / math.sqrt(2), atol=1e-12)
    alpha = -0.7
    h = max(2 ** (k * alpha) * want[k + 1] for k in range(-1, required_kmax(8) + 1))
    assert math.isclose(float(holder_norm(u, lat, alpha)), h, rel_tol=1e-12)
    l1 = sum(2 ** (k * alpha) * want[k + 1] for k in range(-1, required_kmax(8) + 1))
    assert math.isclose(float(besov_norm(u, lat, alpha, math.inf, 1.0)), l1, rel_tol=1e-12)


def test_constant_field_norm():
    lat = Lattice(5)
    assert math.isclose(float(holder_norm(lat.mode((0, 0), 2.5), lat, -0.3)), 2.5 * 2**0.3, rel_tol=1e-14)


def test_besov_rejects_bad_indices():
    lat = Lattice(3)
    with pytest.raises(ValueError):
        besov_norm(lat.zeros(), lat, 0.0, 0.5, 1.0)


def test_lp_block_sum(rng):
    lat = Lattice(9)
    u = random_field(lat, rng)
    part = partition_for(9)
    assert np.allclose(sum(lp_block(u, k, lat, part) for k in part.ks), u, atol=1e-14)
    with pytest.raises(IndexError):
        part.block(u, part.K_max + 1)


def test_bony_reconstruction(rng):
    lat = Lattice(12)
    u, v = random_field(lat, rng), random_field(lat, rng)
    a, b, c = bony_parts(u, v, lat)
    p = lat.product(u, v)
    assert np.max(np.abs(a + b + c - p)) < 1e-12 * np.max(np.abs(p))
    assert np.allclose(a, paraproduct(u, v, lat), atol=1e-14)
    assert np.allclose(b, paraproduct(v, u, lat), atol=1e-14)
    assert np.allclose(c, resonant(u, v, lat), atol=1e-14)


def test_block_products_match_frequency_side_cutoffs(rng):
    lat = Lattice(4)
    u, v = random_field(lat, rng), random_field(lat, rng)
    assert np.max(np.abs(resonant(u, v, lat) - sim_restricted_convolution(u, v, lat, "sim"))) < 1e-12
    assert np.max(np.abs(paraproduct(u, v, lat) - sim_restricted_convolution(u, v, lat, "precsim"))) < 1e-12


def test_paraproduct_of_constant(rng):
    lat = Lattice(6)
    v = random_field(lat, rng)
    one = lat.mode((0, 0), 1.0)
    # the constant sits in the ball block, so 1 < v drops blocks -1 and 0 of v
    part = partition_for(6)
    want = v - part.blocks[0] * v - part.blocks[1] * v
    assert np.allclose(paraproduct(one, v, lat), want, atol=1e-13)


def test_products_are_real(rng):
    lat = Lattice(7)
    u, v = random_field(lat, rng), random_field(lat, rng)
    for x in (paraproduct(u, v, lat), resonant(u, v, lat), commutator_CPR(u, v, u, lat)):
        assert lat.hermitian_defect(x) < 1e-13


def test_commutator_definition(rng):
    lat = Lattice(6)
    f, g, h = (random_field(lat, rng) for _ in range(3))
    want = resonant(paraproduct(f, g, lat), h, lat) - lat.product(f, resonant(g, h, lat))
    assert np.allclose(commutator_CPR(f, g, h, lat), want)
