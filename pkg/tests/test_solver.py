import numpy as np
import pytest
from scipy import optimize

from kspara import solver
from kspara.enhancement import build_enhancement, counterterm_tl
from kspara.littlewood_paley import holder_norm, partition_for
from kspara.noise import make_heterogeneity, mollifier_symbol, sample_increments, stochastic_convolution
from kspara.solver import (
    BlowUpError,
    ConvergenceError,
    _prepare,
    ansatz_defect,
    cauchy_in_delta,
    deterministic_ks,
    drift,
    psi_map,
    solve_paracontrolled,
    solve_rho_delta,
    weighted_norms,
)
from kspara.spectral_core import Lattice, trapezoid_weights

from conftest import random_field


def _rho0(lat):
    return lat.mode((0, 0), 1.0) + lat.mode((1, 0), 0.25) + lat.mode((0, 2), 0.1j)


def _model(lat, T, M, delta=0.25, seed=3, sigma="1;0.5:1:0"):
    sig = make_heterogeneity("trig", sigma, T, M, lat)
    moll = mollifier_symbol(delta)
    ti = stochastic_convolution(sample_increments(lat, T / M, M, seed), sig, moll, lat)
    return ti, counterterm_tl(sig, moll, lat)


def test_constant_density_is_stationary():
    lat = Lattice(6)
    path = deterministic_ks(lat.mode((0, 0), 2.0), 0.1, 5, lat)
    assert np.max(np.abs(path - lat.mode((0, 0), 2.0))) < 1e-15


def test_mass_conservation(rng):
    lat = Lattice(6)
    rho0 = 0.1 * random_field(lat, rng, decay=2.0)
    rho0[6, 6] = 1.0
    path = deterministic_ks(rho0, 0.05, 10, lat, "trapezoid")
    assert np.max(np.abs(lat.mean(path) - 1.0)) < 1e-14


def test_deterministic_refinement():
    lat = Lattice(8)
    rho0 = lat.mode((0, 0), 1.0) + lat.mode((1, 0), 0.25)
    ref = deterministic_ks(rho0, 0.1, 320, lat)[-1]
    coarse = deterministic_ks(rho0, 0.1, 80, lat)[-1]
    mid = deterministic_ks(rho0, 0.1, 160, lat)[-1]
    rel = lambda x: float(lat.l2_norm(x - ref) / lat.l2_norm(ref))  # noqa: E731
    assert rel(coarse) <= 1e-4
    assert np.log2(float(lat.l2_norm(coarse - ref)) / float(lat.l2_norm(mid - ref))) >= 0.9


def test_blowup_guard(monkeypatch):
    lat = Lattice(4)
    monkeypatch.setattr(solver, "BLOWUP", 0.5)
    with pytest.raises(BlowUpError):
        deterministic_ks(lat.mode((0, 0), 1.0), 0.01, 2, lat)


def test_steps_must_be_positive():
    lat = Lattice(2)
    with pytest.raises(ValueError):
        deterministic_ks(lat.zeros(), 0.1, 0, lat)


@pytest.mark.parametrize("rule", ["left", "trapezoid"])
def test_direct_route_without_noise_is_deterministic(rule):
    lat = Lattice(8)
    M = 6
    zero = lat.zeros(M + 1)
    rho0 = _rho0(lat)
    a = solve_rho_delta(rho0, zero, zero, 0.05, lat, rule).rho
    b = deterministic_ks(rho0, 0.05, M, lat, rule)
    assert np.max(np.abs(a - b)) < 1e-9


def test_direct_route_matches_dense_solve():
    # the same trapezoid equations for both steps solved at once by a dense root finder
    lat = Lattice(4)
    T, M = 0.02, 2
    ti, tl = _model(lat, T, M)
    rho0 = _rho0(lat)
    got = solve_rho_delta(rho0, ti, tl, T, lat, "trapezoid", tol=1e-14).rho
    dt = T / M
    decay = np.exp(-dt * lat.lap)
    wl, wr = trapezoid_weights(lat.lap, dt)
    shift = ti - tl
    n = lat.M * lat.M

    def unpack(x):
        z = x[: 2 * n] + 1j * x[2 * n :]
        return z.reshape(2, *lat.shape)

    def F(x):
        v = unpack(x)
        vs = [rho0, v[0], v[1]]
        rho = [rho0 + shift[0], v[0] + shift[1], v[1] + shift[2]]
        res = [vs[i + 1] - decay * vs[i] - wl * drift(rho[i], lat) - wr * drift(rho[i + 1], lat) for i in range(2)]
        r = np.stack(res).ravel()
        return np.concatenate([r.real, r.imag])

    x0 = np.concatenate([np.zeros(2 * n), np.zeros(2 * n)])
    x0[: 2 * n] = np.concatenate([rho0.real.ravel()] * 2)
    x0[2 * n :] = np.concatenate([rho0.imag.ravel()] * 2)
    sol = optimize.root(F, x0, method="hybr", tol=1e-14)
    assert sol.success
    dense = unpack(sol.x) + shift[1:]
    assert np.max(np.abs(got[1:] - dense)) < 1e-9


def test_direct_route_conserves_mass():
    lat = Lattice(8)
    T, M = 0.05, 5
    ti, tl = _model(lat, T, M)
    rho = solve_rho_delta(_rho0(lat), ti, tl, T, lat).rho
    assert np.max(np.abs(lat.mean(rho) - 1.0)) < 1e-10


def test_grid_mismatch():
    lat = Lattice(3)
    with pytest.raises(ValueError):
        solve_rho_delta(lat.zeros(), lat.zeros(3), lat.zeros(4), 0.1, lat)


def test_paracontrolled_zero_enhancement():
    lat = Lattice(8)
    T, M = 0.05, 5
    zero = lat.zeros(M + 1)
    enh = build_enhancement(zero, zero, T / M, lat)
    st = solve_paracontrolled(_rho0(lat), enh, T, lat)
    assert np.max(np.abs(st.rho - deterministic_ks(_rho0(lat), T, M, lat))) < 1e-9


def test_paracontrolled_fixed_point_and_identities():
    lat = Lattice(8)
    T, M = 0.05, 6
    ti, tl = _model(lat, T, M)
    enh = build_enhancement(ti, tl, T / M, lat)
    rho0 = _rho0(lat)
    st = solve_paracontrolled(rho0, enh, T, lat)
    part = partition_for(8)
    X = _prepare(enh, T / M, lat, "left")
    w, wp, ws = psi_map(st.w, st.w_prime, st.w_sharp, rho0, X, T / M, lat, "left", part)
    assert float(np.max(holder_norm(w - st.w, lat, -0.05, part))) <= 1e-8
    assert ansatz_defect(st, enh, T, lat) <= 1e-9
    assert np.max(np.abs(st.rho - (enh.ti + enh.ty + st.w))) <= 1e-9
    direct = solve_rho_delta(rho0, ti, tl, T, lat).rho
    assert float(holder_norm(direct[-1] - st.rho[-1], lat, -0.05)) <= 1e-6
    assert np.max(np.abs(lat.mean(st.rho) - 1.0)) < 1e-10


def test_left_rule_iteration_terminates_after_steps_plus_one():
    # the explicit rule makes the map triangular in time
    lat = Lattice(6)
    T, M = 0.5, 4
    zero = lat.zeros(M + 1)
    enh = build_enhancement(zero, zero, T / M, lat)
    rho0 = lat.mode((0, 0), 1.0) + lat.mode((1, 0), 40.0)
    st = solve_paracontrolled(rho0, enh, T, lat)
    assert st.residuals[-1] == 0.0 and len(st.residuals) <= M + 2


def test_paracontrolled_reports_non_contraction():
    lat = Lattice(6)
    T, M = 0.2, 2
    zero = lat.zeros(M + 1)
    enh = build_enhancement(zero, zero, T / M, lat)
    rho0 = lat.mode((0, 0), 1.0) + lat.mode((1, 0), 2000.0)
    with pytest.raises(ConvergenceError) as e:
        solve_paracontrolled(rho0, enh, T, lat, rule="trapezoid", max_iter=40)
    assert len(e.value.residuals) >= 4
    assert e.value.residuals[-1] > e.value.residuals[0]


def test_strong_order_in_time():
    lat = Lattice(8)
    T, Mf = 0.05, 64
    moll = mollifier_symbol(0.25)
    fine = sample_increments(lat, T / Mf, Mf, 5)
    rho0 = _rho0(lat)
    ends = {}
    for M in (8, 16, 32, 64):
        dW = fine.reshape(M, Mf // M, 2, *lat.shape).sum(axis=1)  # coupled coarse increments
        s = make_heterogeneity("trig", "1;0.5:1:0", T, M, lat)
        ti = stochastic_convolution(dW, s, moll, lat)
        ends[M] = solve_rho_delta(rho0, ti, counterterm_tl(s, moll, lat), T, lat).rho[-1]
    d = [float(lat.l2_norm(ends[M] - ends[2 * M])) for M in (8, 16, 32)]
    orders = np.log2(np.array(d[:-1]) / np.array(d[1:]))
    assert np.all(orders >= 0.5)


def test_cauchy_in_delta_helper():
    lat = Lattice(4)
    a = np.stack([_rho0(lat)] * 3)
    rows = cauchy_in_delta({0.5: a, 0.25: a}, lat)
    assert np.all(rows[0.25] == 0) and set(rows) == {0.25}
    b = a.copy()
    b[:, 5, 4] += 0.1
    assert np.all(cauchy_in_delta({0.5: a, 0.25: b}, lat)[0.25] > 0)


def test_weighted_norms():
    lat = Lattice(4)
    M, dt = 4, 0.1
    base = lat.mode((1, 0), 1.0)
    path = np.stack([base] * (M + 1))
    r = weighted_norms(path, dt, lat, 0.0, eta=0.5)
    assert r["hoelder"] == 0.0
    # the weight kills t = 0 and equals sqrt(t) afterwards
    assert r["sup"] == pytest.approx(np.sqrt(0.4) * float(holder_norm(base, lat, 0.0)))
    ramp = np.stack([i * dt * base for i in range(M + 1)])
    q = weighted_norms(ramp, dt, lat, 0.5, kappa=0.25)["hoelder"]
    # largest quotient is on the longest pair for kappa < 1
    assert q == pytest.approx(float(holder_norm(base, lat, 0.0)) * 0.4 ** 0.75)
