"""Deterministic Keller-Segel stepping, the regularized mild solve and the paracontrolled iteration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .enhancement import Enhancement
from .littlewood_paley import DyadicPartition, _part, commutator_CPR, holder_norm, paraproduct, resonant
from .spectral_core import (
    Lattice,
    divergence,
    duhamel_accumulate,
    grad_poisson,
    phi1,
    trapezoid_weights,
)

BLOWUP = 1e6


class BlowUpError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, msg: str, residuals: Sequence[float]):
        super().__init__(msg)
        self.residuals = list(residuals)


def drift(rho: np.ndarray, lat: Lattice) -> np.ndarray:
    """``div(rho grad Phi_rho)`` with alias-free products."""
    return divergence(lat.product(rho[..., None, :, :], grad_poisson(rho, lat)), lat)


def _guard(rho: np.ndarray, lat: Lattice, t: float):
    sup = float(np.max(np.abs(lat.to_grid(rho))))
    if not math.isfinite(sup) or sup > BLOWUP:
        raise BlowUpError(f"sup norm {sup:.3e} exceeds {BLOWUP:.0e} at t={t:.6g}")


def _weights(lat: Lattice, dt: float, rule: str):
    if rule == "left":
        return phi1(lat.lap, dt), None
    if rule == "trapezoid":
        return trapezoid_weights(lat.lap, dt)
    raise ValueError(f"unknown quadrature rule {rule!r}")


def _picard_step(v_prev, rho_prev, f_prev, shift_next, decay, wl, wr, lat, tol, max_iter, damping=0.5):
    """Solve ``v = decay v_prev + wl f(rho_prev) + wr f(v + shift_next)`` by damped Picard."""
    base = decay * v_prev + wl * f_prev
    if wr is None:
        return base, [0.0]
    v = base + wr * f_prev
    res_hist: list[float] = []
    theta = 1.0
    for _ in range(max_iter):
        new = base + wr * drift(v + shift_next, lat)
        res = float(lat.l2_norm(new - v))
        if res_hist and res > res_hist[-1]:
            theta = damping
        v = v + theta * (new - v)
        res_hist.append(res)
        if res <= tol:
            return v, res_hist
    raise ConvergenceError(f"Picard iteration stalled at residual {res_hist[-1]:.3e}", res_hist)


def deterministic_ks(
    rho0: np.ndarray, T: float, steps: int, lat: Lattice, rule: Literal["left", "trapezoid"] = "left",
    tol: float = 1e-13, max_iter: int = 50,
) -> np.ndarray:
    """Path ``rho(t_0..t_M)`` of ``d_t rho = Laplace rho + div(rho grad Phi_rho)``.

    One exponential-integrator step per grid interval; the left rule is
    explicit, the trapezoid rule is solved by damped Picard iteration.
    """
    if steps < 1:
        raise ValueError("need at least one step")
    dt = T / steps
    decay = np.exp(-dt * lat.lap)
    wl, wr = _weights(lat, dt, rule)
    out = lat.zeros(steps + 1)
    out[0] = rho0
    for i in range(steps):
        f = drift(out[i], lat)
        out[i + 1], _ = _picard_step(out[i], out[i], f, 0.0, decay, wl, wr, lat, tol, max_iter)
        _guard(out[i + 1], lat, (i + 1) * dt)
    return out


@dataclass
class SolverState:
    rho: np.ndarray
    w: np.ndarray | None = None
    w_prime: np.ndarray | None = None
    w_sharp: np.ndarray | None = None
    residuals: list[float] = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def solve_rho_delta(
    rho0: np.ndarray,
    ti: np.ndarray,
    tl: np.ndarray,
    T: float,
    lat: Lattice,
    rule: Literal["left", "trapezoid"] = "left",
    tol: float = 1e-10,
    max_iter: int = 50,
) -> SolverState:
    """Mild solve ``rho = P rho0 + div I[rho grad Phi_rho] - tl + ti`` step by step.

    With ``v = rho + tl - ti`` the relation reads ``v = P rho0 + div I[rho grad Phi_rho]``,
    advanced with the same exponential rule as :func:`duhamel_accumulate`.
    """
    steps = ti.shape[0] - 1
    if tl.shape != ti.shape:
        raise ValueError("ti and tl grids differ")
    dt = T / steps
    decay = np.exp(-dt * lat.lap)
    wl, wr = _weights(lat, dt, rule)
    shift = ti - tl
    rho = lat.zeros(steps + 1)
    rho[0] = rho0 + shift[0]
    v = np.array(rho0, dtype=complex)
    hist: list[float] = []
    for i in range(steps):
        f = drift(rho[i], lat)
        v, h = _picard_step(v, rho[i], f, shift[i + 1], decay, wl, wr, lat, tol, max_iter)
        hist.append(h[-1])
        rho[i + 1] = v + shift[i + 1]
        _guard(rho[i + 1], lat, (i + 1) * dt)
    return SolverState(rho=rho, residuals=hist, meta={"mode": "direct", "rule": rule})


# ---------------------------------------------------------------------------
# paracontrolled route


def _I(f: np.ndarray, dt: float, lat: Lattice, rule: str) -> np.ndarray:
    """Duhamel integral along the time axis 0."""
    return duhamel_accumulate(f, dt, lat, rule)


def _vec_para(a: np.ndarray, b: np.ndarray, lat: Lattice, part: DyadicPartition) -> np.ndarray:
    """Componentwise paraproduct with broadcasting over the component axis."""
    return paraproduct(a, b, lat, part)


@dataclass
class _Noise:
    ti: np.ndarray
    ty: np.ndarray
    tp: np.ndarray
    tc: np.ndarray
    gti: np.ndarray  # grad Phi_ti, (t, j, L, L)
    gty: np.ndarray
    dIti: np.ndarray  # grad I[ti], (t, k, L, L)
    hIPti: np.ndarray  # d_k d_j I[Phi_ti], (t, k, j, L, L)


def _prepare(enh: Enhancement, dt: float, lat: Lattice, rule: str) -> _Noise:
    ti, ty = enh.ti, enh.ty
    Iti = _I(ti, dt, lat, rule)
    D, G = lat.deriv, lat.G
    return _Noise(
        ti=ti,
        ty=ty,
        tp=enh.tp,
        tc=enh.tc,
        gti=grad_poisson(ti, lat),
        gty=grad_poisson(ty, lat),
        dIti=D * Iti[:, None],
        hIPti=D[:, None] * G[None, :] * Iti[:, None, None],
    )


def omega_sharp(u, u_prime, u_sharp, X: _Noise, dt: float, lat: Lattice, rule: str, part: DyadicPartition):
    """Vector field ``Omega#(u)`` (component axis 1), including the commutator remainder."""
    ti, ty, gti = X.ti, X.ty, X.gti
    s = u + ty
    g_u = grad_poisson(u, lat)
    g_s = grad_poisson(s, lat)
    ti_ = ti[:, None]
    ty_ = ty[:, None]
    u_ = u[:, None]
    out = lat.product(s[:, None], g_s) + X.tp
    out = out + _vec_para(gti, ty_, lat, part) + _vec_para(ty_, gti, lat, part) + _vec_para(ti_, X.gty, lat, part)
    out = out + _vec_para(u_, gti, lat, part) + _vec_para(gti, u_, lat, part) + _vec_para(ti_, g_u, lat, part)
    return out + remainder_P(u_prime, u_sharp, X, dt, lat, rule, part)


def remainder_P(u_prime, u_sharp, X: _Noise, dt, lat, rule, part):
    """``P(u, X)``: equals ``u o grad Phi_ti + ti o grad Phi_u`` when the Ansatz holds."""
    ti, gti = X.ti, X.gti
    # scalar u' < d_k I[ti] and vector u' < d_k d_j I[Phi ti], summed over k
    up_dI = paraproduct(u_prime, X.dIti, lat, part).sum(axis=1)  # (t, L, L)
    up_h = paraproduct(u_prime[:, :, None], X.hIPti, lat, part).sum(axis=1)  # (t, j, L, L)
    # div I[u' < ti] and its elliptic companion grad div Phi_{I[u' < ti]}
    para_ti = paraproduct(u_prime, ti[:, None], lat, part)  # (t, k, L, L)
    I_para = _I(para_ti, dt, lat, rule)
    div_I = divergence(I_para, lat)
    grad_div_Phi = grad_poisson(div_I, lat)
    first = np.zeros_like(gti)
    for k in range(2):
        first = first + commutator_CPR(u_prime[:, k, None], X.dIti[:, k, None], gti, lat, part)
        first = first + commutator_CPR(u_prime[:, k, None], X.hIPti[:, k], ti[:, None], lat, part)
    first = first + resonant((u_sharp + div_I - up_dI)[:, None], gti, lat, part)
    first = first + resonant(grad_poisson(u_sharp, lat) + grad_div_Phi - up_h, ti[:, None], lat, part)
    # u' . tc : sum_k u'^k tc^{kj}
    first = first + lat.product(u_prime[:, :, None], X.tc).sum(axis=1)
    return first


def psi_map(u, u_prime, u_sharp, rho0, X: _Noise, dt, lat, rule, part):
    """One application of the solution map: returns ``(w, w', w#)``."""
    Prho0 = np.exp(-np.arange(u.shape[0])[:, None, None] * dt * lat.lap) * rho0
    w_prime = grad_poisson(u + X.ty, lat)
    Om = omega_sharp(u, u_prime, u_sharp, X, dt, lat, rule, part)
    w_sharp = Prho0 + divergence(_I(Om, dt, lat, rule), lat)
    w = divergence(_I(paraproduct(w_prime, X.ti[:, None], lat, part), dt, lat, rule), lat) + w_sharp
    return w, w_prime, w_sharp


def solve_paracontrolled(
    rho0: np.ndarray,
    enh: Enhancement,
    T: float,
    lat: Lattice,
    rule: Literal["left", "trapezoid"] = "left",
    tol: float = 1e-8,
    max_iter: int = 100,
    eps: float = 0.05,
) -> SolverState:
    """Fixed point of the paracontrolled solution map over the whole time grid.

    Starts from ``w' = grad Phi_{P rho0}``, ``w# = P rho0`` and stops when the
    largest ``C^{-eps}`` change of ``(w, w', w#)`` drops below ``tol``.
    """
    steps = enh.ti.shape[0] - 1
    dt = T / steps
    part = _part(lat, None)
    X = _prepare(enh, dt, lat, rule)
    Prho0 = np.exp(-np.arange(steps + 1)[:, None, None] * dt * lat.lap) * rho0
    u_sharp = Prho0.copy()
    u_prime = grad_poisson(Prho0, lat)
    u = Prho0.copy()
    res_hist: list[float] = []
    rising = 0
    for it in range(max_iter):
        w, wp, ws = psi_map(u, u_prime, u_sharp, rho0, X, dt, lat, rule, part)
        r = max(
            float(np.max(holder_norm(w - u, lat, -eps, part))),
            float(np.max(holder_norm(wp - u_prime, lat, -eps, part, vector=True))),
            float(np.max(holder_norm(ws - u_sharp, lat, -eps, part))),
        )
        rising = rising + 1 if res_hist and r > res_hist[-1] else 0
        res_hist.append(r)
        u, u_prime, u_sharp = w, wp, ws
        if not math.isfinite(r) or rising >= 3:
            raise ConvergenceError("paracontrolled iteration is not contracting", res_hist)
        if r <= tol:
            break
    else:
        raise ConvergenceError(f"no convergence in {max_iter} iterations", res_hist)
    rho = X.ti + X.ty + u
    return SolverState(rho=rho, w=u, w_prime=u_prime, w_sharp=u_sharp, residuals=res_hist,
                       meta={"mode": "paracontrolled", "rule": rule, "iterations": len(res_hist)})


def ansatz_defect(state: SolverState, enh: Enhancement, T: float, lat: Lattice, rule: str = "left") -> float:
    """``max |w - div I[w' < ti] - w#|`` over coefficients."""
    dt = T / (enh.ti.shape[0] - 1)
    part = _part(lat, None)
    rhs = divergence(_I(paraproduct(state.w_prime, enh.ti[:, None], lat, part), dt, lat, rule), lat) + state.w_sharp
    return float(np.max(np.abs(state.w - rhs)))


# ---------------------------------------------------------------------------
# time-weighted norms (diagnostics only)


def weighted_norms(path: np.ndarray, dt: float, lat: Lattice, alpha: float, eta: float = 0.0,
                   kappa: float = 0.25, part: DyadicPartition | None = None) -> dict:
    """Grid versions of the blow-up weighted sup norm and its time-Hoelder seminorm.

    ``sup = max_i (1 ^ t_i)^eta ||f(t_i)||_{C^alpha}`` and
    ``hoelder = max_{i<j} (1 ^ t_i)^eta ||f(t_j) - f(t_i)||_{C^{alpha - 2 kappa}} / (t_j - t_i)^kappa``.
    """
    part = _part(lat, part)
    t = np.arange(path.shape[0]) * dt
    w = np.minimum(1.0, t) ** eta
    sup = float(np.max(w * holder_norm(path, lat, alpha, part)))
    hq = 0.0
    for i in range(path.shape[0] - 1):
        d = holder_norm(path[i + 1 :] - path[i], lat, alpha - 2 * kappa, part)
        hq = max(hq, float(np.max(w[i] * d / (t[i + 1 :] - t[i]) ** kappa)))
    return {"sup": sup, "hoelder": hq, "alpha": alpha, "eta": eta, "kappa": kappa}


# ---------------------------------------------------------------------------
# Cauchy-in-delta


def cauchy_in_delta(rho_paths: dict, lat: Lattice, eps: float = 0.05) -> dict:
    """``||rho^{2 delta}(T) - rho^{delta}(T)||_{C^{-1-eps}}`` per sample from final states.

    ``rho_paths`` maps ``delta`` to an array of final-time fields with a sample axis.
    """
    deltas = sorted(rho_paths, reverse=True)
    rows = {}
    for d in deltas:
        if 2 * d in rho_paths:
            diff = rho_paths[2 * d] - rho_paths[d]
            vals = holder_norm(diff, lat, -1.0 - eps)
            rows[d] = np.atleast_1d(vals)
    return rows
