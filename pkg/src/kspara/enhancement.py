"""Canonical and renormalized noise enhancement: ty, tl, tp, tc and Monte Carlo moment estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np

from .littlewood_paley import DyadicPartition, _part, resonant
from .noise import Heterogeneity, Mollifier, mollifier_array, ou_weight
from .spectral_core import TWO_PI, Lattice, divergence, duhamel_accumulate, grad_poisson, phi1, solve_poisson

FOUR_PI2 = TWO_PI**2


# ---------------------------------------------------------------------------
# ty


def ti_grad_phi_ti(ti: np.ndarray, lat: Lattice) -> np.ndarray:
    """``ti grad Phi_ti`` (vector, component axis before the lattice axes)."""
    return lat.product(ti[..., None, :, :], grad_poisson(ti, lat))


def canonical_ty(ti: np.ndarray, dt: float, lat: Lattice, rule: str = "left") -> np.ndarray:
    """``div I[ti grad Phi_ti]`` along the path; the time axis of ``ti`` is ``-3``."""
    forcing = divergence(ti_grad_phi_ti(ti, lat), lat)
    f = np.moveaxis(forcing, -3, 0)
    return np.moveaxis(duhamel_accumulate(f, dt, lat, rule), 0, -3)


def renormalized_ty(ty_can: np.ndarray, tl: np.ndarray) -> np.ndarray:
    if ty_can.shape[-3:] != tl.shape[-3:]:
        raise ValueError("time grids differ")
    return ty_can - tl


# ---------------------------------------------------------------------------
# tl


@dataclass
class _PairSet:
    """Contracted frequency pairs ``(w1, w2)`` with their output index and rates."""

    out: tuple[np.ndarray, np.ndarray]
    a: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    pref: np.ndarray
    S: np.ndarray  # (n_pairs,) or (M, n_pairs)

    @property
    def b(self) -> np.ndarray:
        return self.a1 + self.a2


def _prefactor(w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """``(2 pi i w . G(w2)) * sum_j (2 pi i)^2 w1^j w2^j`` for integer frequency rows."""
    w = w1 + w2
    d12 = np.sum(w1 * w2, axis=-1).astype(float)
    dw2 = np.sum(w * w2, axis=-1).astype(float)
    n2 = np.sum(w2 * w2, axis=-1).astype(float)
    return (-dw2 / n2) * (-FOUR_PI2 * d12)


def _finish_pairs(w1, w2, S, lat: Lattice) -> _PairSet:
    w = w1 + w2
    keep = (
        np.all(np.abs(w) <= lat.N, axis=1)
        & (np.sum(w1 * w2, axis=1) != 0)  # orthogonal pairs carry a zero prefactor
        & np.any(w2 != 0, axis=1)
        & np.any(w != 0, axis=1)
    )
    w1, w2, w = w1[keep], w2[keep], w[keep]
    S = S[..., keep]
    n2 = lambda v: FOUR_PI2 * np.sum(v * v, axis=1).astype(float)
    return _PairSet((w[:, 0] + lat.N, w[:, 1] + lat.N), n2(w), n2(w1), n2(w2), _prefactor(w1, w2), S)


def _sparse_pairs(sig: np.ndarray, phi2: np.ndarray, lat: Lattice, thr: float) -> _PairSet:
    """Pairs generated by the sparse support of ``sigma``; ``sig`` has shape ``(T, L, L)``."""
    N = lat.N
    mag = np.max(np.abs(sig), axis=0)
    supp = np.argwhere(mag > thr * max(mag.max(), 1e-300)) - N
    mi = np.argwhere(phi2 > 0)
    m = mi - N
    p2 = phi2[mi[:, 0], mi[:, 1]]
    W1, W2, S = [], [], []
    for n1 in supp:
        s1 = sig[:, n1[0] + N, n1[1] + N]
        for n2 in supp:
            s2 = sig[:, n2[0] + N, n2[1] + N]
            w1 = m + n1
            w2 = n2 - m
            ok = np.all(np.abs(w1) <= N, axis=1) & np.all(np.abs(w2) <= N, axis=1)
            W1.append(w1[ok])
            W2.append(w2[ok])
            S.append((s1 * s2)[:, None] * p2[ok][None, :])
    return _finish_pairs(np.concatenate(W1), np.concatenate(W2), np.concatenate(S, axis=1), lat)


def _dense_pairs(sig: np.ndarray, phi2: np.ndarray, lat: Lattice) -> _PairSet:
    """All lattice pairs; ``S(w1, w2) = sum_m sig(w1 - m) sig(w2 + m) phi2(m)`` by matrix products."""
    N, L = lat.N, lat.M
    f = lat.freqs.reshape(-1, 2)
    mi = np.argwhere(phi2 > 0)
    m = mi - N
    p2 = phi2[mi[:, 0], mi[:, 1]]
    d1 = f[:, None, :] - m[None, :, :]  # w1 - m
    d2 = f[:, None, :] + m[None, :, :]  # w2 + m
    in1 = np.all(np.abs(d1) <= N, axis=-1)
    in2 = np.all(np.abs(d2) <= N, axis=-1)
    Ss = []
    for s in sig:
        A = np.where(in1, s[np.clip(d1[..., 0] + N, 0, L - 1), np.clip(d1[..., 1] + N, 0, L - 1)], 0.0)
        B = np.where(in2, s[np.clip(d2[..., 0] + N, 0, L - 1), np.clip(d2[..., 1] + N, 0, L - 1)], 0.0)
        Ss.append(((A * p2) @ B.T).reshape(-1))
    S = np.stack(Ss)
    i1, i2 = np.meshgrid(np.arange(f.shape[0]), np.arange(f.shape[0]), indexing="ij")
    return _finish_pairs(f[i1.reshape(-1)], f[i2.reshape(-1)], S, lat)


def contraction_pairs(sigma: Heterogeneity, moll: Mollifier | None, lat: Lattice, path: str = "auto", thr: float = 1e-15):
    sig = sigma.coeffs[:1] if sigma.is_constant_in_time else sigma.coeffs[:-1]
    phi2 = mollifier_array(moll, lat) ** 2
    if path == "auto":
        mag = np.max(np.abs(sig), axis=0)
        k = int(np.sum(mag > thr * max(mag.max(), 1e-300)))
        path = "sparse" if k * k * int(np.sum(phi2 > 0)) <= 4_000_000 else "dense"
    if path == "sparse":
        return _sparse_pairs(sig, phi2, lat, thr)
    return _dense_pairs(sig, phi2, lat)


def _kernel_integral(a, b, t):
    """``int_0^t (e^{-a s} - e^{-b s}) / (b - a) ds`` for ``a != b``, both positive."""
    return (phi1(a, t) - phi1(b, t)) / (b - a)


def counterterm_tl(
    sigma: Heterogeneity,
    moll: Mollifier | None,
    lat: Lattice,
    scheme: Literal["exact", "discrete"] = "exact",
    ti_scheme: str = "exact-variance",
    rule: str = "left",
    steps: Sequence[int] | None = None,
    path: str = "auto",
) -> np.ndarray:
    """Deterministic counterterm ``tl(t_n)`` on the grid of ``sigma``.

    ``scheme="exact"`` integrates the contraction formula exactly for sigma
    piecewise constant in time.  ``scheme="discrete"`` returns the exact
    expectation of the discrete ``div I[ti grad Phi_ti]`` produced by
    :func:`noise.stochastic_convolution` with ``ti_scheme`` and the Duhamel
    ``rule``; it is the target of Monte Carlo checks.
    """
    M, dt = sigma.M, sigma.dt
    steps = list(range(M + 1)) if steps is None else list(steps)
    out = lat.zeros(len(steps))
    # spatially constant sigma produces only w = 0 pairs, which are dropped below
    P = contraction_pairs(sigma, moll, lat, path)
    if P.pref.size == 0:
        return out
    a, b = P.a, P.b
    const = P.S.shape[0] == 1 and sigma.is_constant_in_time
    if scheme == "exact" and const:
        S = P.S[0]
        for r, n in enumerate(steps):
            val = P.pref * S * _kernel_integral(a, b, n * dt)
            np.add.at(out[r], P.out, val)
        return out
    S_of = (lambda i: P.S[0]) if P.S.shape[0] == 1 else (lambda i: P.S[i])
    want = {n: r for r, n in enumerate(steps)}
    if scheme == "exact":
        ea, eb = np.exp(-a * dt), np.exp(-b * dt)
        fa, fb = phi1(a, dt), phi1(b, dt)
        Aa = np.zeros(a.shape, dtype=complex)
        Ab = np.zeros(a.shape, dtype=complex)
        for n in range(M + 1):
            if n in want:
                np.add.at(out[want[n]], P.out, P.pref * (Aa - Ab) / (b - a))
            if n < M:
                Sn = S_of(n)
                Aa = ea * Aa + fa * Sn
                Ab = eb * Ab + fb * Sn
        return out
    if scheme == "discrete":
        if ti_scheme == "exact-variance":
            ww = ou_weight(P.a1, dt) * ou_weight(P.a2, dt)
        else:
            ww = np.ones_like(P.a1)
        eb, ea = np.exp(-b * dt), np.exp(-a * dt)
        if rule == "left":
            wl, wr = phi1(a, dt), np.zeros_like(a)
        else:
            from .spectral_core import trapezoid_weights

            wl, wr = trapezoid_weights(a, dt)
        C = np.zeros(a.shape, dtype=complex)
        Y = np.zeros(a.shape, dtype=complex)
        for n in range(M + 1):
            if n in want:
                np.add.at(out[want[n]], P.out, P.pref * ww * Y)
            if n < M:
                Cn1 = eb * C + dt * S_of(n)
                Y = ea * Y + wl * C + wr * Cn1
                C = Cn1
        return out
    raise ValueError(f"unknown scheme {scheme!r}")


# ---------------------------------------------------------------------------
# tp and tc


def diagram_tp(ti: np.ndarray, ty: np.ndarray, lat: Lattice, part: DyadicPartition | None = None) -> np.ndarray:
    """``ty o d_j Phi_ti + d_j Phi_ty o ti`` for ``j = 1, 2`` (component axis ``-3``)."""
    part = _part(lat, part)
    return resonant(ty[..., None, :, :], grad_poisson(ti, lat), lat, part) + resonant(
        grad_poisson(ty, lat), ti[..., None, :, :], lat, part
    )


diagram_tp_can = diagram_tp


def diagram_tc(
    ti: np.ndarray,
    dt: float,
    lat: Lattice,
    rule: str = "left",
    steps: Sequence[int] | None = None,
    part: DyadicPartition | None = None,
    G_sign: float = 1.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``tc^{kj} = d_k I[ti] o d_j Phi_ti + d_k d_j I[Phi_ti] o ti``.

    Returns ``(tc, first, second)`` with axes ``(..., time, k, j, L, L)``
    evaluated at the requested step indices.  ``G_sign=-1`` flips the
    elliptic multiplier (used to check linearity in ``G``).
    """
    part = _part(lat, part)
    Iti = np.moveaxis(duhamel_accumulate(np.moveaxis(ti, -3, 0), dt, lat, rule), 0, -3)
    steps = list(range(ti.shape[-3])) if steps is None else list(steps)
    return tc_from_pair(ti[..., steps, :, :], Iti[..., steps, :, :], lat, part, G_sign)


def tc_from_pair(ti: np.ndarray, Iti: np.ndarray, lat: Lattice, part: DyadicPartition | None = None,
                 G_sign: float = 1.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``tc`` and its two summands from values of ``ti`` and ``I[ti]`` at common times."""
    part = _part(lat, part)
    D = lat.deriv
    Gs = G_sign * lat.G
    dI = D * Iti[..., None, :, :]  # (..., k, L, L)
    dPhi = Gs * ti[..., None, :, :]  # (..., j, L, L)
    first = resonant(dI[..., :, None, :, :], dPhi[..., None, :, :, :], lat, part)
    # d_k d_j I[Phi ti] = d_k (G^j I[ti])
    hess = D[:, None] * Gs[None, :] * Iti[..., None, None, :, :]
    second = resonant(hess, ti[..., None, None, :, :], lat, part)
    return first + second, first, second


# ---------------------------------------------------------------------------
# container and moments


@dataclass
class Enhancement:
    ti: np.ndarray
    ty: np.ndarray
    tp: np.ndarray
    tc: np.ndarray
    tl: np.ndarray
    ty_can: np.ndarray
    meta: dict = field(default_factory=dict)


def build_enhancement(
    ti: np.ndarray,
    tl: np.ndarray,
    dt: float,
    lat: Lattice,
    rule: str = "left",
    meta: dict | None = None,
) -> Enhancement:
    """Full renormalized model along the path of a single sample."""
    part = _part(lat, None)
    ty_can = canonical_ty(ti, dt, lat, rule)
    ty = renormalized_ty(ty_can, tl)
    tp = diagram_tp(ti, ty, lat, part)
    tc, _, _ = diagram_tc(ti, dt, lat, rule, part=part)
    return Enhancement(ti, ty, tp, tc, tl, ty_can, dict(meta or {}))


def moment_stats(values: Sequence[float], p: float = 1.0) -> tuple[float, float]:
    """Sample mean of ``values**p`` and its jackknife standard error."""
    x = np.asarray(values, dtype=float) ** p
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples")
    mean = math.fsum(x) / n
    loo = (mean * n - x) / (n - 1)
    se = math.sqrt((n - 1) / n * math.fsum((loo - loo.mean()) ** 2))
    return mean, se


def estimate_moment_norm(
    sampler: Callable[[int], float], seeds: Sequence[int], p: float = 2.0
) -> tuple[float, float]:
    """``E ||X||^p`` estimated from ``sampler(seed)`` norm values, with jackknife SE."""
    return moment_stats([sampler(s) for s in seeds], p)
