"""Truncated Fourier fields on the 2-torus and the linear operators acting on them.

A field is stored as a complex array whose last two axes run over the
frequencies ``omega = (i - N, j - N)`` of the square lattice ``|omega|_inf <= N``.
Any number of leading axes (time, vector components, samples) is allowed and
every operator broadcasts over them.  The Fourier convention is
``u(x) = sum_omega u_hat(omega) exp(2 pi i <omega, x>)``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * np.pi
HERMITIAN_TOL = 1e-12


def fft_workers() -> int:
    """Thread count for transforms, capped by ``KS_PARA_THREADS``."""
    cap = os.environ.get("KS_PARA_THREADS")
    n = os.cpu_count() or 1
    if cap:
        n = max(1, min(n, int(cap)))
    return n


# ---------------------------------------------------------------------------
# scalar multipliers


def heat_multiplier(t: float, omega) -> np.ndarray:
    """Symbol ``exp(-t |2 pi omega|^2)`` of the heat semigroup."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("heat semigroup needs t >= 0")
    w = np.asarray(omega, dtype=float)
    return np.exp(-np.asarray(t) * TWO_PI**2 * np.sum(w * w, axis=-1))


def grad_heat_multiplier(t: float, omega, j: int) -> np.ndarray:
    """``H^j_t(omega) = 2 pi i omega^j exp(-t|2 pi omega|^2)`` times the indicator of ``t >= 0``."""
    w = np.asarray(omega, dtype=float)
    t = np.asarray(t, dtype=float)
    decay = np.exp(-np.where(t >= 0, t, 0.0) * TWO_PI**2 * np.sum(w * w, axis=-1))
    return np.where(t >= 0, 1j * TWO_PI * w[..., j - 1] * decay, 0.0 + 0.0j)


def elliptic_multiplier(omega, j: int) -> np.ndarray:
    """``G^j(omega) = 2 pi i omega^j / |2 pi omega|^2``, set to 0 at the origin."""
    w = np.asarray(omega, dtype=float)
    n2 = np.sum(w * w, axis=-1)
    safe = np.where(n2 > 0, n2, 1.0)
    return np.where(n2 > 0, 1j * w[..., j - 1] / (TWO_PI * safe), 0.0 + 0.0j)


def phi1(a, dt: float) -> np.ndarray:
    """``int_0^dt exp(-a u) du`` evaluated without cancellation (``dt`` at ``a = 0``)."""
    a = np.asarray(a, dtype=float)
    z = a * dt
    small = np.abs(z) < 1e-8
    zs = np.where(small, 1.0, z)
    val = -np.expm1(-zs) / np.where(small, 1.0, a)
    return np.where(small, dt * (1.0 - z / 2.0), val)


def _phi2_series(z: np.ndarray) -> np.ndarray:
    # (e^z - 1 - z)/z^2 = sum z^k/(k+2)!
    out = np.zeros_like(z)
    term = np.full_like(z, 0.5)
    for k in range(12):
        out = out + term
        term = term * z / (k + 3)
    return out


def trapezoid_weights(a, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Weights ``(w_left, w_right)`` of the exponential trapezoid rule.

    ``int_0^dt exp(-a (dt - u)) f(u) du`` is exact for ``f`` affine on the step.
    """
    a = np.asarray(a, dtype=float)
    z = -a * dt
    small = np.abs(z) < 1e-2
    zs = np.where(small, 1.0, z)
    p2 = np.where(small, _phi2_series(np.where(small, z, 0.0)), (np.expm1(zs) - zs) / zs**2)
    p1 = phi1(a, dt) / dt
    return dt * (p1 - p2), dt * p2


# ---------------------------------------------------------------------------
# lattice


@dataclass(frozen=True)
class Lattice:
    """Square frequency lattice ``|omega|_inf <= N`` with its dual spatial grid."""

    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("lattice cutoff must be a positive integer")

    @property
    def M(self) -> int:
        return 2 * self.N + 1

    @property
    def shape(self) -> tuple[int, int]:
        return (self.M, self.M)

    @cached_property
    def k1(self) -> np.ndarray:
        r = np.arange(-self.N, self.N + 1)
        return np.broadcast_to(r[:, None], self.shape).copy()

    @cached_property
    def k2(self) -> np.ndarray:
        r = np.arange(-self.N, self.N + 1)
        return np.broadcast_to(r[None, :], self.shape).copy()

    @cached_property
    def freqs(self) -> np.ndarray:
        """Integer frequencies, shape ``(M, M, 2)``."""
        return np.stack([self.k1, self.k2], axis=-1)

    @cached_property
    def norm2(self) -> np.ndarray:
        """``|omega|^2`` as integers."""
        return self.k1**2 + self.k2**2

    @cached_property
    def lap(self) -> np.ndarray:
        """``|2 pi omega|^2``."""
        return TWO_PI**2 * self.norm2.astype(float)

    @cached_property
    def deriv(self) -> np.ndarray:
        """Symbols of ``d_1, d_2``, shape ``(2, M, M)``."""
        return 1j * TWO_PI * np.stack([self.k1, self.k2]).astype(float)

    @cached_property
    def G(self) -> np.ndarray:
        """Elliptic multipliers ``G^1, G^2``, shape ``(2, M, M)``."""
        return np.stack([elliptic_multiplier(self.freqs, 1), elliptic_multiplier(self.freqs, 2)])

    @cached_property
    def inv_lap(self) -> np.ndarray:
        out = np.zeros(self.shape)
        nz = self.norm2 > 0
        out[nz] = 1.0 / self.lap[nz]
        return out

    @property
    def center(self) -> tuple[int, int]:
        return (self.N, self.N)

    def index(self, omega) -> tuple[int, int]:
        w1, w2 = int(omega[0]), int(omega[1])
        if max(abs(w1), abs(w2)) > self.N:
            raise ValueError(f"frequency {omega} outside lattice N={self.N}")
        return (w1 + self.N, w2 + self.N)

    def zeros(self, *lead: int) -> np.ndarray:
        return np.zeros(tuple(lead) + self.shape, dtype=complex)

    def mode(self, omega, amplitude: complex = 1.0) -> np.ndarray:
        """Real field ``a e(omega) + conj(a) e(-omega)`` (just ``Re a`` at the origin)."""
        c = self.zeros()
        i = self.index(omega)
        ineg = self.index((-omega[0], -omega[1]))
        if i == ineg:
            c[i] = np.real(amplitude)
        else:
            c[i] += amplitude
            c[ineg] += np.conj(amplitude)
        return c

    def points(self, P: int | None = None) -> np.ndarray:
        """Spatial nodes ``x = (a, b)/P``, shape ``(P, P, 2)``."""
        P = self.M if P is None else P
        r = np.arange(P) / P
        return np.stack(np.meshgrid(r, r, indexing="ij"), axis=-1)

    # -- transforms ---------------------------------------------------------

    def to_grid(self, c: np.ndarray, P: int | None = None) -> np.ndarray:
        """Real values on the ``P x P`` grid (``P >= M``) of a Hermitian field."""
        P = self.M if P is None else P
        if P < self.M:
            raise ValueError("grid smaller than lattice")
        c = np.asarray(c)
        N = self.N
        half = np.zeros(c.shape[:-2] + (P, P // 2 + 1), dtype=complex)
        rows = np.arange(-N, N + 1) % P
        half[..., rows, : N + 1] = c[..., :, N:]
        if P % 2 == 0 and N + 1 > P // 2:
            raise ValueError("grid too small for real transform")
        return sfft.irfft2(half, s=(P, P), workers=fft_workers()) * (P * P)

    def from_grid(self, u: np.ndarray) -> np.ndarray:
        """Lattice coefficients of real grid values (truncating frequencies beyond ``N``)."""
        u = np.asarray(u, dtype=float)
        P = u.shape[-1]
        if P < self.M:
            raise ValueError("grid smaller than lattice")
        N = self.N
        half = sfft.rfft2(u, workers=fft_workers()) / (P * P)
        rows = np.arange(-N, N + 1) % P
        pos = half[..., rows, : N + 1]
        out = np.empty(u.shape[:-2] + self.shape, dtype=complex)
        out[..., :, N:] = pos
        # c(w1, -w2) = conj c(-w1, w2)
        out[..., :, :N] = np.conj(pos[..., ::-1, :0:-1])
        return out

    @property
    def pad(self) -> int:
        """Grid size on which products of two lattice fields are alias-free."""
        return sfft.next_fast_len(2 * self.M, real=True)

    def product(self, f: np.ndarray, g: np.ndarray, dealias: Literal["exact", "none"] = "exact") -> np.ndarray:
        """Pointwise product, re-truncated to the lattice."""
        P = self.pad if dealias == "exact" else self.M
        return self.from_grid(self.to_grid(f, P) * self.to_grid(g, P))

    # -- lattice-level operators ---------------------------------------------

    def hermitian_defect(self, c: np.ndarray) -> float:
        c = np.asarray(c)
        flipped = np.conj(c[..., ::-1, ::-1])
        return float(np.max(np.abs(c - flipped), initial=0.0))

    def hermitize(self, c: np.ndarray) -> np.ndarray:
        return 0.5 * (c + np.conj(c[..., ::-1, ::-1]))

    def mean(self, c: np.ndarray) -> np.ndarray:
        return np.real(np.asarray(c)[..., self.N, self.N])

    def sobolev_norm(self, c: np.ndarray, k: float) -> np.ndarray:
        """``(sum (1 + |2 pi omega|^2)^k |c|^2)^(1/2)`` over the last two axes."""
        w = (1.0 + self.lap) ** k
        return np.sqrt(np.sum(w * np.abs(c) ** 2, axis=(-2, -1)))

    def l2_norm(self, c: np.ndarray) -> np.ndarray:
        return np.sqrt(np.sum(np.abs(c) ** 2, axis=(-2, -1)))


@dataclass
class SpectralField:
    """A single real field on a lattice with an optional time tag."""

    lattice: Lattice
    coeffs: np.ndarray
    time_tag: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape[-2:] != self.lattice.shape:
            raise ValueError("coefficient array does not match lattice")


# ---------------------------------------------------------------------------
# operators on coefficient arrays


def apply_heat(f: np.ndarray, t: float, lat: Lattice) -> np.ndarray:
    if t < 0:
        raise ValueError("heat semigroup needs t >= 0")
    return np.exp(-t * lat.lap) * f


def solve_poisson(f: np.ndarray, lat: Lattice) -> np.ndarray:
    """``Phi_f`` with ``-Laplace Phi_f = f - mean(f)`` and zero mean."""
    return lat.inv_lap * f


def gradient(f: np.ndarray, lat: Lattice) -> np.ndarray:
    """Gradient, component axis inserted just before the lattice axes."""
    return lat.deriv * np.asarray(f)[..., None, :, :]


def divergence(v: np.ndarray, lat: Lattice) -> np.ndarray:
    return np.sum(lat.deriv * v, axis=-3)


def grad_poisson(f: np.ndarray, lat: Lattice) -> np.ndarray:
    """``grad Phi_f``: component ``j`` equals ``G^j f``."""
    return lat.G * np.asarray(f)[..., None, :, :]


def duhamel_accumulate(
    forcing: np.ndarray,
    dt: float,
    lat: Lattice,
    rule: Literal["left", "trapezoid"] = "left",
    steps: int | None = None,
) -> np.ndarray:
    """Path of ``I[f]_t = int_0^t P_{t-s} f_s ds`` on a uniform grid.

    ``forcing`` has the time axis first (values at ``t_0 .. t_M``).  The result
    has the same shape with ``I[f]_{t_0} = 0``.  ``steps`` truncates the path.
    """
    forcing = np.asarray(forcing)
    M = forcing.shape[0] - 1 if steps is None else steps
    if M > forcing.shape[0] - 1 or (rule == "trapezoid" and M > forcing.shape[0] - 1):
        raise ValueError("time beyond the forcing range")
    decay = np.exp(-dt * lat.lap)
    out = np.zeros((M + 1,) + forcing.shape[1:], dtype=complex)
    if rule == "left":
        w = phi1(lat.lap, dt)
        for i in range(M):
            out[i + 1] = decay * out[i] + w * forcing[i]
    elif rule == "trapezoid":
        wl, wr = trapezoid_weights(lat.lap, dt)
        for i in range(M):
            out[i + 1] = decay * out[i] + wl * forcing[i] + wr * forcing[i + 1]
    else:
        raise ValueError(f"unknown quadrature rule {rule!r}")
    return out


def duhamel_at(forcing: np.ndarray, t: float, dt: float, lat: Lattice, rule: str = "left") -> np.ndarray:
    """``I[f]_t`` for a grid time ``t``."""
    steps = int(round(t / dt))
    if abs(steps * dt - t) > 1e-12 * max(1.0, t):
        raise ValueError("t is not a grid time")
    return duhamel_accumulate(forcing, dt, lat, rule, steps=steps)[-1]


def product(f: np.ndarray, g: np.ndarray, lat: Lattice, dealias: Literal["exact", "none"] = "exact") -> np.ndarray:
    return lat.product(f, g, dealias)


def convolve_direct(f: np.ndarray, g: np.ndarray, lat: Lattice) -> np.ndarray:
    """``sum_{w1 + w2 = w} f(w1) g(w2)`` by brute force, for small lattices."""
    N, M = lat.N, lat.M
    out = lat.zeros()
    for a in range(M):
        for b in range(M):
            if f[a, b] == 0:
                continue
            w1 = (a - N, b - N)
            # shift g by w1 and keep what stays on the lattice
            lo1, hi1 = max(0, w1[0]), min(M, M + w1[0])
            lo2, hi2 = max(0, w1[1]), min(M, M + w1[1])
            out[lo1:hi1, lo2:hi2] += f[a, b] * g[lo1 - w1[0] : hi1 - w1[0], lo2 - w1[1] : hi2 - w1[1]]
    return out
