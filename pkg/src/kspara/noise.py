"""Complex Brownian fields, mollifiers, heterogeneity profiles and the stochastic convolution."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal, Sequence

import numpy as np

from .spectral_core import TWO_PI, Lattice

MASK64 = (1 << 64) - 1


# ---------------------------------------------------------------------------
# Brownian increments


@lru_cache(maxsize=32)
def shell_representatives(N: int) -> np.ndarray:
    """One representative of every pair ``{m, -m}``, ``m != 0``, ordered by shell ``|m|_inf``.

    Within a shell the order is lexicographic.  Because shells come first,
    the list for a smaller ``N`` is a prefix of the list for a larger one.
    """
    reps = []
    for n in range(1, N + 1):
        shell = []
        for a in range(-n, n + 1):
            for b in range(-n, n + 1):
                if max(abs(a), abs(b)) != n:
                    continue
                if a > 0 or (a == 0 and b > 0):
                    shell.append((a, b))
        reps.extend(sorted(shell))
    return np.array(reps, dtype=int).reshape(-1, 2)


def _philox_normals(k0: int, k1: int, count: int) -> np.ndarray:
    # an explicit uint64 key: a Python list holding values >= 2**63 is cast through float64 and loses bits
    key = np.array([k0 & MASK64, k1 & MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key)).standard_normal(count)


def _step_normals(seed: int, step: int, j: int, count: int) -> np.ndarray:
    # counter-based contract: the key encodes (seed, step, component)
    return _philox_normals(seed, (step << 1) | (j - 1), count)


@dataclass
class BrownianField:
    """Increments ``dW[i, j-1, w]`` of complex Brownian motions on a uniform grid."""

    lattice: Lattice
    T: float
    M: int
    seed: int
    dW: np.ndarray  # (M, 2, L, L)

    @property
    def dt(self) -> float:
        return self.T / self.M

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.M + 1)


def sample_increments(lat: Lattice, dt: float, M: int, seed: int) -> np.ndarray:
    if M < 1 or dt <= 0:
        raise ValueError("need M >= 1 and T > 0")
    reps = shell_representatives(lat.N)
    N = lat.N
    rp = (reps[:, 0] + N, reps[:, 1] + N)
    rn = (-reps[:, 0] + N, -reps[:, 1] + N)
    out = np.zeros((M, 2) + lat.shape, dtype=complex)
    s = np.sqrt(dt / 2.0)
    for i in range(M):
        for j in (1, 2):
            z = _step_normals(seed, i, j, 1 + 2 * len(reps))
            c = s * (z[1::2] + 1j * z[2::2])
            g = out[i, j - 1]
            g[N, N] = np.sqrt(dt) * z[0]
            g[rp] = c
            g[rn] = np.conj(c)
    return out


def sample_brownian(lat: Lattice, T: float, M: int, seed: int) -> BrownianField:
    """Hermitian complex Brownian increments, reproducible from ``seed``.

    Non-zero modes have independent real and imaginary parts of variance
    ``dt/2``; the self-conjugate zero mode is real with variance ``dt``.
    """
    if T <= 0:
        raise ValueError("need T > 0")
    return BrownianField(lat, float(T), int(M), int(seed), sample_increments(lat, T / M, M, seed))


def derive_seed(base: int, index: int) -> int:
    """Independent per-sample seed from a base seed."""
    ss = np.random.SeedSequence([base & MASK64, index])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def white_noise_field(W: BrownianField, step: int) -> np.ndarray:
    """Truncated white noise ``xi^j`` on one step: ``dW / dt`` per mode, shape ``(2, L, L)``."""
    if not 0 <= step < W.M:
        raise IndexError("step out of range")
    return W.dW[step] / W.dt


def pair_white_noise(W: BrownianField, test: np.ndarray) -> float:
    """``xi(phi)`` for a vector test function piecewise constant in time.

    ``test`` holds coefficients ``(M, 2, L, L)``; the pairing is
    ``sum_i sum_j sum_m phi_hat^j_i(-m) dW^j_i(m)``.
    """
    flipped = np.asarray(test)[..., ::-1, ::-1]
    return float(np.real(np.sum(flipped * W.dW)))


# ---------------------------------------------------------------------------
# mollifier


def bump(x) -> np.ndarray:
    """``exp(1 - 1/(1 - |x|^2))`` inside the unit ball, 0 outside."""
    x = np.asarray(x, dtype=float)
    r2 = x * x
    inside = r2 < 1.0
    safe = np.where(inside, 1.0 - r2, 1.0)
    return np.where(inside, np.exp(1.0 - 1.0 / safe), 0.0)


PROFILES = {"bump": bump}


@dataclass(frozen=True)
class Mollifier:
    delta: float
    profile: str = "bump"

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("mollifier width must be positive")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")

    def phi(self, x) -> np.ndarray:
        """Radial profile evaluated at ``|x|``."""
        return PROFILES[self.profile](np.asarray(x, dtype=float))

    def symbol(self, m) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        return self.phi(self.delta * np.sqrt(np.sum(m * m, axis=-1)))

    def on_lattice(self, lat: Lattice) -> np.ndarray:
        return self.symbol(lat.freqs)


def mollifier_symbol(delta: float, profile: str = "bump") -> Mollifier:
    return Mollifier(float(delta), profile)


def mollifier_array(moll: Mollifier | None, lat: Lattice) -> np.ndarray:
    return np.ones(lat.shape) if moll is None else moll.on_lattice(lat)


# ---------------------------------------------------------------------------
# heterogeneity


@dataclass
class Heterogeneity:
    """``sigma`` sampled at the grid times; step ``i`` uses the value at ``t_i``."""

    mode: str
    lattice: Lattice
    coeffs: np.ndarray  # (M + 1, L, L)
    T: float
    descriptor: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def dt(self) -> float:
        return self.T / self.M

    @property
    def is_constant_in_space(self) -> bool:
        c = self.coeffs.copy()
        c[..., self.lattice.N, self.lattice.N] = 0
        return not np.any(c)

    @property
    def is_constant_in_time(self) -> bool:
        return bool(np.all(self.coeffs == self.coeffs[0]))

    @property
    def sobolev_h2(self) -> float:
        """``sup_t ||sigma(t)||_{H^2}``."""
        return float(np.max(self.lattice.sobolev_norm(self.coeffs, 2)))

    def at_step(self, i: int) -> np.ndarray:
        return self.coeffs[i]


_TRIG_TERM = re.compile(r"^\s*([-+0-9.eE]+)\s*:\s*(-?\d+)\s*:\s*(-?\d+)\s*(?::\s*(cos|sin))?\s*$")


def parse_trig(spec: str) -> list[tuple[float, int, int, str]]:
    """Parse ``"c0;a:k1:k2[:cos|sin];..."`` into terms.

    ``"1;0.5:1:0"`` is ``1 + 0.5 cos(2 pi x_1)``.
    """
    parts = [p for p in spec.split(";") if p.strip()]
    if not parts:
        raise ValueError("empty trigonometric spec")
    terms = [(float(parts[0]), 0, 0, "cos")]
    for p in parts[1:]:
        m = _TRIG_TERM.match(p)
        if not m:
            raise ValueError(f"bad trigonometric term {p!r}")
        terms.append((float(m.group(1)), int(m.group(2)), int(m.group(3)), m.group(4) or "cos"))
    return terms


def trig_coeffs(terms, lat: Lattice) -> np.ndarray:
    c = lat.zeros()
    for a, k1, k2, kind in terms:
        if (k1, k2) == (0, 0):
            c[lat.N, lat.N] += a if kind == "cos" else 0.0
            continue
        # cos = (e + e^-)/2, sin = (e - e^-)/(2i)
        amp = a / 2.0 if kind == "cos" else a / 2j
        c += lat.mode((k1, k2), amp)
    return c


def make_heterogeneity(
    mode: Literal["constant", "trig", "sqrt-deterministic"],
    params,
    T: float,
    M: int,
    lat: Lattice,
    rule: str = "left",
) -> Heterogeneity:
    """Build ``sigma`` on the time grid ``t_i = i T / M``.

    ``params``: the constant for ``constant``; a spec string or term list for
    ``trig``; the initial density coefficients for ``sqrt-deterministic``.
    """
    if mode == "constant":
        c = lat.zeros(M + 1)
        c[:, lat.N, lat.N] = float(params)
        return Heterogeneity(mode, lat, c, T, f"const:{float(params)!r}")
    if mode == "trig":
        terms = parse_trig(params) if isinstance(params, str) else list(params)
        c0 = trig_coeffs(terms, lat)
        return Heterogeneity(mode, lat, np.broadcast_to(c0, (M + 1,) + lat.shape).copy(), T, f"trig:{params}")
    if mode == "sqrt-deterministic":
        from .solver import deterministic_ks

        rho0 = np.asarray(params, dtype=complex)
        path = deterministic_ks(rho0, T, M, lat, rule=rule)
        vals = lat.to_grid(path)
        neg = np.clip(-vals, 0.0, None)
        total = np.sum(np.abs(vals), axis=(-2, -1))
        frac = float(np.max(np.sum(neg, axis=(-2, -1)) / np.where(total > 0, total, 1.0)))
        if frac > 1e-6:
            raise ValueError(f"deterministic density negative on a mass fraction {frac:.3e} > 1e-6")
        sig = lat.from_grid(np.sqrt(np.clip(vals, 0.0, None)))
        meta = {"clip_policy": "clip-at-zero", "clipped_mass_fraction": frac}
        return Heterogeneity(mode, lat, sig, T, "sqrt-det", meta)
    raise ValueError(f"unknown heterogeneity mode {mode!r}")


def parse_sigma(desc: str, T: float, M: int, lat: Lattice, rho0: np.ndarray | None = None) -> Heterogeneity:
    """CLI form: ``const:c``, ``trig:<spec>`` or ``sqrt-det[:file]``."""
    kind, _, arg = desc.partition(":")
    if kind == "const":
        return make_heterogeneity("constant", float(arg), T, M, lat)
    if kind == "trig":
        return make_heterogeneity("trig", arg, T, M, lat)
    if kind == "sqrt-det":
        if arg:
            from .io import read_field

            f = read_field(arg)
            rho0 = resample(f.coeffs, f.lattice, lat)
        if rho0 is None:
            raise ValueError("sqrt-det needs an initial density")
        return make_heterogeneity("sqrt-deterministic", rho0, T, M, lat)
    raise ValueError(f"unknown sigma descriptor {desc!r}")


def resample(c: np.ndarray, src: Lattice, dst: Lattice) -> np.ndarray:
    """Zero-pad or truncate coefficients onto another lattice."""
    out = dst.zeros(*c.shape[:-2])
    n = min(src.N, dst.N)
    out[..., dst.N - n : dst.N + n + 1, dst.N - n : dst.N + n + 1] = c[
        ..., src.N - n : src.N + n + 1, src.N - n : src.N + n + 1
    ]
    return out


# ---------------------------------------------------------------------------
# stochastic convolution


def ou_weight(a, dt: float) -> np.ndarray:
    """``sqrt((1 - exp(-2 a dt)) / (2 a dt))``; 1 at ``a = 0``."""
    x = 2.0 * np.asarray(a, dtype=float) * dt
    small = x < 1e-10
    xs = np.where(small, 1.0, x)
    return np.where(small, 1.0 - x / 4.0, np.sqrt(-np.expm1(-xs) / xs))


def noise_forcing(dW: np.ndarray, sigma_i: np.ndarray, phi: np.ndarray, lat: Lattice, constant: bool) -> np.ndarray:
    """``(sigma * (psi_delta * dW^j))^`` for one step, both components."""
    g = phi * dW
    if constant:
        return np.real(sigma_i[lat.N, lat.N]) * g
    return lat.product(sigma_i, g)


def stochastic_convolution(
    dW: np.ndarray,
    sigma: Heterogeneity,
    moll: Mollifier | None,
    lat: Lattice,
    scheme: Literal["exact-variance", "left"] = "exact-variance",
) -> np.ndarray:
    """Path of ``ti(t_i)`` for increments ``dW`` of shape ``(..., M, 2, L, L)``.

    Per mode the update is ``X <- exp(-a dt) X + w * sum_j 2 pi i w^j F^j``
    with ``F^j`` the step's mollified, ``sigma``-weighted increment.  With
    ``scheme="exact-variance"``, ``w = ou_weight(a, dt)`` so that the
    variance matches the continuous Ornstein-Uhlenbeck law for sigma
    constant in time; ``scheme="left"`` uses ``w = 1``.
    """
    dW = np.asarray(dW)
    M = dW.shape[-4]
    if sigma.M != M or sigma.lattice != lat:
        raise ValueError("noise and heterogeneity grids differ")
    dt = sigma.dt
    decay = np.exp(-dt * lat.lap)
    if scheme == "exact-variance":
        w = ou_weight(lat.lap, dt)
    elif scheme == "left":
        w = np.ones(lat.shape)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    phi = mollifier_array(moll, lat)
    const = sigma.is_constant_in_space
    out = np.zeros(dW.shape[:-4] + (M + 1,) + lat.shape, dtype=complex)
    for i in range(M):
        F = noise_forcing(dW[..., i, :, :, :], sigma.at_step(i), phi, lat, const)
        out[..., i + 1, :, :] = decay * out[..., i, :, :] + w * np.sum(lat.deriv * F, axis=-3)
    return out


def ou_variance(sigma0: np.ndarray, moll: Mollifier | None, lat: Lattice, t: float, omega) -> float:
    """Closed-form ``E|ti(t, w)|^2`` for sigma constant in time."""
    w = np.asarray(omega, dtype=float)
    a = TWO_PI**2 * float(w @ w)
    if a == 0:
        return 0.0
    phi = mollifier_array(moll, lat)
    N = lat.N
    tot = 0.0
    # sum over m of |sigma_hat(w - m)|^2 phi(delta m)^2
    for a1 in range(lat.M):
        for a2 in range(lat.M):
            m = (a1 - N, a2 - N)
            d = (int(w[0]) - m[0], int(w[1]) - m[1])
            if max(abs(d[0]), abs(d[1])) > N:
                continue
            tot += abs(sigma0[d[0] + N, d[1] + N]) ** 2 * phi[a1, a2] ** 2
    return tot * a * (-np.expm1(-2.0 * t * a)) / (2.0 * a)


def brownian_batch(lat: Lattice, T: float, M: int, seeds: Sequence[int]) -> np.ndarray:
    return np.stack([sample_increments(lat, T / M, M, s) for s in seeds])


# ---------------------------------------------------------------------------
# exact terminal sampler


def _ou_moments(a: np.ndarray, T: float):
    """``int_0^T tau^k exp(-2 a tau) dtau`` for ``k = 0, 1, 2``."""
    b = 2.0 * np.asarray(a, dtype=float)
    x = b * T
    small = x < 1e-2
    bs = np.where(small, 1.0, b)
    e = np.exp(-x)
    c0 = np.where(small, T * (1 - x / 2 + x**2 / 6 - x**3 / 24), -np.expm1(-x) / bs)
    c1 = np.where(small, T**2 * (1 / 2 - x / 3 + x**2 / 8 - x**3 / 30), (-np.expm1(-x) - x * e) / bs**2)
    c2 = np.where(small, T**3 * (1 / 3 - x / 4 + x**2 / 10 - x**3 / 36), (2 * -np.expm1(-x) - e * (2 * x + x * x)) / bs**3)
    return c0, c1, c2


def sample_ou_pair(lat: Lattice, T: float, seed: int, sigma0: float = 1.0, moll: Mollifier | None = None):
    """Exact joint draw of ``(ti(T), I[ti](T))`` for spatially constant sigma ``sigma0``.

    Per mode ``ti(T) = sum_j 2 pi i w^j int_0^T e^{-a(T-s)} dW^j`` and
    ``I[ti](T) = sum_j 2 pi i w^j int_0^T (T-s) e^{-a(T-s)} dW^j``; the two
    stochastic integrals are jointly Gaussian with the moments of
    :func:`_ou_moments`, so no time grid is involved.
    """
    reps = shell_representatives(lat.N)
    N = lat.N
    w = reps.astype(float)
    a = TWO_PI**2 * np.sum(w * w, axis=1)
    c0, c1, c2 = _ou_moments(a, T)
    l11 = np.sqrt(c0)
    l21 = c1 / l11
    l22 = np.sqrt(np.maximum(c2 - l21 * l21, 0.0))
    amp = sigma0 * mollifier_array(moll, lat)[reps[:, 0] + N, reps[:, 1] + N]
    X = np.zeros(len(reps), dtype=complex)
    Y = np.zeros(len(reps), dtype=complex)
    for j in (1, 2):
        z = _philox_normals(seed, (1 << 63) | j, 4 * len(reps))
        z1 = (z[0::4] + 1j * z[1::4]) / np.sqrt(2.0)
        z2 = (z[2::4] + 1j * z[3::4]) / np.sqrt(2.0)
        d = 1j * TWO_PI * w[:, j - 1] * amp
        X += d * l11 * z1
        Y += d * (l21 * z1 + l22 * z2)
    ti, Iti = lat.zeros(), lat.zeros()
    rp = (reps[:, 0] + N, reps[:, 1] + N)
    rn = (-reps[:, 0] + N, -reps[:, 1] + N)
    for arr, v in ((ti, X), (Iti, Y)):
        arr[rp] = v
        arr[rn] = np.conj(v)
    return ti, Iti
