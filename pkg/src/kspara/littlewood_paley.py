"""Dyadic partition of unity, Littlewood-Paley blocks, Besov norms and Bony calculus."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Literal

import numpy as np

from .spectral_core import Lattice

R_INNER = 9.0 / 32.0
R_OUTER = 0.5


def smooth_step(s) -> np.ndarray:
    """C-infinity step: 0 for ``s <= 0``, 1 for ``s >= 1``."""
    s = np.asarray(s, dtype=float)

    def f(x):
        xs = np.where(x > 0, x, 1.0)
        return np.where(x > 0, np.exp(-1.0 / xs), 0.0)

    a, b = f(s), f(1.0 - s)
    return a / (a + b)


def chi(r) -> np.ndarray:
    """Radial cutoff: 1 on ``|x| <= 9/32``, 0 on ``|x| >= 1/2``."""
    return smooth_step((R_OUTER - np.asarray(r, dtype=float)) / (R_OUTER - R_INNER))


def rho(k: int, r) -> np.ndarray:
    """``rho_k`` at radius ``r`` (``k = -1`` is the ball block)."""
    r = np.asarray(r, dtype=float)
    if k == -1:
        return chi(r)
    return chi(r * 2.0 ** (-k - 1)) - chi(r * 2.0 ** (-k))


def required_kmax(N: int) -> int:
    """Smallest ``K`` with ``chi(2^(-K-1) w) = 1`` on the whole lattice."""
    rmax = math.sqrt(2.0) * N
    K = -1
    while R_INNER * 2.0 ** (K + 1) < rmax:
        K += 1
    return K


@dataclass(frozen=True)
class DyadicPartition:
    lattice: Lattice
    K_max: int

    def __post_init__(self):
        need = required_kmax(self.lattice.N)
        if self.K_max < need:
            raise ValueError(f"K_max={self.K_max} does not cover N={self.lattice.N}; need >= {need}")

    @property
    def ks(self) -> range:
        return range(-1, self.K_max + 1)

    @cached_property
    def blocks(self) -> np.ndarray:
        """``rho_k`` on the lattice, shape ``(K_max + 2, M, M)``; row ``k + 1``."""
        r = np.sqrt(self.lattice.norm2.astype(float))
        out = np.stack([rho(k, r) for k in self.ks])
        # the top block absorbs chi(2^{-K-1} w), which is 1 on the lattice
        return out

    def supports(self) -> list[tuple[float, float]]:
        return [(0.0, R_OUTER)] + [(R_INNER * 2.0**k, 2.0**k) for k in range(self.K_max + 1)]

    def block(self, u: np.ndarray, k: int) -> np.ndarray:
        if k < -1 or k > self.K_max:
            raise IndexError(f"block {k} out of range")
        return self.blocks[k + 1] * u

    def decompose(self, u: np.ndarray) -> np.ndarray:
        """All blocks, block axis inserted before the lattice axes."""
        return self.blocks * np.asarray(u)[..., None, :, :]

    def low(self, u: np.ndarray, k: int) -> np.ndarray:
        """``Delta_{<k} u``."""
        if k <= -1:
            return np.zeros_like(u)
        return self.blocks[: min(k, self.K_max + 1) + 1].sum(axis=0) * u


@lru_cache(maxsize=64)
def partition_for(N: int, K_max: int | None = None) -> DyadicPartition:
    lat = Lattice(N)
    return DyadicPartition(lat, required_kmax(N) if K_max is None else K_max)


def _part(lat: Lattice, part: DyadicPartition | None) -> DyadicPartition:
    if part is None:
        return partition_for(lat.N)
    if part.lattice != lat:
        raise ValueError("partition built for another lattice")
    return part


def lp_block(u: np.ndarray, k: int, lat: Lattice, part: DyadicPartition | None = None) -> np.ndarray:
    return _part(lat, part).block(u, k)


# ---------------------------------------------------------------------------
# norms


def _lp_norm(vals: np.ndarray, p: float, vector: bool) -> np.ndarray:
    if vector:
        vals = np.sqrt(np.sum(vals**2, axis=-3))
    a = np.abs(vals)
    if math.isinf(p):
        return a.max(axis=(-2, -1))
    return np.mean(a**p, axis=(-2, -1)) ** (1.0 / p)


def block_norms(
    u: np.ndarray, lat: Lattice, p: float = math.inf, part: DyadicPartition | None = None, vector: bool = False
) -> np.ndarray:
    """``||Delta_k u||_{L^p}`` on the native grid, block axis last.

    With ``vector=True`` the axis ``-3`` of ``u`` holds components and the
    pointwise Euclidean norm is used.
    """
    part = _part(lat, part)
    blocks = part.decompose(u)  # (..., [comp], K, M, M)
    if vector:
        blocks = np.moveaxis(blocks, -4, -3)  # (..., K, comp, M, M)
    vals = lat.to_grid(blocks)
    return _lp_norm(vals, p, vector)


def besov_norm(
    u: np.ndarray,
    lat: Lattice,
    alpha: float,
    p: float = math.inf,
    q: float = math.inf,
    part: DyadicPartition | None = None,
    vector: bool = False,
) -> np.ndarray:
    """``|| (2^{k alpha} ||Delta_k u||_{L^p})_k ||_{l^q}``."""
    if p < 1 or q < 1:
        raise ValueError("Besov indices need p, q >= 1")
    part = _part(lat, part)
    bn = block_norms(u, lat, p, part, vector)
    w = 2.0 ** (alpha * np.arange(-1, part.K_max + 1))
    seq = w * bn
    if math.isinf(q):
        return seq.max(axis=-1)
    return np.sum(seq**q, axis=-1) ** (1.0 / q)


def holder_norm(u, lat, alpha, part=None, vector=False):
    """``C^alpha = B^alpha_{inf, inf}``."""
    return besov_norm(u, lat, alpha, math.inf, math.inf, part, vector)


def matrix_holder_norm(u: np.ndarray, lat: Lattice, alpha: float, part=None) -> np.ndarray:
    """``C^alpha`` norm of a field with two component axes, Frobenius pointwise."""
    flat = u.reshape(u.shape[:-4] + (u.shape[-4] * u.shape[-3],) + u.shape[-2:])
    return holder_norm(flat, lat, alpha, part, vector=True)


# ---------------------------------------------------------------------------
# Bony calculus


def _block_grids(u: np.ndarray, lat: Lattice, part: DyadicPartition) -> np.ndarray:
    return lat.to_grid(part.decompose(u), lat.pad)


def paraproduct(u: np.ndarray, v: np.ndarray, lat: Lattice, part: DyadicPartition | None = None) -> np.ndarray:
    """``u < v = sum_k Delta_{<k-1} u Delta_k v`` with alias-free products."""
    part = _part(lat, part)
    U = _block_grids(u, lat, part)
    V = _block_grids(v, lat, part)
    low = np.cumsum(U, axis=-3)  # low[..., i] = sum_{l <= i-1} Delta_l u
    acc = np.zeros(np.broadcast_shapes(U.shape[:-3], V.shape[:-3]) + U.shape[-2:])
    # block index i corresponds to k = i - 1; Delta_{<k-1} = sum_{l <= k-2} -> low index i - 2
    for i in range(2, U.shape[-3]):
        acc = acc + low[..., i - 2, :, :] * V[..., i, :, :]
    return lat.from_grid(acc)


def resonant(u: np.ndarray, v: np.ndarray, lat: Lattice, part: DyadicPartition | None = None) -> np.ndarray:
    """``u o v = sum_{|k - l| <= 1} Delta_k u Delta_l v``."""
    part = _part(lat, part)
    U = _block_grids(u, lat, part)
    V = _block_grids(v, lat, part)
    K = U.shape[-3]
    acc = np.zeros(np.broadcast_shapes(U.shape[:-3], V.shape[:-3]) + U.shape[-2:])
    for i in range(K):
        near = V[..., max(0, i - 1) : min(K, i + 2), :, :].sum(axis=-3)
        acc = acc + U[..., i, :, :] * near
    return lat.from_grid(acc)


def bony_parts(u, v, lat, part=None):
    """``(u < v, v < u, u o v)`` from a single set of block transforms."""
    part = _part(lat, part)
    U = _block_grids(u, lat, part)
    V = _block_grids(v, lat, part)
    K = U.shape[-3]
    lowU, lowV = np.cumsum(U, axis=-3), np.cumsum(V, axis=-3)
    shape = np.broadcast_shapes(U.shape[:-3], V.shape[:-3]) + U.shape[-2:]
    a, b, c = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    for i in range(K):
        if i >= 2:
            a = a + lowU[..., i - 2, :, :] * V[..., i, :, :]
            b = b + lowV[..., i - 2, :, :] * U[..., i, :, :]
        c = c + U[..., i, :, :] * V[..., max(0, i - 1) : min(K, i + 2), :, :].sum(axis=-3)
    return lat.from_grid(a), lat.from_grid(b), lat.from_grid(c)


def commutator_CPR(f, g, h, lat: Lattice, part: DyadicPartition | None = None) -> np.ndarray:
    """``C(f, g, h) = (f < g) o h - f (g o h)``."""
    part = _part(lat, part)
    return resonant(paraproduct(f, g, lat, part), h, lat, part) - lat.product(f, resonant(g, h, lat, part))


def sim_weight(w1: np.ndarray, w2: np.ndarray, K_max: int, mode: Literal["sim", "precsim"]) -> np.ndarray:
    """Frequency-side cutoffs: ``sum_{|k-l|<=1} rho_k(w1) rho_l(w2)`` or the paraproduct analogue."""
    r1 = np.sqrt(np.sum(np.asarray(w1, float) ** 2, axis=-1))
    r2 = np.sqrt(np.sum(np.asarray(w2, float) ** 2, axis=-1))
    ks = range(-1, K_max + 1)
    R1 = np.stack([rho(k, r1) for k in ks], axis=-1)
    R2 = np.stack([rho(k, r2) for k in ks], axis=-1)
    out = np.zeros(np.broadcast_shapes(r1.shape, r2.shape))
    n = len(ks)
    if mode == "sim":
        for i in range(n):
            out = out + R1[..., i] * R2[..., max(0, i - 1) : min(n, i + 2)].sum(axis=-1)
    elif mode == "precsim":
        low = np.cumsum(R1, axis=-1)
        for i in range(2, n):
            out = out + low[..., i - 2] * R2[..., i]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return out


def sim_restricted_convolution(
    u: np.ndarray, v: np.ndarray, lat: Lattice, mode: Literal["sim", "precsim"] = "sim", K_max: int | None = None
) -> np.ndarray:
    """Frequency-side double sum ``sum_{w1 + w2 = w} u(w1) v(w2) psi(w1, w2)``.

    Quadratic in the lattice size; meant for small ``N``.
    """
    K = required_kmax(lat.N) if K_max is None else K_max
    f = lat.freqs.reshape(-1, 2)
    uu, vv = np.asarray(u).reshape(-1), np.asarray(v).reshape(-1)
    out = lat.zeros()
    N = lat.N
    for a in range(f.shape[0]):
        if uu[a] == 0:
            continue
        w = f[a] + f
        keep = np.all(np.abs(w) <= N, axis=1)
        wt = sim_weight(f[a][None, :], f[keep], K, mode)
        np.add.at(out, (w[keep, 0] + N, w[keep, 1] + N), uu[a] * vv[keep] * wt)
    return out
