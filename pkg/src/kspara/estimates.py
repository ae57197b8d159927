"""Empirical checks of the lattice sum and shape-coefficient estimates.

Every check evaluates ``lhs / rhs`` over a finite parameter grid whose
frequency range is set by ``cap``; a bound is reported as uniform when the
maximal ratio is finite and grows by at most ``tol`` when the cap doubles.
Implicit constants are reported, never asserted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterator

import numpy as np
from scipy import fft as sfft

from .littlewood_paley import required_kmax, rho
from .shape_oracle import D_closed, Tr_exact, V_exact
from .spectral_core import TWO_PI, fft_workers

SPARSE = (0, 1, 2, 3, 5, 8, 13, 21, 34, 55)
THIN = (0, 1, 3, 8, 21, 55)
GAMMAS = (0.0, 0.25, 0.5, 0.75, 1.0)
TIME_PAIRS = ((0.5, 0.5001), (0.5, 0.501), (0.5, 0.51), (0.5, 0.6), (0.5, 1.0), (0.05, 1.0))


@dataclass
class BoundRow:
    lemma: str
    cap: int
    params: str
    point: str
    lhs: float
    rhs: float

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs


@dataclass
class BoundReport:
    lemma: str
    caps: tuple
    rows: list = field(default_factory=list)
    tol: float = 0.10

    def max_ratio(self, cap: int) -> float:
        return max(r.ratio for r in self.rows if r.cap == cap)

    @property
    def growth(self) -> float:
        lo, hi = self.max_ratio(self.caps[0]), self.max_ratio(self.caps[-1])
        return hi / lo - 1.0

    @property
    def passed(self) -> bool:
        vals = [self.max_ratio(c) for c in self.caps]
        return all(np.isfinite(v) and v > 0 for v in vals) and self.growth <= self.tol

    def csv_rows(self):
        for r in self.rows:
            yield (self.lemma, f"cap={r.cap};{r.params};{r.point}", r.lhs, r.rhs, r.ratio)


# ---------------------------------------------------------------------------
# lattice helpers


def box(L: int):
    x = np.arange(-L, L + 1)
    return np.meshgrid(x, x, indexing="ij")


def radius(L: int) -> np.ndarray:
    X, Y = box(L)
    return np.hypot(X, Y)


def neg_power(r: np.ndarray, a: float) -> np.ndarray:
    """``r^{-a}`` with the convention ``0`` at ``r = 0`` (excluded lattice points)."""
    out = np.zeros_like(r, dtype=float)
    nz = r > 0
    out[nz] = r[nz] ** (-a)
    return out


def signed(values, cap: int) -> list:
    v = [x for x in values if x <= cap]
    return sorted(set(v) | {-x for x in v})


def vectors(values, cap: int, nonneg: bool = False) -> np.ndarray:
    c = [x for x in values if x <= cap] if nonneg else signed(values, cap)
    out = np.array([(a, b) for a in c for b in c if (a, b) != (0, 0)], dtype=float)
    return out


class Convolver:
    """Linear convolution of centred arrays with a fixed kernel, cropped to ``|w|_inf <= out``."""

    def __init__(self, kernel: np.ndarray, La: int, out: int):
        Lk = (kernel.shape[0] - 1) // 2
        self.La, self.Lk, self.out = La, Lk, out
        n = 2 * La + 2 * Lk + 1
        self.shape = (sfft.next_fast_len(n, real=True),) * 2
        self.kf = sfft.rfft2(kernel, self.shape, workers=fft_workers())

    def __call__(self, a: np.ndarray) -> np.ndarray:
        full = sfft.irfft2(sfft.rfft2(a, self.shape, workers=fft_workers()) * self.kf, self.shape, workers=fft_workers())
        c = self.La + self.Lk
        return full[c - self.out : c + self.out + 1, c - self.out : c + self.out + 1]


def conv(a: np.ndarray, b: np.ndarray, out: int) -> np.ndarray:
    return Convolver(b, (a.shape[0] - 1) // 2, out)(a)


def _blocks(r: np.ndarray, K: int) -> np.ndarray:
    return np.stack([rho(k, r) for k in range(-1, K + 1)])


def restricted_sum(f: np.ndarray, g: np.ndarray, out: int, mode: str) -> np.ndarray:
    """``sum_{w1} f(w1) g(w - w1) psi(w1, w - w1)`` with the ``sim`` or ``precsim`` cutoff."""
    Lf, Lg = (f.shape[0] - 1) // 2, (g.shape[0] - 1) // 2
    K = required_kmax(max(Lf, Lg))
    Rf, Rg = _blocks(radius(Lf), K), _blocks(radius(Lg), K)
    n = K + 2
    total = np.zeros((2 * out + 1,) * 2)
    if mode == "sim":
        for i in range(n):
            near = Rg[max(0, i - 1) : min(n, i + 2)].sum(axis=0)
            total += conv(Rf[i] * f, near * g, out)
    elif mode == "precsim":
        low = np.cumsum(Rf, axis=0)
        for i in range(2, n):
            total += conv(low[i - 2] * f, Rg[i] * g, out)
    else:
        raise ValueError(mode)
    return total


def _fmt(**kw) -> str:
    return ";".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}" for k, v in kw.items())


def _vec(v) -> str:
    return "(" + ",".join(str(int(round(x))) for x in v) + ")"


Item = tuple  # (params, lhs array, rhs array, label(index) -> str)


# ---------------------------------------------------------------------------
# shape-coefficient bounds


def check_difference_ypsilon(cap: int) -> Iterator[Item]:
    n = vectors(SPARSE, cap)
    n1 = n[:, None, :]
    n2 = n[None, :, :]
    n1, n2 = np.broadcast_arrays(n1, n2)
    keep = np.any(n1 + n2 != 0, axis=-1)
    n1, n2 = n1[keep], n2[keep]
    orth = np.sum(n1 * n2, axis=-1) == 0
    w1, w2 = TWO_PI * n1, TWO_PI * n2
    r1 = np.linalg.norm(w1, axis=-1)
    r2 = np.linalg.norm(w2, axis=-1)
    r12 = np.linalg.norm(w1 + w2, axis=-1)
    for s, t in TIME_PAIRS:
        D = D_closed(s, t, w1, w2)
        tau = abs(t - s)
        for g in GAMMAS:
            rhs_perp = tau**g * r1**-2 * r2**-2 * r12 ** (-4 + 2 * g)
            rhs_gen = tau**g * (r1 ** (-4 + 2 * g) * r2**-2 * r12**-2 + r1**-4 * r2**-2 * r12 ** (-2 + 2 * g))
            for case, m, rhs in (("perp", orth, rhs_perp), ("general", ~orth, rhs_gen)):
                idx = np.flatnonzero(m)

                def label(i, idx=idx):
                    j = idx[i]
                    return f"w1={_vec(n1[j])};w2={_vec(n2[j])}"

                yield _fmt(case=case, gamma=g, s=s, t=t), D[idx], rhs[idx], label


def _comparable(ra, rb, C=2.0):
    return (ra <= C * rb) & (rb <= C * ra)


def check_triangle(cap: int) -> Iterator[Item]:
    n = vectors(SPARSE, cap, nonneg=True)
    r = np.linalg.norm(n, axis=-1)
    i1, i2 = np.nonzero(_comparable(r[:, None], r[None, :]))
    A = n[i1][:, None, :]
    B = n[i2][:, None, :]
    C3 = n[None, :, :]
    P = i1.size
    for s, t in TIME_PAIRS + ((1.0, 0.5),):
        tau = abs(t - s)
        for k in (1, 2):
            lhs = Tr_exact(s, t, k, A, B, C3)
            for g in GAMMAS:
                rhs = tau**g * r[i2][:, None] ** (2 * g) / r[None, :]
                rhs = np.broadcast_to(rhs, lhs.shape)

                def label(i, P=P):
                    a, c = divmod(i, n.shape[0])
                    return f"w1={_vec(n[i1[a]])};w2={_vec(n[i2[a]])};w3={_vec(n[c])}"

                yield _fmt(k=k, gamma=g, s=s, t=t), lhs.ravel(), rhs.ravel(), label


def check_v(cap: int) -> Iterator[Item]:
    n = vectors(SPARSE, cap, nonneg=True)
    r = np.linalg.norm(n, axis=-1)
    cmp_ = _comparable(r[:, None], r[None, :])
    i1, i2 = np.nonzero(cmp_)  # w1 ~ w2
    # w1' ranges over all vectors comparable to w2
    W1 = n[i1][:, None, :]
    W2 = n[i2][:, None, :]
    W1p = n[None, :, :]
    ok = cmp_[i2][:, :]  # (pairs, vectors): w1' ~ w2
    for s, t in TIME_PAIRS:
        tau = abs(t - s)
        for k in (1, 2):
            for kp in (1, 2):
                lhs = V_exact(s, t, k, kp, W1, W1p, W2)
                lhs = np.where(ok, lhs, 0.0)
                for g in GAMMAS:
                    rhs = tau**g * r[i1][:, None] ** (-1 + g) * r[None, :] ** (-1 + g)

                    def label(i):
                        a, c = divmod(i, n.shape[0])
                        return f"w1={_vec(n[i1[a]])};w1p={_vec(n[c])};w2={_vec(n[i2[a]])}"

                    yield _fmt(k=k, kp=kp, gamma=g, s=s, t=t), lhs.ravel(), np.broadcast_to(rhs, lhs.shape).ravel(), label


# ---------------------------------------------------------------------------
# lattice sums


def check_elliptic_difference(cap: int) -> Iterator[Item]:
    om = vectors(SPARSE, cap)
    X, Y = box(cap)
    w1 = np.stack([X, Y], axis=-1).reshape(-1, 2).astype(float)
    r1 = np.linalg.norm(w1, axis=-1)
    for j in (1, 2):
        lhs_all, rhs_all = [], []
        for w in om:
            ws = w + w1
            rs = np.linalg.norm(ws, axis=-1)
            keep = (r1 > 0) & (rs > 0)
            G_s = np.where(keep, ws[:, j - 1] / np.where(keep, rs, 1.0) ** 2, 0.0)
            G_1 = np.where(keep, w1[:, j - 1] / np.where(keep, r1, 1.0) ** 2, 0.0)
            rw = np.linalg.norm(w)
            lhs = np.abs(G_s - G_1)
            rhs = np.where(keep, rw * np.where(keep, rs, 1.0) ** -2 * (1 + rw / np.where(keep, r1, 1.0)), np.inf)
            lhs_all.append(lhs)
            rhs_all.append(rhs)
        lhs_all, rhs_all = np.concatenate(lhs_all), np.concatenate(rhs_all)
        M = w1.shape[0]

        def label(i, M=M):
            a, b = divmod(i, M)
            return f"w={_vec(om[a])};w1={_vec(w1[b])}"

        yield _fmt(j=j), lhs_all, rhs_all, label


def lattice_sums(R: int) -> tuple:
    """Exact ``sum_{0<|k|<=R} |k|^-2`` and ``#{|k| <= R}`` for integer ``R``."""
    X, Y = box(R)
    q = X * X + Y * Y
    inside = q <= R * R
    nz = inside & (q > 0)
    return float(np.sum(1.0 / q[nz])), int(np.count_nonzero(inside))


def check_summation(cap: int) -> Iterator[Item]:
    Rs = [2**k for k in range(2, int(math.log2(cap)) + 1)]
    s2 = np.array([lattice_sums(R)[0] for R in Rs])
    cnt = np.array([lattice_sums(R)[1] for R in Rs], dtype=float)
    logs = np.log(np.array(Rs, float))
    lab = lambda i: f"inv_delta={Rs[i]}"  # noqa: E731
    yield "sum=|k|^-2;rhs=log(1/delta)", s2, logs, lab
    yield "sum=1;rhs=delta^-2", cnt, np.array(Rs, float) ** 2, lab


CONV_RESTRICTED = ((1.5, 1.5), (2.5, 0.5), (1.0, 2.0), (0.5, 2.5), (3.0, 0.5), (2.0, 2.0), (-0.5, 3.5))
CONV_FREE = ((1.5, 1.5), (1.9, 1.2), (1.2, 1.9))


def _omega_box(cap):
    X, Y = box(cap)
    r = np.hypot(X, Y).ravel()
    pts = np.stack([X, Y], axis=-1).reshape(-1, 2)
    return r, lambda i: f"w={_vec(pts[i])}"


def check_convolution(cap: int) -> Iterator[Item]:
    L = 4 * cap
    r_out, label = _omega_box(cap)
    rf = radius(L)
    rg = radius(L + cap)
    for a, b in CONV_RESTRICTED:
        lhs = restricted_sum(neg_power(rf, a), neg_power(rg, b), cap, "sim").ravel()
        yield _fmt(form="sim", alpha=a, beta=b), lhs, np.maximum(1.0, r_out) ** (2 - a - b), label
    for a, b in CONV_FREE:
        lhs = conv(neg_power(rf, a), neg_power(rg, b), cap).ravel()
        yield _fmt(form="free", alpha=a, beta=b), lhs, np.maximum(1.0, r_out) ** (2 - a - b), label


TWOFOLD = ((1.5, 1.5, 1.5), (1.0, 1.5, 1.8), (1.8, 1.0, 1.5))


def check_twofold(cap: int) -> Iterator[Item]:
    L = 2 * cap
    # w and w' both range over |.|_inf <= cap, so their difference reaches 2 cap
    ds = [d for d in vectors(SPARSE + (89,), 2 * cap) if d[0] > 0 or (d[0] == 0 and d[1] > 0)]
    X, Y = box(L + cap)
    Xo, Yo = box(cap)
    inside = lambda v: np.max(np.abs(v), axis=-1) <= cap  # noqa: E731
    om = np.stack([Xo, Yo], axis=-1).reshape(-1, 2)
    r_om = np.linalg.norm(om, axis=-1)
    for a, b, g in TWOFOLD:
        f = Convolver(neg_power(radius(L), g), L + cap, cap)
        lhs_all, rhs_all = [], []
        for d in ds:
            h = neg_power(np.hypot(X, Y), a) * neg_power(np.hypot(X + d[0], Y + d[1]), b)
            lhs = f(h).ravel()
            r_omp = np.linalg.norm(om + d, axis=-1)
            ok = (r_om > 0) & (r_omp > 0) & inside(om + d)
            rd = np.linalg.norm(d)
            rhs = np.full(lhs.shape, np.inf)
            rhs[ok] = rd**-b * r_om[ok] ** (2 - a - g) + rd**-a * r_omp[ok] ** (2 - b - g)
            lhs_all.append(np.where(ok, lhs, 0.0))
            rhs_all.append(rhs)
        M = om.shape[0]

        def label(i, M=M):
            k, m = divmod(i, M)
            return f"w={_vec(om[m])};wp={_vec(om[m] + ds[k])}"

        yield _fmt(alpha=a, beta=b, gamma=g), np.concatenate(lhs_all), np.concatenate(rhs_all), label


PARAPRODUCT = ((2.5, 0.0), (2.5, 1.0), (3.0, 0.5), (4.0, 2.0))


def check_paraproduct(cap: int) -> Iterator[Item]:
    L = 4 * cap
    r_out, label = _omega_box(cap)
    for a, b in PARAPRODUCT:
        lhs = restricted_sum(neg_power(radius(L), a), neg_power(radius(L + cap), b), cap, "precsim").ravel()
        rhs = np.where(r_out > 0, neg_power(r_out, b), np.inf)
        yield _fmt(alpha=a, beta=b), np.where(r_out > 0, lhs, 0.0), rhs, label


@lru_cache(maxsize=2)
def bracket_kernel(L: int = 512, out: int = 256) -> np.ndarray:
    """``K(v) = sum_n (1 + |v - n|^2)^-1 (1 + |n|^2)^-1`` truncated to ``|n|_inf <= L``."""
    p = 1.0 / (1.0 + radius(L) ** 2)
    return conv(p, p, out)


DOUBLE_SUM = ((0.0, 0.3), (0.1, 0.4), (0.2, 0.4))


def check_double_sum(cap: int) -> Iterator[Item]:
    L = 4 * cap
    X, Y = box(L)
    r4 = np.hypot(X, Y)
    K = bracket_kernel()
    c = (K.shape[0] - 1) // 2
    Kv = K[c - cap : c + cap + 1, c - cap : c + cap + 1]
    Xo, Yo = box(cap)
    rv = np.hypot(Xo, Yo).ravel()
    oms = vectors(THIN, cap)
    oms = np.vstack([[0.0, 0.0], oms])
    inv = Convolver(neg_power(radius(L + cap), 1.0), L, cap)
    Kblk = required_kmax(2 * L + cap)
    n = Kblk + 2
    R4 = _blocks(r4, Kblk)
    near = np.stack([R4[max(0, i - 1) : min(n, i + 2)].sum(axis=0) for i in range(n)])
    # blocks of |w - w4| are slices of blocks on a larger box
    Lb = L + cap
    Rbig = _blocks(radius(Lb), Kblk)
    for g, eps in DOUBLE_SUM:
        lhs_all, rhs_all = [], []
        for w in oms:
            a, b = int(w[0]), int(w[1])
            rd = np.hypot(w[0] - X, w[1] - Y)
            # index of w - w4 in the big box is (a - x + Lb, b - y + Lb)
            sl = Rbig[:, a + Lb - L : a + Lb + L + 1, b + Lb - L : b + Lb + L + 1][:, ::-1, ::-1]
            sim = np.einsum("kij,kij->ij", sl, near)
            rw = math.hypot(*w)
            F = sim * neg_power(rd, 2.0) * np.where(r4 > 0, 1.0 + rw / np.where(r4 > 0, r4, 1.0), 0.0) * r4 ** (2 * g)
            F[(r4 == 0) | (rd == 0)] = 0.0
            S = inv(F)  # indexed by v = w - w1; the w4 = v term is excluded by the kernel
            lhs = (Kv * S).ravel()
            rhs = np.maximum(1.0, rv) ** (-2 + eps) * max(1.0, rw) ** (-1 + 2 * g + eps)
            lhs_all.append(lhs)
            rhs_all.append(rhs)
        M = rv.size
        pts = np.stack([Xo, Yo], axis=-1).reshape(-1, 2)

        def label(i, M=M, pts=pts):
            a, b = divmod(i, M)
            return f"w={_vec(oms[a])};w1={_vec(oms[a] - pts[b])}"

        yield _fmt(gamma=g, eps=eps), np.concatenate(lhs_all), np.concatenate(rhs_all), label


SUM_M = ((4, 0.2), (16, 0.2), (4, 0.3), (16, 0.3))


def check_sum_m(cap: int) -> Iterator[Item]:
    oms = vectors(THIN, cap)
    for inv_delta, eps in SUM_M:
        L = 2 * cap + inv_delta
        X, Y = box(L)
        p = 1.0 / (1.0 + X * X + Y * Y)
        disc = (radius(inv_delta) <= inv_delta).astype(float)
        r1 = np.hypot(X, Y)
        cv = Convolver(disc, L, L)
        lhs = np.empty(len(oms))
        for a, w in enumerate(oms):
            P = p * (1.0 / (1.0 + (w[0] - X) ** 2 + (w[1] - Y) ** 2))
            Q = cv(P)
            rr = np.hypot(w[0] - X, w[1] - Y)
            keep = (r1 > 0) & (rr > 0)
            rw = math.hypot(*w)
            W = np.zeros_like(r1)
            W[keep] = r1[keep] ** -2 * (1.0 + rw / rr[keep])
            lhs[a] = float(np.sum(Q * W))
        rw = np.linalg.norm(oms, axis=-1)
        rhs = rw ** (-2 + 3 * eps) * math.log(inv_delta)
        yield _fmt(inv_delta=inv_delta, eps=eps), lhs, rhs, lambda i: f"w={_vec(oms[i])}"


CHECKS: dict[str, Callable[[int], Iterator[Item]]] = {
    "difference_ypsilon_bound": check_difference_ypsilon,
    "triangle_regularity": check_triangle,
    "v_regularity": check_v,
    "elliptic_difference": check_elliptic_difference,
    "summation_estimates": check_summation,
    "convolution_estimates": check_convolution,
    "convolution_twofold": check_twofold,
    "convolution_estimate_paraproduct": check_paraproduct,
    "double_sum_PreCocktail_renormalized": check_double_sum,
    "sum_m_om_canonical": check_sum_m,
}
LEMMAS = tuple(CHECKS)


def verify_bound(lemma: str, caps=(32, 64), tol: float = 0.10) -> BoundReport:
    """Max ``lhs / rhs`` per parameter set at each frequency cap."""
    if lemma not in CHECKS:
        raise KeyError(f"unknown lemma {lemma!r}; choose from {', '.join(LEMMAS)}")
    rep = BoundReport(lemma, tuple(caps), tol=tol)
    for cap in caps:
        for params, lhs, rhs, label in CHECKS[lemma](cap):
            lhs = np.asarray(lhs, float)
            rhs = np.asarray(rhs, float)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(lhs == 0, 0.0, lhs / rhs)
            i = int(np.nanargmax(ratio)) if np.any(np.isfinite(ratio)) else 0
            rep.rows.append(BoundRow(lemma, cap, params, label(i), float(lhs[i]), float(rhs[i])))
    return rep


def verify_all(caps=(32, 64), lemmas=LEMMAS) -> list:
    return [verify_bound(lem, caps) for lem in lemmas]
