"""Shape coefficients: closed forms and quadrature evaluators.

Array-level helpers (``Y_closed``, ``L_closed``, ...) take frequencies that
already carry the factor ``2 pi``; ``ShapeQuery`` performs that conversion from
integer vectors.  ``Tr_*`` and ``V_*`` take integer frequencies because their
integrands are built from the multipliers ``H^j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Literal

import numpy as np

from .spectral_core import TWO_PI, phi1


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class ShapeQuery:
    """Times and integer frequencies of a shape coefficient; ``omegas`` are scaled by ``2 pi``."""

    s: float
    t: float
    ints: tuple
    kind: Literal["Y", "L", "PT", "Tr", "V"] = "Y"
    k: int = 1
    kp: int = 1

    def __post_init__(self):
        if self.s < 0 or self.t < 0:
            raise ValueError("times must be nonnegative")
        for w in self.ints:
            if tuple(w) == (0, 0):
                raise ValueError("frequencies must be nonzero")
        need = {"Y": 2, "L": 1, "PT": 3, "Tr": 3, "V": 3}
        if self.kind not in need:
            raise ValueError(f"unknown kind {self.kind!r}")
        if len(self.ints) != need[self.kind]:
            raise ValueError(f"{self.kind} needs {need[self.kind]} frequencies")
        if self.kind in ("Y", "PT"):
            w1, w2 = self.ints[0], self.ints[1]
            if (w1[0] + w2[0], w1[1] + w2[1]) == (0, 0):
                raise ValueError("w1 + w2 must be nonzero")

    @property
    def omegas(self) -> tuple:
        return tuple(TWO_PI * np.asarray(w, dtype=float) for w in self.ints)


# ---------------------------------------------------------------------------
# Y closed form


def _g(c, s):
    return phi1(c, s)


_GL8 = np.polynomial.legendre.leggauss(8)


def _part2(A, B, d, s):
    """``(F(B) - F(A)) / (A - B)`` with ``F(c) = exp(-c d) g(A + c, s)``."""

    def F(c):
        return np.exp(-c * d) * _g(A + c, s)

    def dF(c):
        cs = A + c
        g = _g(cs, s)
        dg = (s * np.exp(-cs * s) - g) / cs
        return np.exp(-c * d) * (dg - d * g)

    A = np.asarray(A, float)
    B = np.asarray(B, float)
    near = np.abs(A - B) < 1e-3 * (A + B)
    diff = np.where(near, 1.0, A - B)
    direct = (F(B) - F(A)) / diff
    x, w = _GL8
    th = 0.5 * (x + 1.0)
    # -(1/(B-A)) int_A^B F' = -int_0^1 F'(A + th (B - A)) dth
    path = -sum(0.5 * wi * dF(A + ti * (B - A)) for ti, wi in zip(th, w))
    return np.where(near, path, direct)


def _J(t, s, A, B):
    """``int_0^t int_0^s exp(-A(t-u) - A(s-v) - B|u-v|) dv du``."""
    t, s = np.maximum(t, s), np.minimum(t, s)
    d = t - s
    X = np.where(B >= A, np.exp(-2 * A * s) * _g(np.abs(B - A), s), np.exp(-(A + B) * s) * _g(np.abs(A - B), s))
    part1 = np.exp(-A * d) / (A + B) * (_g(2 * A, s) - X)
    part2 = _part2(A, B, d, s)
    return part1 + part2


def _rates(w1, w2):
    w1 = np.asarray(w1, float)
    w2 = np.asarray(w2, float)
    A1 = np.sum(w1 * w1, axis=-1)
    A2 = np.sum(w2 * w2, axis=-1)
    w = w1 + w2
    A = np.sum(w * w, axis=-1)
    return A, A1, A2


def Y_closed(s, t, w1, w2) -> np.ndarray:
    """Closed form of the shape coefficient ``S_{s,t} Y(w1, w2)``, frequencies in ``2 pi Z^2``.

    The unbounded inner integrals give ``exp(-A_i |u3 - u3'|) / (2 A_i)``; the
    remaining double integral is elementary, with the orthogonal case
    ``|w1 + w2|^2 = |w1|^2 + |w2|^2`` handled as a limit.
    """
    A, A1, A2 = _rates(w1, w2)
    return _J(np.asarray(t, float), np.asarray(s, float), A, A1 + A2) / (4.0 * A1 * A2)


def D_closed(s, t, w1, w2) -> np.ndarray:
    """``S_{t,t} + S_{s,s} - S_{s,t} - S_{t,s}`` (``S`` is symmetric in its times)."""
    return Y_closed(t, t, w1, w2) + Y_closed(s, s, w1, w2) - 2.0 * Y_closed(s, t, w1, w2)


def L_closed(s, t, w4) -> np.ndarray:
    w4 = np.asarray(w4, float)
    A = np.sum(w4 * w4, axis=-1)
    if np.any(A == 0):
        raise ValueError("zero frequency")
    return 0.5 / A * np.exp(-np.abs(np.asarray(t) - np.asarray(s)) * A)


def PT_closed(s, t, w1, w2, w4) -> np.ndarray:
    return Y_closed(s, t, w1, w2) * L_closed(s, t, w4)


# ---------------------------------------------------------------------------
# quadrature building blocks


@lru_cache(maxsize=16)
def gauss_legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


def panels(a: float, b: float, points, h: float) -> np.ndarray:
    """Breakpoints of ``[a, b]`` graded geometrically towards each of ``points``."""
    L = b - a
    br = [a, b]
    if L <= 0:
        return np.array([a, a])
    kmax = int(np.ceil(np.log2(max(L / h, 1.0)))) + 1
    offs = h * 2.0 ** np.arange(kmax)
    for p in points:
        br.append(p)
        br.extend(p + offs)
        br.extend(p - offs)
    br = np.clip(np.array(br), a, b)
    return np.unique(br)


def composite_nodes(br: np.ndarray, n: int):
    x, w = gauss_legendre(n)
    lo, hi = br[:-1, None], br[1:, None]
    half = 0.5 * (hi - lo)
    return (lo + half * (x + 1.0)).ravel(), (half * w).ravel()


def halfline_nodes(edge: float, lam: float, n: int):
    """Nodes on ``(-inf, edge]`` via ``u = edge - log(1/v) / lam``, ``v`` in ``(0, 1]``."""
    x, w = gauss_legendre(n)
    v = 0.5 * (x + 1.0)
    wv = 0.5 * w
    return edge + np.log(v) / lam, wv / (lam * v)


def _converged(f, n0: int, rtol: float, max_doublings: int = 4):
    prev = f(n0)
    n = n0
    for _ in range(max_doublings):
        n *= 2
        cur = f(n)
        if abs(cur - prev) <= rtol * max(abs(cur), 1e-300):
            return cur
        prev = cur
    raise QuadratureError(f"node doubling did not settle: {prev!r}")


def Y_quad(s: float, t: float, w1, w2, n0: int = 8, rtol: float = 1e-11) -> float:
    """Quadrature of the defining four-fold integral of ``S_{s,t} Y``.

    ``u1, u2`` run over half-lines (exponential substitution); ``(u3, u3')``
    use composite Gauss-Legendre panels graded towards the diagonal and the
    end points.
    """
    A, A1, A2 = (float(x) for x in _rates(w1, w2))
    if s == 0 or t == 0:
        return 0.0
    B = A1 + A2
    h = 1.0 / max(A, B, 2 * A1, 2 * A2)

    def evaluate(n):
        # half-line integrals at |u3 - u3'| = 0; the dependence on the
        # offset is the common factor exp(-A_i |u3 - u3'|)
        c = []
        for Ai in (A1, A2):
            tau, wt = halfline_nodes(0.0, 2 * Ai, n)
            c.append(np.sum(wt * np.exp(-2 * Ai * (-tau))))
        u, wu = composite_nodes(panels(0.0, t, [s, t], h), n)
        # inner panels: shared offsets around u3 and s, clipped to [0, s]
        kmax = int(np.ceil(np.log2(max(max(s, t) / h, 1.0)))) + 1
        offs = h * 2.0 ** np.arange(kmax)
        base = np.concatenate([[0.0, s], s - offs])
        diag = u[:, None] + np.concatenate([[0.0], offs, -offs])[None, :]
        br = np.sort(np.clip(np.concatenate([np.broadcast_to(base, (u.size, base.size)), diag], axis=1), 0.0, s), axis=1)
        x, w = gauss_legendre(n)
        lo, hi = br[:, :-1, None], br[:, 1:, None]
        half = 0.5 * (hi - lo)
        v = (lo + half * (x + 1.0)).reshape(u.size, -1)
        wv = (half * w).reshape(u.size, -1)
        uu = u[:, None]
        f = np.exp(-A * (t + s - uu - v) - B * np.abs(uu - v)) * c[0] * c[1]
        return float(np.sum(wu * np.sum(wv * f, axis=1)))

    return _converged(evaluate, n0, rtol)


def L_quad(s: float, t: float, w4, n0: int = 8, rtol: float = 1e-12) -> float:
    w4 = np.asarray(w4, float)
    A = float(w4 @ w4)
    m = min(s, t)

    def evaluate(n):
        u, wu = halfline_nodes(m, 2 * A, n)
        return float(np.sum(wu * np.exp(-A * np.abs(t - u) - A * np.abs(s - u))))

    return _converged(evaluate, n0, rtol)


# ---------------------------------------------------------------------------
# Tr and V (integer frequencies)


def _a(w) -> float:
    w = np.asarray(w, float)
    return TWO_PI**2 * float(w @ w)


def _a_arr(w):
    w = np.asarray(w, float)
    return TWO_PI**2 * np.sum(w * w, axis=-1)


def Tr_exact(s, t, k, w1, w2, w3):
    """Closed form of ``A^k_{s,t} Tr(w1, w2, w3)``; broadcasts over frequency arrays ``(..., 2)``."""
    w1, w2, w3 = (np.asarray(w, float) for w in (w1, w2, w3))
    a1, a2, a3 = _a_arr(w1), _a_arr(w2), _a_arr(w3)
    pref = TWO_PI**3 * np.abs(w1[..., k - 1]) * np.sum(np.abs(w2) * np.abs(w3), axis=-1)
    mult = 2.0 if s < t else 1.0
    out = pref * mult * (-np.expm1(-abs(t - s) * (a1 + a2))) / ((a1 + a2) * (a2 + a3))
    return float(out) if np.ndim(out) == 0 else out


def Tr_quad(s: float, t: float, k: int, w1, w2, w3, n0: int = 8, rtol: float = 1e-10) -> float:
    """``A^k_{s,t} Tr`` by quadrature in ``u1`` after integrating ``u2`` exactly.

    For fixed ``u1`` the difference inside the absolute value has one sign
    in ``u2``, so the inner integral is elementary.
    """
    w1, w2, w3 = (np.asarray(w, float) for w in (w1, w2, w3))
    a1, a2, a3 = _a(w1), _a(w2), _a(w3)
    pref = TWO_PI**3 * abs(w1[k - 1]) * float(np.sum(np.abs(w2) * np.abs(w3))) / (a2 + a3)
    if s == t:
        return 0.0
    lo = min(s, t)
    h = 1.0 / (a1 + a2)

    def inner(u1):
        et = np.where(u1 <= t, np.exp(-(a1 + a2) * np.clip(t - u1, 0, None)), 0.0)
        es = np.where(u1 <= s, np.exp(-(a1 + a2) * np.clip(s - u1, 0, None)), 0.0)
        return np.abs(et - es)

    def evaluate(n):
        u, wu = halfline_nodes(lo, a1 + a2, n)
        tot = np.sum(wu * inner(u))
        if t > lo:
            v, wv = composite_nodes(panels(lo, t, [lo, t], h), n)
            tot += np.sum(wv * inner(v))
        return float(pref * tot)

    return _converged(evaluate, n0, rtol)


def _V_F(u2, s, t, a1, a2):
    """``int du1 |E_t(u1) E_t(u2) - E_s(u1) E_s(u2)|`` for ``s <= t``."""
    q1, q2 = np.exp(-(t - s) * a1), np.exp(-(t - s) * a2)
    Es = np.where(u2 <= s, np.exp(-a2 * np.clip(s - u2, 0, None)), 0.0)
    Et = np.where(u2 <= t, np.exp(-a2 * np.clip(t - u2, 0, None)), 0.0)
    low = Es / a1 * (1.0 - q1 * q2 + q2 * (1.0 - q1))
    mid = Et / a1
    return np.where(u2 <= s, low, np.where(u2 <= t, mid, 0.0))


def V_exact(s, t, k, kp, w1, w1p, w2):
    """Closed form of ``A^{k,k'}_{s,t} V(w1, w1', w2)``; broadcasts like :func:`Tr_exact`."""
    s, t = min(s, t), max(s, t)
    w1, w1p, w2 = (np.asarray(w, float) for w in (w1, w1p, w2))
    a1, a1p, a2 = _a_arr(w1), _a_arr(w1p), _a_arr(w2)
    pref = TWO_PI**4 * np.abs(w1[..., k - 1]) * np.abs(w1p[..., kp - 1]) * np.sum(w2 * w2, axis=-1)
    q1, q1p, q2 = np.exp(-(t - s) * a1), np.exp(-(t - s) * a1p), np.exp(-(t - s) * a2)
    c = (1.0 - q1 * q2 + q2 * (1.0 - q1)) / a1
    cp = (1.0 - q1p * q2 + q2 * (1.0 - q1p)) / a1p
    out = pref * (c * cp / (2 * a2) + (-np.expm1(-2 * (t - s) * a2)) / (2 * a2 * a1 * a1p))
    return float(out) if np.ndim(out) == 0 else out


def V_quad(s: float, t: float, k: int, kp: int, w1, w1p, w2, n0: int = 8, rtol: float = 1e-10) -> float:
    """``A^{k,k'}_{s,t} V`` by quadrature in ``u2``; the ``u1, u1'`` integrals are exact."""
    s, t = min(s, t), max(s, t)
    if s == t:
        return 0.0
    w1, w1p, w2 = (np.asarray(w, float) for w in (w1, w1p, w2))
    a1, a1p, a2 = _a(w1), _a(w1p), _a(w2)
    pref = TWO_PI**4 * abs(w1[k - 1]) * abs(w1p[kp - 1]) * float(w2 @ w2)
    h = 1.0 / (2 * a2)

    def evaluate(n):
        u, wu = halfline_nodes(s, 2 * a2, n)
        tot = np.sum(wu * _V_F(u, s, t, a1, a2) * _V_F(u, s, t, a1p, a2))
        v, wv = composite_nodes(panels(s, t, [s, t], h), n)
        tot += np.sum(wv * _V_F(v, s, t, a1, a2) * _V_F(v, s, t, a1p, a2))
        return float(pref * tot)

    return _converged(evaluate, n0, rtol)


# ---------------------------------------------------------------------------
# query interface


def _need(q: ShapeQuery, kind: str, count: int):
    if q.kind != kind:
        raise ValueError(f"expected a {kind} query, got {q.kind}")
    if len(q.ints) != count:
        raise ValueError(f"{kind} needs {count} frequencies")


def shape_Y(q: ShapeQuery, method: str = "closed") -> float:
    _need(q, "Y", 2)
    w1, w2 = q.omegas
    if method == "quad":
        return Y_quad(q.s, q.t, w1, w2)
    return float(Y_closed(q.s, q.t, w1, w2))


def shape_D(q: ShapeQuery) -> float:
    _need(q, "Y", 2)
    w1, w2 = q.omegas
    return float(D_closed(q.s, q.t, w1, w2))


def shape_L(q: ShapeQuery, method: str = "closed") -> float:
    _need(q, "L", 1)
    (w4,) = q.omegas
    if method == "quad":
        return L_quad(q.s, q.t, w4)
    return float(L_closed(q.s, q.t, w4))


def shape_PT(q: ShapeQuery) -> float:
    _need(q, "PT", 3)
    return float(PT_closed(q.s, q.t, *q.omegas))


def shape_Tr(q: ShapeQuery, method: str = "quad") -> float:
    _need(q, "Tr", 3)
    f = Tr_quad if method == "quad" else Tr_exact
    return f(q.s, q.t, q.k, *q.ints)


def shape_V(q: ShapeQuery, method: str = "quad") -> float:
    _need(q, "V", 3)
    f = V_quad if method == "quad" else V_exact
    return f(q.s, q.t, q.k, q.kp, *q.ints)


def verify_bound(lemma: str, caps=(32, 64), **params):
    """Ratio report for one estimate; see :mod:`kspara.estimates`."""
    from .estimates import verify_bound as _vb

    return _vb(lemma, caps=caps, **params)
