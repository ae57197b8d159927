"""Experiment drivers behind the command line: rate studies, Monte Carlo checks, reports.

Every driver takes a :class:`RunConfig`, writes its CSV (and SVG where a
plot is useful) plus a JSON manifest into ``cfg.out`` and returns a
:class:`StudyResult`.  CSV content depends only on the configuration, so
reruns from a manifest are byte-identical.
"""

from __future__ import annotations

import dataclasses
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import io
from .enhancement import (
    build_enhancement,
    counterterm_tl,
    diagram_tc,
    moment_stats,
    tc_from_pair,
)
from .littlewood_paley import besov_norm, bony_parts, holder_norm, matrix_holder_norm, partition_for
from .noise import (
    brownian_batch,
    derive_seed,
    mollifier_symbol,
    ou_variance,
    parse_sigma,
    parse_trig,
    sample_increments,
    sample_ou_pair,
    stochastic_convolution,
    trig_coeffs,
)
from .spectral_core import Lattice, SpectralField
from .solver import ansatz_defect, deterministic_ks, solve_paracontrolled, solve_rho_delta, weighted_norms

DELTA_MAX = 1.0 - math.sqrt(2.0) / 2.0
TRIG_SIGMA = "trig:1;0.5:1:0:cos"


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """Parameters of one run; unknown keys in a JSON config are rejected."""

    experiment: str = "counterterm"
    N: int = 16
    T: float = 0.5
    steps: int = 10
    deltas: tuple = (1 / 8, 1 / 16, 1 / 32, 1 / 64, 1 / 128)
    eps: float = 0.05
    samples: int = 10
    seed: int = 0
    sigma: str = TRIG_SIGMA
    out: str = "runs"
    # per-experiment extras
    N_scale: float | None = None  # counterterm: N = N_scale / delta
    Ns: tuple = (16, 32, 64)  # tc study lattices
    rho0: str = "trig:1;0.5:1:0:cos"
    mode: str = "both"  # simulate: direct | paracontrolled | both
    rule: str = "left"
    lemmas: tuple = ()
    max_freq: int = 64
    field: str | None = None  # besov input
    alphas: tuple = (-1.05, -0.05, 0.0)
    p: float = math.inf
    q: float = math.inf
    studies: tuple = ()

    def __post_init__(self):
        self.deltas = tuple(float(d) for d in self.deltas)
        self.Ns = tuple(int(n) for n in self.Ns)
        self.lemmas = tuple(self.lemmas)
        self.studies = tuple(self.studies)
        self.alphas = tuple(float(a) for a in self.alphas)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        bad = sorted(set(d) - names)
        if bad:
            raise ValueError(f"unknown config keys: {', '.join(bad)}")
        d = dict(d)
        for k in ("p", "q"):
            if isinstance(d.get(k), str):
                d[k] = float(d[k])
        return cls(**d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("p", "q"):
            if math.isinf(d[k]):
                d[k] = "inf"
        return d

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def N_for(self, delta: float) -> int:
        if self.N_scale is None:
            return self.N
        return int(round(self.N_scale / delta))

    def validate(self, check_deltas: bool = True) -> "RunConfig":
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0.0 < self.eps < 1.0:
            raise ValueError("eps must lie in (0, 1)")
        if self.T <= 0:
            raise ValueError("T must be positive")
        if check_deltas:
            for d in self.deltas:
                if d <= 0:
                    raise ValueError(f"delta={d} must be positive")
                if 1.0 / d > self.N_for(d) + 1e-9:
                    raise ValueError(f"1/delta = {1 / d:g} exceeds N = {self.N_for(d)}; the mollifier would act trivially")
        return self


@dataclass
class StudyResult:
    name: str
    files: list = field(default_factory=list)
    results: dict = field(default_factory=dict)


def _outdir(cfg: RunConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def threads() -> int:
    try:
        return max(1, int(os.environ.get("KS_PARA_THREADS", "1")))
    except ValueError:
        return 1


def pmap(fn: Callable, items: Sequence) -> list:
    """Order-preserving map, threaded when ``KS_PARA_THREADS > 1``."""
    n = threads()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def _finish(cfg: RunConfig, name: str, files: list, results: dict, seeds, t0: float) -> StudyResult:
    man = io.write_manifest(_outdir(cfg) / f"{name}_manifest.json", cfg.to_dict(), seeds, time.perf_counter() - t0, results)
    return StudyResult(name, [*files, man], results)


def parse_density(desc: str, lat: Lattice) -> np.ndarray:
    """``const:c``, ``trig:<spec>`` or ``file:<path>`` (binary field container)."""
    kind, _, arg = desc.partition(":")
    if kind == "const":
        return lat.mode((0, 0), float(arg))
    if kind == "trig":
        return trig_coeffs(parse_trig(arg), lat)
    if kind == "file":
        from .noise import resample

        f = io.read_field(arg)
        return resample(f.coeffs, f.lattice, lat)
    raise ValueError(f"unknown density descriptor {desc!r}")


def _sigma(cfg: RunConfig, lat: Lattice):
    rho0 = parse_density(cfg.rho0, lat) if cfg.sigma.startswith("sqrt-det") else None
    return parse_sigma(cfg.sigma, cfg.T, cfg.steps, lat, rho0)


# ---------------------------------------------------------------------------
# fits


def linear_fit(x, y) -> dict:
    """Least squares ``y = slope x + intercept`` with residual sum of squares and R^2."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.size < 2:
        return {"slope": None, "intercept": None, "r2": None, "rss": None}
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    rss = float(np.sum((y - (slope * x + icpt)) ** 2))
    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    return {"slope": float(slope), "intercept": float(icpt), "r2": float(r2), "rss": rss}


# ---------------------------------------------------------------------------
# counterterm rate


def _is_dyadic(d: float) -> bool:
    k = -math.log2(d)
    return abs(k - round(k)) < 1e-12


def run_counterterm_study(cfg: RunConfig) -> StudyResult:
    """``||tl^delta(T)||_{C^-eps}`` against ``log(1/delta)`` with a least-squares fit."""
    cfg.validate()
    for d in cfg.deltas:
        if not _is_dyadic(d) or d > DELTA_MAX:
            raise ValueError(f"delta={d} must be dyadic and at most 1 - sqrt(2)/2")
    t0 = time.perf_counter()
    rows, sups, per = [], [], {}
    for d in cfg.deltas:
        lat = Lattice(cfg.N_for(d))
        sig = _sigma(cfg, lat)
        tl = counterterm_tl(sig, mollifier_symbol(d), lat, rule=cfg.rule)
        part = partition_for(lat.N)
        norms = holder_norm(tl, lat, -cfg.eps, part)  # per grid time
        rows.append((d, math.log(1.0 / d), float(norms[-1]), sig.sobolev_h2**2))
        sups.append(float(np.max(norms)))
        per[repr(d)] = {"N": lat.N, "sup_grid_norm": float(np.max(norms)), "max_abs_coeff": float(np.max(np.abs(tl)))}
    out = _outdir(cfg)
    csv = io.write_csv(out / "counterterm.csv", ("delta", "log_inv_delta", "norm", "sigma_h2_sq"), rows)
    x = [r[1] for r in rows]
    y = [r[2] for r in rows]
    fit = linear_fit(x, y)
    inv = linear_fit([1.0 / r[0] for r in rows], y)
    series = [{"x": x, "y": y, "label": "norm"}]
    if fit["slope"] is not None:
        xs = np.linspace(min(x), max(x), 2)
        series.append({"x": xs, "y": fit["slope"] * xs + fit["intercept"], "label": "log fit", "dash": True, "marker": False})
    svg = io.line_plot(out / "counterterm.svg", series, "log(1/delta)", "||tl(T)||_C^-eps", "counterterm growth")
    res = {
        "fit": fit,
        "inverse_delta_fit": inv,
        "norms": y,
        "sup_over_grid": max(sups) if sups else None,
        "per_delta": per,
        "mollifier_resolved": all(1.0 / d <= cfg.N_for(d) for d in cfg.deltas),
    }
    return _finish(cfg, "counterterm", [csv, svg], res, [], t0)


# ---------------------------------------------------------------------------
# tc cancellation


def _tc_norms(N: int, T: float, seed: int, eps: float, sigma: str, steps: int, rule: str) -> tuple:
    lat = Lattice(N)
    part = partition_for(N)
    kind, _, arg = sigma.partition(":")
    if kind == "const":
        ti, Iti = sample_ou_pair(lat, T, seed, sigma0=float(arg))
        tc, f1, f2 = tc_from_pair(ti, Iti, lat, part)
    else:
        sig = parse_sigma(sigma, T, steps, lat)
        ti = stochastic_convolution(sample_increments(lat, T / steps, steps, seed), sig, None, lat)
        tc, f1, f2 = (x[0] for x in diagram_tc(ti, T / steps, lat, rule, steps=[steps], part=part))
    return tuple(float(matrix_holder_norm(x, lat, -eps, part)) for x in (f1, f2, tc))


def run_tc_study(cfg: RunConfig) -> StudyResult:
    """Medians of ``||summand_i||_{C^-eps}`` and ``||tc||_{C^-eps}`` at time ``T`` over lattices ``Ns``."""
    cfg.validate(check_deltas=False)
    t0 = time.perf_counter()
    seeds = [derive_seed(cfg.seed, s) for s in range(cfg.samples)]
    rows, med = [], {}
    for N in cfg.Ns:
        vals = pmap(lambda sd: _tc_norms(N, cfg.T, sd, cfg.eps, cfg.sigma, cfg.steps, cfg.rule), seeds)
        for s, (sd, v) in enumerate(zip(seeds, vals)):
            rows.append((N, s, sd, *v))
        med[N] = [float(np.median([v[q] for v in vals])) for q in range(3)]
    csv = io.write_csv(_outdir(cfg) / "tc.csv", ("N", "sample", "seed", "first", "second", "tc"), rows)
    Ns = list(cfg.Ns)
    ratios = [[med[b][q] / med[a][q] for a, b in zip(Ns, Ns[1:])] for q in range(3)]
    svg = io.line_plot(
        _outdir(cfg) / "tc.svg",
        [{"x": np.log2(Ns), "y": [med[n][q] for n in Ns], "label": lab} for q, lab in enumerate(("first", "second", "tc"))],
        "log2 N", "median C^-eps norm", "tc summands and sum",
    )
    res = {
        "medians": {str(n): dict(zip(("first", "second", "tc"), med[n])) for n in Ns},
        "ratios": dict(zip(("first", "second", "tc"), ratios)),
        "sampler": "exact-pair" if cfg.sigma.startswith("const") else "stepped",
    }
    return _finish(cfg, "tc", [csv, svg], res, seeds, t0)


# ---------------------------------------------------------------------------
# Ito isometry


def ito_frequencies(lat: Lattice, seed: int, weight: Callable[[tuple], float], count: int = 5) -> list[tuple[int, int]]:
    """Distinct frequencies, one per conjugate pair, drawn uniformly among those with ``weight > 0``.

    Modes outside the mollifier's support carry no noise and make a vacuous test.
    """
    rng = np.random.default_rng(seed)
    pool = [(a, b) for a in range(-lat.N, lat.N + 1) for b in range(-lat.N, lat.N + 1) if (a, b) > (0, 0)]
    vals = np.array([weight(w) for w in pool])
    pool = [w for w, v in zip(pool, vals) if v > 1e-12 * vals.max()]
    if len(pool) < count:
        raise ValueError(f"only {len(pool)} frequencies carry noise")
    idx = rng.choice(len(pool), size=count, replace=False)
    return [pool[i] for i in sorted(idx)]


def run_ito_check(cfg: RunConfig, chunk: int = 500) -> StudyResult:
    """Monte Carlo ``E|ti^delta(T, w)|^2`` against the closed-form Ornstein-Uhlenbeck variance."""
    cfg.validate()
    t0 = time.perf_counter()
    d = cfg.deltas[0]
    lat = Lattice(cfg.N)
    sig = _sigma(cfg, lat)
    if not sig.is_constant_in_time:
        raise ValueError("the closed-form variance needs sigma constant in time")
    moll = mollifier_symbol(d)
    sig0 = sig.at_step(0)
    ws = ito_frequencies(lat, cfg.seed, lambda w: ou_variance(sig0, moll, lat, cfg.T, w))
    idx = tuple(np.array([lat.index(w) for w in ws]).T)
    seeds = [derive_seed(cfg.seed, s) for s in range(cfg.samples)]
    acc = []
    for c in range(0, len(seeds), chunk):
        dW = brownian_batch(lat, cfg.T, cfg.steps, seeds[c : c + chunk])
        ti = stochastic_convolution(dW, sig, moll, lat)[:, -1]
        acc.append(np.abs(ti[(slice(None),) + idx]) ** 2)
    X = np.concatenate(acc)
    rows, z = [], []
    for i, w in enumerate(ws):
        mean, se = moment_stats(X[:, i])
        exact = ou_variance(sig0, moll, lat, cfg.T, w)
        zi = (mean - exact) / se if se > 0 else (0.0 if mean == exact else math.inf)
        z.append(zi)
        rows.append((w[0], w[1], cfg.T, mean, se, exact, zi))
    csv = io.write_csv(_outdir(cfg) / "ito.csv", ("w1", "w2", "t", "mc_mean", "se", "exact", "z"), rows)
    res = {"frequencies": ws, "z": z, "max_abs_z": float(np.max(np.abs(z)))}
    return _finish(cfg, "ito", [csv], res, seeds, t0)


# ---------------------------------------------------------------------------
# Cauchy in delta


def run_cauchy_study(cfg: RunConfig) -> StudyResult:
    """``||rho^{2 delta}(T) - rho^delta(T)||_{C^{-1-eps}}`` with one noise path per sample shared by all ``delta``."""
    cfg.validate()
    t0 = time.perf_counter()
    lat = Lattice(cfg.N)
    part = partition_for(lat.N)
    sig = _sigma(cfg, lat)
    rho0 = parse_density(cfg.rho0, lat)
    fine = sorted(cfg.deltas, reverse=True)
    all_d = sorted(set(fine) | {2 * d for d in fine}, reverse=True)
    molls = {d: mollifier_symbol(d) for d in all_d}
    tls = {d: counterterm_tl(sig, molls[d], lat, rule=cfg.rule) for d in all_d}
    seeds = [derive_seed(cfg.seed, s) for s in range(cfg.samples)]

    def one(sd):
        dW = sample_increments(lat, cfg.T / cfg.steps, cfg.steps, sd)
        fin = {}
        for d in all_d:
            ti = stochastic_convolution(dW, sig, molls[d], lat)
            fin[d] = solve_rho_delta(rho0, ti, tls[d], cfg.T, lat, cfg.rule).rho[-1]
        return [float(holder_norm(fin[2 * d] - fin[d], lat, -1.0 - cfg.eps, part)) for d in fine]

    vals = pmap(one, seeds)
    rows = [(s, sd, d, v[i]) for s, (sd, v) in enumerate(zip(seeds, vals)) for i, d in enumerate(fine)]
    csv = io.write_csv(_outdir(cfg) / "cauchy.csv", ("sample", "seed", "delta", "diff"), rows)
    med = [float(np.median([v[i] for v in vals])) for i in range(len(fine))]
    svg = io.line_plot(_outdir(cfg) / "cauchy.svg", [{"x": [math.log2(1 / d) for d in fine], "y": med, "label": "median"}],
                       "log2(1/delta)", "||rho^2d - rho^d||", "Cauchy in delta")
    dec = all(b < a for a, b in zip(med, med[1:]))
    res = {"deltas": fine, "medians": med, "strictly_decreasing": dec}
    return _finish(cfg, "cauchy", [csv, svg], res, seeds, t0)


# ---------------------------------------------------------------------------
# 1-D product rule


def _dx(c: np.ndarray, k: np.ndarray, power: int) -> np.ndarray:
    """``d_x^power`` on coefficients ``c[k]``; negative powers act on mean-free input and return mean-free output."""
    sym = np.zeros_like(k, dtype=complex)
    nz = k != 0
    sym[nz] = (2j * np.pi * k[nz]) ** power
    if power >= 0:
        sym[~nz] = 1.0 if power == 0 else 0.0
    return sym * c


def _conv1(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact coefficients of the product of two centred 1-D spectra; the band widens."""
    return np.convolve(a, b)


def product_rule_defect(u: np.ndarray) -> tuple[float, float]:
    """``max|LHS|`` and ``max|LHS - RHS|`` for ``u d_x d_x^{-2} u = (d_x^2(d_x^{-1}u d_x^{-2}u) - d_x(u d_x^{-2}u)) / 2``.

    ``u`` holds coefficients for ``k = -N..N``.
    """
    u = np.asarray(u, dtype=complex)
    N = u.size // 2
    if abs(u[N]) > 1e-14 * max(1.0, float(np.max(np.abs(u)))):
        raise ValueError("input must be mean-free")
    k = np.arange(-N, N + 1)
    i1, i2 = _dx(u, k, -1), _dx(u, k, -2)
    lhs = _conv1(u, _dx(i2, k, 1))
    k2 = np.arange(-2 * N, 2 * N + 1)
    rhs = 0.5 * (_dx(_conv1(i1, i2), k2, 2) - _dx(_conv1(u, i2), k2, 1))
    scale = max(1.0, float(np.max(np.abs(lhs))))
    return float(np.max(np.abs(lhs))), float(np.max(np.abs(lhs - rhs))) / scale


def random_mean_free(N: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    c = rng.normal(size=N + 1) + 1j * rng.normal(size=N + 1)
    c[0] = 0.0
    return np.concatenate([np.conj(c[:0:-1]), c])


def run_product_rule_demo(cfg: RunConfig) -> StudyResult:
    t0 = time.perf_counter()
    seeds = [derive_seed(cfg.seed, s) for s in range(cfg.samples)]
    rows = []
    zero = np.zeros(2 * cfg.N + 1, complex)
    sine = zero.copy()
    sine[cfg.N + 1], sine[cfg.N - 1] = 0.5j, -0.5j  # sin(2 pi x) up to sign convention
    for name, u in [("zero", zero), ("sine", sine)] + [(f"random:{sd}", random_mean_free(cfg.N, sd)) for sd in seeds]:
        rows.append((name, cfg.N, *product_rule_defect(u)))
    csv = io.write_csv(_outdir(cfg) / "product_rule.csv", ("case", "N", "max_abs_lhs", "rel_defect"), rows)
    res = {"max_rel_defect": max(r[3] for r in rows)}
    return _finish(cfg, "product_rule", [csv], res, seeds, t0)


# ---------------------------------------------------------------------------
# algebraic identities, shape oracle, estimate suite


def run_identities(cfg: RunConfig) -> StudyResult:
    """Bony reconstruction, partition of unity and the product rule on random band-limited data."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    lat = Lattice(cfg.N)
    part = partition_for(lat.N)
    rows = []
    bony = 0.0
    for s in range(max(cfg.samples, 1)):
        u = lat.hermitize(rng.normal(size=lat.shape) + 1j * rng.normal(size=lat.shape))
        v = lat.hermitize(rng.normal(size=lat.shape) + 1j * rng.normal(size=lat.shape))
        a, b, c = bony_parts(u, v, lat, part)
        p = lat.product(u, v)
        bony = max(bony, float(np.max(np.abs(a + b + c - p)) / np.max(np.abs(p))))
    rows.append(("bony_reconstruction", cfg.N, bony))
    pou = max(float(np.max(np.abs(partition_for(n).blocks.sum(axis=0) - 1.0))) for n in (4, 8, 16, 32, 64, cfg.N))
    rows.append(("partition_of_unity", cfg.N, pou))
    pr = max(product_rule_defect(random_mean_free(cfg.N, derive_seed(cfg.seed, s)))[1] for s in range(max(cfg.samples, 1)))
    rows.append(("product_rule", cfg.N, pr))
    csv = io.write_csv(_outdir(cfg) / "identities.csv", ("identity", "N", "max_defect"), rows)
    res = {r[0]: r[2] for r in rows}
    return _finish(cfg, "identities", [csv], res, [cfg.seed], t0)


def shape_queries(count: int, seed: int, nmax: int = 8):
    """Random ``(s, t, w1, w2)`` with ``|t - s|`` on the scale ``1/B`` of the decay rate, so values stay representable."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        n1 = rng.integers(-nmax, nmax + 1, 2)
        n2 = rng.integers(-nmax, nmax + 1, 2)
        if len(out) % 5 == 0:  # orthogonal pairs exercise the degenerate branch
            n2 = np.array([-n1[1], n1[0]]) * rng.integers(1, 3)
        if not (n1.any() and n2.any() and (n1 + n2).any()):
            continue
        B = 4 * np.pi**2 * float(n1 @ n1 + n2 @ n2)
        s = float(rng.uniform(0.0, 1.0))
        t = abs(s + float(rng.uniform(-1.0, 1.0)) * 10.0 / B)
        out.append((s, t, tuple(int(x) for x in n1), tuple(int(x) for x in n2)))
    return out


def run_shape_study(cfg: RunConfig) -> StudyResult:
    """Closed form against adaptive quadrature for ``Y`` and ``L``; sign of ``D``."""
    from .shape_oracle import D_closed, L_closed, L_quad, Y_closed, Y_quad

    t0 = time.perf_counter()
    rows = []
    ry, rl, dmin = 0.0, 0.0, math.inf
    for i, (s, t, n1, n2) in enumerate(shape_queries(cfg.samples, cfg.seed)):
        w1, w2 = 2 * np.pi * np.array(n1, float), 2 * np.pi * np.array(n2, float)
        c, q = float(Y_closed(s, t, w1, w2)), Y_quad(s, t, w1, w2)
        dv = float(D_closed(s, t, w1, w2))
        rel = abs(c - q) / abs(q)
        ry, dmin = max(ry, rel), min(dmin, dv)
        rows.append(("Y", i, s, t, f"{n1};{n2}", c, q, rel, dv))
    rng = np.random.default_rng(cfg.seed + 1)
    for i in range(cfg.samples):
        n = rng.integers(-16, 17, 2)
        while not n.any():
            n = rng.integers(-16, 17, 2)
        a = 4 * np.pi**2 * float(n @ n)
        s = float(rng.uniform(0.0, 1.0))
        t = abs(s + float(rng.uniform(-1.0, 1.0)) * 10.0 / a)
        w = 2 * np.pi * n.astype(float)
        c, q = float(L_closed(s, t, w)), L_quad(s, t, w)
        rel = abs(c - q) / abs(q)
        rl = max(rl, rel)
        rows.append(("L", i, s, t, f"{tuple(int(x) for x in n)}", c, q, rel, ""))
    csv = io.write_csv(_outdir(cfg) / "shape.csv", ("kind", "index", "s", "t", "freqs", "closed", "quad", "rel_err", "D"), rows)
    res = {"max_rel_Y": ry, "max_rel_L": rl, "min_D": dmin}
    return _finish(cfg, "shape", [csv], res, [cfg.seed], t0)


def run_verify(cfg: RunConfig) -> StudyResult:
    """Every requested lemma at caps ``max_freq/2`` and ``max_freq``."""
    from .estimates import LEMMAS, lattice_sums, restricted_sum, verify_bound  # noqa: F401

    t0 = time.perf_counter()
    lemmas = cfg.lemmas or LEMMAS
    caps = (cfg.max_freq // 2, cfg.max_freq)
    rows, summary = [], {}
    for lem in lemmas:
        rep = verify_bound(lem, caps)
        rows.extend(rep.csv_rows())
        summary[lem] = {
            "max_ratio": [rep.max_ratio(c) for c in caps],
            "growth": rep.growth,
            "passed": bool(rep.passed),
        }
    csv = io.write_csv(_outdir(cfg) / "estimates.csv", ("lemma", "params", "lhs", "rhs", "ratio"), rows)
    res = {"caps": caps, "lemmas": summary, "all_passed": all(v["passed"] for v in summary.values())}
    return _finish(cfg, "estimates", [csv], res, [], t0)


# ---------------------------------------------------------------------------
# solvers


def _sample_model(cfg: RunConfig, lat: Lattice, delta: float, seed: int):
    sig = _sigma(cfg, lat)
    moll = mollifier_symbol(delta)
    ti = stochastic_convolution(sample_increments(lat, cfg.T / cfg.steps, cfg.steps, seed), sig, moll, lat)
    tl = counterterm_tl(sig, moll, lat, rule=cfg.rule)
    return ti, tl


def run_solver_check(cfg: RunConfig) -> StudyResult:
    """Route equivalence, Ansatz and decomposition identities, mass, and the zero-noise reduction."""
    cfg.validate()
    t0 = time.perf_counter()
    lat = Lattice(cfg.N)
    part = partition_for(lat.N)
    rho0 = parse_density(cfg.rho0, lat)
    ti, tl = _sample_model(cfg, lat, cfg.deltas[0], cfg.seed)
    dt = cfg.T / cfg.steps
    enh = build_enhancement(ti, tl, dt, lat, cfg.rule)
    d = solve_rho_delta(rho0, ti, tl, cfg.T, lat, cfg.rule)
    p = solve_paracontrolled(rho0, enh, cfg.T, lat, cfg.rule, eps=cfg.eps)
    m0 = lat.mean(rho0)
    det = deterministic_ks(rho0, cfg.T, cfg.steps, lat, cfg.rule)
    zero = lat.zeros(cfg.steps + 1)
    d0 = solve_rho_delta(rho0, zero, zero, cfg.T, lat, cfg.rule)
    p0 = solve_paracontrolled(rho0, build_enhancement(zero, zero, dt, lat, cfg.rule), cfg.T, lat, cfg.rule, eps=cfg.eps)
    res = {
        "route_diff": float(holder_norm(d.rho[-1] - p.rho[-1], lat, -cfg.eps, part)),
        "ansatz_defect": ansatz_defect(p, enh, cfg.T, lat, cfg.rule),
        "decomposition_defect": float(np.max(np.abs(p.rho - (enh.ti + enh.ty + p.w)))),
        "mass_drift": float(max(np.max(np.abs(lat.mean(d.rho) - m0)), np.max(np.abs(lat.mean(p.rho) - m0)))),
        "zero_noise_direct": float(np.max(np.abs(d0.rho - det))),
        "zero_noise_paracontrolled": float(np.max(np.abs(p0.rho - det))),
        "iterations": len(p.residuals),
    }
    csv = io.write_csv(_outdir(cfg) / "solver_check.csv", ("quantity", "value"), sorted(res.items()))
    return _finish(cfg, "solver_check", [csv], res, [cfg.seed], t0)


def _norm_rows(route: str, path: np.ndarray, lat: Lattice, dt: float, eps: float, part):
    hn = holder_norm(path, lat, -1.0 - eps, part)
    for i in range(path.shape[0]):
        yield (i * dt, route, float(lat.mean(path[i]).real), float(lat.l2_norm(path[i])), float(hn[i]))


def run_simulate(cfg: RunConfig) -> StudyResult:
    """One sample of ``rho^delta`` by the direct route, the paracontrolled route, or both."""
    cfg.validate()
    if cfg.mode not in ("direct", "paracontrolled", "both"):
        raise ValueError(f"unknown mode {cfg.mode!r}")
    t0 = time.perf_counter()
    lat = Lattice(cfg.N)
    part = partition_for(lat.N)
    out = _outdir(cfg)
    rho0 = parse_density(cfg.rho0, lat)
    ti, tl = _sample_model(cfg, lat, cfg.deltas[0], cfg.seed)
    dt = cfg.T / cfg.steps
    rows, files, res = [], [], {}
    paths = {}
    if cfg.mode in ("direct", "both"):
        paths["direct"] = solve_rho_delta(rho0, ti, tl, cfg.T, lat, cfg.rule).rho
    if cfg.mode in ("paracontrolled", "both"):
        enh = build_enhancement(ti, tl, dt, lat, cfg.rule)
        st = solve_paracontrolled(rho0, enh, cfg.T, lat, cfg.rule, eps=cfg.eps)
        paths["paracontrolled"] = st.rho
        res["iterations"] = len(st.residuals)
    for route, path in paths.items():
        rows.extend(_norm_rows(route, path, lat, dt, cfg.eps, part))
        files.append(io.write_field(out / f"rho_{route}.ksf", SpectralField(lat, path, time_tag=cfg.T)))
        res[f"weighted_{route}"] = weighted_norms(path, dt, lat, -1.0 - cfg.eps, part=part)
    if len(paths) == 2:
        res["route_diff"] = float(holder_norm(paths["direct"][-1] - paths["paracontrolled"][-1], lat, -cfg.eps, part))
    csv = io.write_csv(out / "simulate_norms.csv", ("t", "route", "mass", "l2", "holder_m1_eps"), rows)
    return _finish(cfg, "simulate", [csv, *files], res, [cfg.seed], t0)


def run_deterministic(cfg: RunConfig) -> StudyResult:
    cfg.validate(check_deltas=False)
    t0 = time.perf_counter()
    lat = Lattice(cfg.N)
    rho0 = parse_density(cfg.rho0, lat)
    path = deterministic_ks(rho0, cfg.T, cfg.steps, lat, cfg.rule)
    dt = cfg.T / cfg.steps
    sup = np.max(np.abs(lat.to_grid(path)), axis=(-2, -1))
    rows = [(i * dt, float(lat.mean(path[i]).real), float(lat.l2_norm(path[i])), float(sup[i])) for i in range(path.shape[0])]
    out = _outdir(cfg)
    csv = io.write_csv(out / "deterministic.csv", ("t", "mass", "l2", "sup"), rows)
    fld = io.write_field(out / "rho_deterministic.ksf", SpectralField(lat, path, time_tag=cfg.T))
    return _finish(cfg, "deterministic", [csv, fld], {"final_sup": float(sup[-1])}, [], t0)


# ---------------------------------------------------------------------------
# enhancement moments and Besov report


DIAGRAM_REGULARITY = {"ti": -1.0, "ty": 0.0, "tp": 0.0, "tc": 0.0, "tl": 0.0}


def run_enhance(cfg: RunConfig) -> StudyResult:
    """``E||X(t)||_{C^{alpha - eps}}`` per diagram and grid time, with jackknife standard errors."""
    cfg.validate()
    t0 = time.perf_counter()
    lat = Lattice(cfg.N)
    part = partition_for(lat.N)
    dt = cfg.T / cfg.steps
    seeds = [derive_seed(cfg.seed, s) for s in range(cfg.samples)]

    def norms(sd):
        ti, tl = _sample_model(cfg, lat, cfg.deltas[0], sd)
        e = build_enhancement(ti, tl, dt, lat, cfg.rule)
        out = {}
        for name, X in (("ti", e.ti), ("ty", e.ty), ("tl", e.tl)):
            out[name] = holder_norm(X, lat, DIAGRAM_REGULARITY[name] - cfg.eps, part)
        out["tp"] = holder_norm(e.tp, lat, -cfg.eps, part, vector=True)
        out["tc"] = matrix_holder_norm(e.tc, lat, -cfg.eps, part)
        return out

    per = pmap(norms, seeds)
    rows = []
    for name in ("ti", "ty", "tp", "tc", "tl"):
        kind = f"C^{DIAGRAM_REGULARITY[name] - cfg.eps:g}"
        for i in range(cfg.steps + 1):
            m, se = moment_stats([p[name][i] for p in per]) if len(per) > 1 else (float(per[0][name][i]), math.nan)
            rows.append((name, i * dt, kind, cfg.eps, m, se))
    csv = io.write_csv(_outdir(cfg) / "enhance.csv", ("diagram", "t", "norm_kind", "eps", "value", "se"), rows)
    return _finish(cfg, "enhance", [csv], {}, seeds, t0)


def run_besov(cfg: RunConfig) -> StudyResult:
    if not cfg.field:
        raise ValueError("besov needs a field file")
    t0 = time.perf_counter()
    f = io.read_field(cfg.field)
    lat = f.lattice
    part = partition_for(lat.N)
    c = f.coeffs.reshape((-1,) + lat.shape)
    rows = []
    for i in range(c.shape[0]):
        for a in cfg.alphas:
            v = float(besov_norm(c[i], lat, a, cfg.p, cfg.q, part))
            rows.append((i, a, cfg.p, cfg.q, v))
    csv = io.write_csv(_outdir(cfg) / "besov.csv", ("field", "alpha", "p", "q", "value"), rows)
    return _finish(cfg, "besov", [csv], {}, [], t0)


# ---------------------------------------------------------------------------
# acceptance bundle


STUDIES: dict[str, Callable[[RunConfig], StudyResult]] = {
    "counterterm": run_counterterm_study,
    "tc": run_tc_study,
    "ito": run_ito_check,
    "cauchy": run_cauchy_study,
    "product-rule": run_product_rule_demo,
    "identities": run_identities,
    "shape": run_shape_study,
    "verify": run_verify,
    "solver": run_solver_check,
    "simulate": run_simulate,
    "deterministic": run_deterministic,
    "enhance": run_enhance,
    "besov": run_besov,
}

_POW = lambda a, b: tuple(2.0**-k for k in range(a, b + 1))  # noqa: E731

# criterion -> (title, study, overrides)
ACCEPTANCE: dict[int, tuple[str, str, dict]] = {
    1: ("constant-sigma cancellation", "counterterm", dict(sigma="const:1", deltas=_POW(3, 6), N_scale=2, T=0.5)),
    2: ("log-divergence rate", "counterterm", dict(sigma=TRIG_SIGMA, deltas=_POW(3, 7), N_scale=2, T=0.5, eps=0.05)),
    3: ("tc symmetry cancellation", "tc", dict(sigma="const:1", Ns=(16, 32, 64), samples=100, T=0.25, eps=0.05)),
    4: ("Ito isometry", "ito", dict(sigma=TRIG_SIGMA, N=8, deltas=(0.25,), T=0.5, steps=10, samples=10_000)),
    5: ("estimate verification", "verify", dict(max_freq=64)),
    6: ("shape-coefficient oracle", "shape", dict(samples=1000)),
    7: ("solver equivalence", "solver", dict(sigma=TRIG_SIGMA, N=16, deltas=(0.25,), T=0.05, steps=10)),
    8: ("Cauchy in delta", "cauchy", dict(sigma=TRIG_SIGMA, N=32, deltas=(0.25, 0.125, 0.0625), T=0.05, steps=10, samples=50)),
    9: ("algebraic identities", "identities", dict(N=16, samples=4)),
}


def judge(criterion: int, r: dict) -> tuple[bool, str]:
    """Pass/fail of an acceptance criterion from a study's results, with a one-line detail."""
    if criterion == 1:
        v = max(r["sup_over_grid"], max(p["max_abs_coeff"] for p in r["per_delta"].values()))
        return v <= 1e-10, f"max over t, delta = {v:.3e}"
    if criterion == 2:
        f, g = r["fit"], r["inverse_delta_fit"]
        ok = f["r2"] >= 0.95 and f["slope"] > 0 and f["rss"] < g["rss"]
        return ok, f"R2 = {f['r2']:.4f}, slope = {f['slope']:.3e}, rss log {f['rss']:.3e} vs 1/delta {g['rss']:.3e}"
    if criterion == 3:
        q = r["ratios"]
        ok = all(x >= 1.10 for x in q["first"] + q["second"]) and all(abs(x - 1) <= 0.10 for x in q["tc"])
        return ok, "ratios " + ", ".join(f"{k}={[round(x, 3) for x in v]}" for k, v in q.items())
    if criterion == 4:
        return r["max_abs_z"] <= 3.0, f"max |z| = {r['max_abs_z']:.3f}"
    if criterion == 5:
        bad = [k for k, v in r["lemmas"].items() if not v["passed"]]
        return r["all_passed"], "all lemmas pass" if not bad else f"failing: {', '.join(bad)}"
    if criterion == 6:
        ok = r["max_rel_Y"] <= 1e-8 and r["max_rel_L"] <= 1e-8 and r["min_D"] >= 0
        return ok, f"Y {r['max_rel_Y']:.2e}, L {r['max_rel_L']:.2e}, min D {r['min_D']:.3e}"
    if criterion == 7:
        ok = (r["route_diff"] <= 1e-6 and r["ansatz_defect"] <= 1e-9 and r["decomposition_defect"] <= 1e-9
              and r["mass_drift"] <= 1e-10 and r["zero_noise_direct"] <= 1e-9 and r["zero_noise_paracontrolled"] <= 1e-9)
        return ok, ", ".join(f"{k} {v:.2e}" for k, v in r.items() if k != "iterations")
    if criterion == 8:
        return r["strictly_decreasing"], "medians " + ", ".join(f"{m:.4g}" for m in r["medians"])
    if criterion == 9:
        ok = r["bony_reconstruction"] <= 1e-12 and r["product_rule"] <= 1e-10 and r["partition_of_unity"] <= 1e-12
        return ok, ", ".join(f"{k} {v:.2e}" for k, v in r.items())
    raise KeyError(criterion)


def run_all(cfg: RunConfig, criteria: Sequence[int] | None = None) -> dict:
    """Run the acceptance studies listed in ``cfg.studies`` (criterion numbers or study names).

    Returns ``{"results": {key: StudyResult}, "summary": [(criterion, title, status, detail)]}``
    and writes ``summary.csv``.  Failures inside a study are recorded, not raised.
    """
    keys = list(criteria) if criteria is not None else list(cfg.studies)
    bundle: dict = {"results": {}, "summary": []}
    if not keys:
        return bundle
    base = Path(cfg.out)
    for key in keys:
        if str(key).isdigit():
            c = int(key)
            title, study, over = ACCEPTANCE[c]
            sub = cfg.replace(**over, out=str(base / f"criterion_{c}"))
        else:
            c, title, study, sub = None, str(key), str(key), cfg.replace(out=str(base / str(key)))
        try:
            res = STUDIES[study](sub)
            bundle["results"][str(key)] = res
            if c is not None:
                ok, detail = judge(c, res.results)
                bundle["summary"].append((c, title, "PASS" if ok else "FAIL", detail))
            else:
                bundle["summary"].append(("", title, "DONE", ""))
        except Exception as e:  # recorded in the summary
            bundle["summary"].append((c if c is not None else "", title, "ERROR", f"{type(e).__name__}: {e}"))
    base.mkdir(parents=True, exist_ok=True)
    io.write_csv(base / "summary.csv", ("criterion", "title", "status", "detail"), bundle["summary"])
    return bundle
