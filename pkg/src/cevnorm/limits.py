"""Theoretical limit laws for the two norming schemes.

Under random norming the limit is the product law G(x1, x2) =
G1(x1)*G2(x2).  Under deterministic norming it is the mixture law

    H(x1, x2) = int_1^inf G1((x1 - psi1(v))/v**rho1)
                          G2((x2 - psi2(v))/v**rho2) v**-2 dv,

evaluated here after the substitution u = 1/v, which absorbs the v**-2
weight exactly and leaves a bounded integrand on (0, 1].  H factorises
into its marginals iff one coordinate has (kappa, rho) = (0, 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from scipy.optimize import brentq

from .models import CiModel, gv_at_infinity, noise_cdf
from .norming import RHO_BRANCH_CUTOFF

DEFAULT_LEVELS = tuple(round(0.05 * k, 2) for k in range(1, 20))


class QuadConvergenceError(RuntimeError):
    """Adaptive refinement hit max depth; carries the best estimate and gap."""

    def __init__(self, best: float, gap: float):
        super().__init__(
            f"quadrature failed to converge: best estimate {best}, gap {gap}"
        )
        self.best = best
        self.gap = gap


@dataclass(frozen=True)
class QuadOptions:
    abs_tol: float = 1e-9
    max_depth: int = 40
    base_nodes: int = 64

    def __post_init__(self):
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be positive")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.base_nodes < 1:
            raise ValueError("base_nodes must be >= 1")


@dataclass(frozen=True)
class GridSpec:
    levels: tuple = DEFAULT_LEVELS

    def __post_init__(self):
        lv = tuple(float(p) for p in self.levels)
        if not lv:
            raise ValueError("levels must be non-empty")
        if any(not 0.0 < p < 1.0 for p in lv):
            raise ValueError("levels must lie strictly inside (0, 1)")
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise ValueError("levels must be strictly increasing")
        object.__setattr__(self, "levels", lv)


def _adaptive_panel(f, a, b, fa, fm, fb, whole, tol, depth, max_depth):
    # classic adaptive Simpson: accept when the two-level refinement of a
    # panel agrees with the one-level estimate within 15*tol
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    delta = left + right - whole
    # the second acceptance clause floors the halving tolerance at rounding
    # noise so boundary-layer spikes cannot demand sub-epsilon agreement
    if abs(delta) <= 15.0 * tol or abs(delta) <= 1e-16 * (abs(left + right) + 1.0):
        return left + right + delta / 15.0
    if depth >= max_depth:
        raise QuadConvergenceError(left + right + delta / 15.0, abs(delta))
    half = 0.5 * tol
    return _adaptive_panel(f, a, m, fa, flm, fm, left, half, depth + 1, max_depth) + \
        _adaptive_panel(f, m, b, fm, frm, fb, right, half, depth + 1, max_depth)


def integrate_unit_interval(f, opts: QuadOptions) -> float:
    """Adaptive Simpson on [0, 1] over base_nodes panels."""
    nodes = [k / opts.base_nodes for k in range(opts.base_nodes + 1)]
    vals = [f(u) for u in nodes]
    tol = opts.abs_tol / opts.base_nodes
    total = 0.0
    for k in range(opts.base_nodes):
        a, b = nodes[k], nodes[k + 1]
        fa, fb = vals[k], vals[k + 1]
        fm = f(0.5 * (a + b))
        whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
        total += _adaptive_panel(f, a, b, fa, fm, fb, whole, tol, 0, opts.max_depth)
    return total


def product_law_G(model: CiModel, x1: float, x2: float) -> float:
    """Random-norming limit: product of the two noise CDFs."""
    return float(noise_cdf(model.noise1, x1) * noise_cdf(model.noise2, x2))


_SQRT2 = math.sqrt(2.0)


def _scalar_cdf(noise) -> callable:
    # fast python-float CDF; the adaptive scheme makes many scalar calls
    loc, scale, family = noise.location, noise.scale, noise.family
    if family == "gaussian":
        def cdf(x):
            return 0.5 * (1.0 + math.erf((x - loc) / (scale * _SQRT2)))
    elif family == "gumbel":
        def cdf(x):
            s = (x - loc) / scale
            return math.exp(-math.exp(-s)) if s > -30.0 else 0.0
    elif family == "logistic":
        def cdf(x):
            s = (x - loc) / scale
            return 1.0 / (1.0 + math.exp(-s)) if s > -700.0 else 0.0
    else:
        def cdf(x):
            s = (x - loc) / scale
            return 0.0 if s < 0.0 else 1.0 if s > 1.0 else s
    return cdf


def _scalar_gv(model: CiModel, i: int, x: float) -> callable:
    # G_i((x - psi_i(v))/v**rho_i) as a function of v > 0, python floats only
    erv = model.erv(i)
    rho, keff = erv.rho, erv.kappa_eff
    cdf = _scalar_cdf(model.noise(i))
    x = float(x)
    if math.isinf(x):
        const = 1.0 if x > 0 else 0.0
        return lambda v: const
    if abs(rho) >= RHO_BRANCH_CUTOFF:
        def gv(v):
            lv = math.log(v)
            return cdf((x - keff * math.expm1(rho * lv) / rho) * math.exp(-rho * lv))
    else:
        def gv(v):
            return cdf(x - keff * math.log(v))
    return gv


def _mixture_integrand(model: CiModel, x1, x2):
    factors = []
    lim = 1.0
    if x1 is not None:
        factors.append(_scalar_gv(model, 1, x1))
        lim *= gv_at_infinity(model, 1, x1)
    if x2 is not None:
        factors.append(_scalar_gv(model, 2, x2))
        lim *= gv_at_infinity(model, 2, x2)

    if len(factors) == 2:
        g1, g2 = factors

        def f(u):
            if u == 0.0:
                return lim
            v = 1.0 / u
            return g1(v) * g2(v)
    else:
        (g1,) = factors

        def f(u):
            if u == 0.0:
                return lim
            return g1(1.0 / u)

    return f


def limit_H(model: CiModel, x1: float, x2: float,
            opts: QuadOptions = QuadOptions()) -> float:
    """Deterministic-norming limit law H(x1, x2) by quadrature."""
    val = integrate_unit_interval(_mixture_integrand(model, x1, x2), opts)
    return min(max(val, 0.0), 1.0)


def marginal_H(model: CiModel, i: int, x: float,
               opts: QuadOptions = QuadOptions()) -> float:
    """Marginal H_i(x) (the other argument at +inf)."""
    if i == 1:
        f = _mixture_integrand(model, x, None)
    elif i == 2:
        f = _mixture_integrand(model, None, x)
    else:
        raise ValueError("coordinate index must be 1 or 2")
    val = integrate_unit_interval(f, opts)
    return min(max(val, 0.0), 1.0)


def marginal_H_quantile(model: CiModel, i: int, p: float,
                        opts: QuadOptions = QuadOptions()) -> float:
    """Solve marginal_H(i, x) = p by bracket expansion and Brent's method."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly inside (0, 1)")

    def g(x):
        return marginal_H(model, i, x, opts) - p

    lo, hi = -1.0, 1.0
    while g(lo) >= 0.0:
        lo = 2.0 * lo - 1.0
        if lo < -1e12:
            raise QuadConvergenceError(lo, math.inf)
    while g(hi) <= 0.0:
        hi = 2.0 * hi + 1.0
        if hi > 1e12:
            raise QuadConvergenceError(hi, math.inf)
    return brentq(g, lo, hi, xtol=1e-8)


@dataclass(frozen=True)
class GapResult:
    """Factorization gap max |H - H1*H2| over a quantile grid."""

    gap: float
    argmax: tuple
    x1_grid: tuple
    x2_grid: tuple
    table: tuple = field(repr=False, default=())  # rows (x1, x2, H, H1H2, diff)


def factorization_gap(model: CiModel, grid: GridSpec = GridSpec(),
                      opts: QuadOptions = QuadOptions()) -> GapResult:
    """Evaluate H and H1*H2 on the grid of marginal-H quantiles."""
    q1 = [marginal_H_quantile(model, 1, p, opts) for p in grid.levels]
    q2 = [marginal_H_quantile(model, 2, p, opts) for p in grid.levels]
    m1 = [marginal_H(model, 1, x, opts) for x in q1]
    m2 = [marginal_H(model, 2, x, opts) for x in q2]
    best, argmax, table = -1.0, (q1[0], q2[0]), []
    for a, h1 in zip(q1, m1):
        for b, h2 in zip(q2, m2):
            h = limit_H(model, a, b, opts)
            diff = abs(h - h1 * h2)
            table.append((a, b, h, h1 * h2, h - h1 * h2))
            if diff > best:
                best, argmax = diff, (a, b)
    return GapResult(gap=best, argmax=argmax, x1_grid=tuple(q1),
                     x2_grid=tuple(q2), table=tuple(table))


def write_gap_csv(result: GapResult, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("x1,x2,H,H1H2,diff\n")
        for row in result.table:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
