"""Empirical machinery: ECDFs, sup-distances, factorization statistics,
permutation independence tests, the tail dependence coefficient, and
convergence diagnostics across threshold levels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .models import CiModel, noise_cdf
from .simulate import (
    NormedSample,
    apply_deterministic_norming,
    apply_random_norming,
    draw_exceedances,
)

DEFAULT_LEVELS = tuple(round(0.05 * k, 2) for k in range(1, 20))
BRUTE_FORCE_MAX_N = 2000


@dataclass(frozen=True)
class Ecdf:
    """Sorted-sample empirical CDF, right-continuous."""

    sorted_values: np.ndarray
    n: int

    @classmethod
    def from_sample(cls, values) -> "Ecdf":
        arr = np.sort(np.asarray(values, dtype=float))
        return cls(sorted_values=arr, n=arr.size)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    n: int
    b: int
    seed: int


def ecdf_eval(e: Ecdf, x):
    """(# values <= x) / n via binary search."""
    return np.searchsorted(e.sorted_values, x, side="right") / e.n


def ks_distance(e: Ecdf, F: Callable) -> float:
    """sup_x |ECDF(x) - F(x)|, evaluated at the jump points."""
    fx = np.asarray(F(e.sorted_values), dtype=float)
    i = np.arange(1, e.n + 1)
    return float(max(np.max(i / e.n - fx), np.max(fx - (i - 1) / e.n)))


def _pairs(pairs):
    if isinstance(pairs, NormedSample):
        return pairs.w1, pairs.w2
    w1, w2 = pairs
    return np.asarray(w1, dtype=float), np.asarray(w2, dtype=float)


def _cell_indices(w: np.ndarray, grid: np.ndarray) -> np.ndarray:
    # d_i <= l  iff  w_i <= grid[l]; lets joint CDF counts come from one
    # 2-d histogram plus cumulative sums instead of per-level indicators
    return np.searchsorted(grid, w, side="left")


def _grid_stat(d1: np.ndarray, d2: np.ndarray, n_levels: int) -> float:
    n = d1.size
    m = n_levels + 1
    cells = np.bincount(d1 * m + d2, minlength=m * m).reshape(m, m)
    joint = cells.cumsum(axis=0).cumsum(axis=1)[:n_levels, :n_levels] / n
    f1 = np.bincount(d1, minlength=m).cumsum()[:n_levels] / n
    f2 = np.bincount(d2, minlength=m).cumsum()[:n_levels] / n
    return float(np.max(np.abs(joint - np.outer(f1, f2))))


def factorization_stat(pairs, levels: Sequence[float] = DEFAULT_LEVELS,
                       grid: str = "levels") -> float:
    """Empirical factorization distance max |F12 - F1*F2| over a grid.

    grid="levels" evaluates at the empirical marginal quantiles of the
    given levels; grid="full" sweeps all n^2 sample cells (n <= 2000),
    kept as a brute-force oracle.
    """
    w1, w2 = _pairs(pairs)
    n = w1.size
    if n < 10:
        raise ValueError("need at least 10 pairs")
    if np.all(w1 == w1[0]) or np.all(w2 == w2[0]):
        raise ValueError("degenerate sample: a coordinate is constant")
    if grid == "full":
        if n > BRUTE_FORCE_MAX_N:
            raise ValueError(f"brute-force grid limited to n <= {BRUTE_FORCE_MAX_N}")
        g1, g2 = np.sort(w1), np.sort(w2)
    elif grid == "levels":
        lv = np.asarray(levels, dtype=float)
        if lv.size == 0 or np.any(lv <= 0) or np.any(lv >= 1):
            raise ValueError("levels must be non-empty and inside (0, 1)")
        g1 = np.quantile(w1, lv)
        g2 = np.quantile(w2, lv)
    else:
        raise ValueError(f"unknown grid mode {grid!r}")
    return _grid_stat(_cell_indices(w1, g1), _cell_indices(w2, g2), g1.size)


def permutation_independence_test(pairs, levels: Sequence[float] = DEFAULT_LEVELS,
                                  b: int = 999, seed: int = 0) -> TestResult:
    """Permutation test of independence based on the factorization distance.

    The second coordinate is permuted b times; marginals (and hence the
    quantile grid) are permutation-invariant, so only the joint counts
    are recomputed per replicate.
    """
    if b < 99:
        raise ValueError("b must be >= 99")
    w1, w2 = _pairs(pairs)
    n = w1.size
    lv = np.asarray(levels, dtype=float)
    g1 = np.quantile(w1, lv)
    g2 = np.quantile(w2, lv)
    d1 = _cell_indices(w1, g1)
    d2 = _cell_indices(w2, g2)
    observed = _grid_stat(d1, d2, lv.size)

    n_ge = 0
    for r in range(b):
        bg = np.random.Philox(key=[seed & (2**64 - 1), (r + 1) & (2**64 - 1)])
        perm = np.random.Generator(bg).permutation(d2)
        if _grid_stat(d1, perm, lv.size) >= observed:
            n_ge += 1
    p = (1 + n_ge) / (b + 1)
    return TestResult(statistic=observed, p_value=p, n=n, b=b, seed=seed)


def pseudo_uniforms(values) -> np.ndarray:
    """Rank-based margin transform rank/(n+1), average ranks on ties."""
    arr = np.asarray(values, dtype=float)
    return rankdata(arr, method="average") / (arr.size + 1)


def chi_hat(u0, u1, u2, p: float, min_exceedances: int = 50) -> float:
    """Empirical tail dependence P[u1 > p, u2 > p | u0 > p].

    Inputs are the margins' own CDF values (known margins) or
    pseudo-uniform ranks; all must lie in (0, 1).
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly inside (0, 1)")
    u0 = np.asarray(u0, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    cond = u0 > p
    n_cond = int(np.count_nonzero(cond))
    if n_cond < min_exceedances:
        raise ValueError(
            f"only {n_cond} conditioning exceedances above p={p}; "
            f"need at least {min_exceedances}"
        )
    both = np.count_nonzero(cond & (u1 > p) & (u2 > p))
    return both / n_cond


@dataclass(frozen=True)
class DiagnosticRow:
    t: float
    n: int
    statistic: float
    p_value: Optional[float]


def convergence_diagnostic(model: CiModel, t_list: Sequence[float], n: int,
                           seed: int, mode: str = "random",
                           statistic: str = "delta",
                           levels: Sequence[float] = DEFAULT_LEVELS,
                           b: Optional[int] = None) -> list:
    """One statistic per threshold level, tracking the approach to the limit.

    statistic "delta" is the factorization distance of the normed pairs;
    "ks1"/"ks2" is the KS distance of the corresponding margin to its
    random-norming limit law (the noise CDF).  A permutation p-value is
    attached when b is given.
    """
    if list(t_list) != sorted(t_list):
        raise ValueError("t_list must be increasing")
    if statistic not in ("delta", "ks1", "ks2"):
        raise ValueError(f"unknown statistic {statistic!r}")
    norm = apply_random_norming if mode == "random" else apply_deterministic_norming
    if mode not in ("random", "deterministic"):
        raise ValueError(f"unknown mode {mode!r}")
    rows = []
    for idx, t in enumerate(t_list):
        sample = draw_exceedances(model, t, n, seed, stream=idx + 1)
        normed = norm(sample, model)
        if statistic == "delta":
            stat = factorization_stat(normed, levels)
        else:
            i = int(statistic[-1])
            w = normed.w1 if i == 1 else normed.w2
            law = model.noise(i)
            stat = ks_distance(Ecdf.from_sample(w), lambda x: noise_cdf(law, x))
        p = None
        if b is not None:
            p = permutation_independence_test(normed, levels, b, seed).p_value
        rows.append(DiagnosticRow(t=float(t), n=n, statistic=stat, p_value=p))
    return rows


def write_diagnostic_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("t,n,statistic,p_value\n")
        for r in rows:
            p = "" if r.p_value is None else repr(float(r.p_value))
            fh.write(f"{r.t!r},{r.n},{r.statistic!r},{p}\n")
