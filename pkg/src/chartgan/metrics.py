"""Lukaszyk-Karmowski divergence D(a, b) = E||X - Y||, X ~ a, Y ~ b independent.

Four routes are provided and every estimate records which one produced it:

* ``paper_closed``: ||x - y|| + tr(S_a) + tr(S_b) for Gaussians. This is the
  closed form used in the localization argument; it is *not* E||X - Y||.
* ``empirical``: the double-sum average over two point sets.
* ``monte_carlo``: average of ||X - Y|| over independent draws.
* ``exact_1d``: the folded-normal mean, exact for scalar Gaussians.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import cdist

from ._seeding import rng_for
from .chart_model import ChartGaussian, EmpiricalSample

PAPER_CLOSED = "paper_closed"
EMPIRICAL = "empirical"
MONTE_CARLO = "monte_carlo"
EXACT_1D = "exact_1d"
FORMS = (PAPER_CLOSED, EMPIRICAL, MONTE_CARLO, EXACT_1D)

_MC_BLOCK = 1 << 16
_PAIR_CHUNK = 1 << 22


@dataclass(frozen=True)
class LkEstimate:
    value: float
    stderr: float
    n_used: int
    form: str

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"unknown form {self.form!r}")
        if not (self.value >= 0.0 and self.stderr >= 0.0):
            raise ValueError(f"invalid estimate value={self.value} stderr={self.stderr}")

    def to_dict(self) -> dict:
        return asdict(self)


def _check_dims(a: ChartGaussian, b: ChartGaussian):
    if a.dimension != b.dimension:
        raise ValueError(f"dimension mismatch: {a.dimension} vs {b.dimension}")


def lk_paper_form(a: ChartGaussian, b: ChartGaussian) -> LkEstimate:
    _check_dims(a, b)
    value = float(np.linalg.norm(a.mean - b.mean)) + a.trace + b.trace
    return LkEstimate(value, 0.0, 0, PAPER_CLOSED)


def paper_form_moments(mean_a, trace_a, mean_b, trace_b) -> float:
    """Closed form from raw moments; used for empirical measures' moments."""
    return float(np.linalg.norm(np.asarray(mean_a) - np.asarray(mean_b))) + float(trace_a) + float(trace_b)


def _as_points(s) -> np.ndarray:
    if isinstance(s, EmpiricalSample):
        s = s.points
    pts = np.asarray(s, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return pts


def pairwise_mean_distance(a: np.ndarray, b: np.ndarray):
    """Mean of ||a_i - b_j|| over all pairs, plus the row and column means."""
    na, nb = a.shape[0], b.shape[0]
    rows = np.empty(na)
    cols = np.zeros(nb)
    step = max(1, _PAIR_CHUNK // max(nb, 1))
    for lo in range(0, na, step):
        blk = a[lo:lo + step]
        dist = cdist(blk, b)
        rows[lo:lo + step] = dist.mean(axis=1)
        cols += dist.sum(axis=0)
    cols /= na
    return float(rows.mean()), rows, cols


def lk_empirical(sa, sb) -> LkEstimate:
    """Double-sum divergence between two point sets.

    The stderr is the first-order (Hoeffding projection) standard error of the
    two-sample V-statistic; it is 0 when either set has a single point.
    """
    a, b = _as_points(sa), _as_points(sb)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("empty point set")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    value, rows, cols = pairwise_mean_distance(a, b)
    var = 0.0
    if a.shape[0] > 1:
        var += rows.var(ddof=1) / a.shape[0]
    if b.shape[0] > 1:
        var += cols.var(ddof=1) / b.shape[0]
    return LkEstimate(value, math.sqrt(var), a.shape[0] * b.shape[0], EMPIRICAL)


def _canonical_key(c: ChartGaussian):
    return tuple(c.mean.tolist()) + tuple(c.covariance.ravel().tolist())


def lk_monte_carlo(a: ChartGaussian, b: ChartGaussian, n: int, seed: int) -> LkEstimate:
    """Unbiased estimate of E||X - Y|| from ``n`` independent pairs.

    Arguments are put in a canonical order before sampling so that swapping
    them returns the identical estimate. Draws are made in fixed-size blocks,
    each on its own sub-seed, and block statistics are merged in block order.
    """
    _check_dims(a, b)
    if n < 2:
        raise ValueError("n must be >= 2")
    if _canonical_key(b) < _canonical_key(a):
        a, b = b, a
    d = a.dimension
    count, mean, m2 = 0, 0.0, 0.0
    for blk, lo in enumerate(range(0, n, _MC_BLOCK)):
        size = min(_MC_BLOCK, n - lo)
        rng = rng_for(seed, blk)
        x = a.transform(rng.standard_normal((size, d)))
        y = b.transform(rng.standard_normal((size, d)))
        r = np.linalg.norm(x - y, axis=1)
        bm = float(r.mean())
        bm2 = float(((r - bm) ** 2).sum())
        # Chan et al. parallel merge
        tot = count + size
        delta = bm - mean
        mean += delta * size / tot
        m2 += bm2 + delta * delta * count * size / tot
        count = tot
    stderr = math.sqrt(m2 / (count - 1) / count)
    return LkEstimate(mean, stderr, count, MONTE_CARLO)


def folded_normal_mean(m: float, s: float) -> float:
    """E|Z| for Z ~ N(m, s^2)."""
    m = abs(float(m))
    if s == 0.0:
        return m
    return s * math.sqrt(2.0 / math.pi) * math.exp(-m * m / (2.0 * s * s)) + m * math.erf(m / (s * math.sqrt(2.0)))


def exact_1d(a: ChartGaussian, b: ChartGaussian) -> LkEstimate:
    if a.dimension != 1 or b.dimension != 1:
        raise ValueError("exact_1d needs scalar Gaussians")
    m = float(a.mean[0] - b.mean[0])
    s = math.sqrt(float(a.covariance[0, 0] + b.covariance[0, 0]))
    return LkEstimate(folded_normal_mean(m, s), 0.0, 0, EXACT_1D)


def scalar_gaussian(mean: float, var: float, index: int = 0) -> ChartGaussian:
    return ChartGaussian(index, np.array([float(mean)]), np.array([[float(var)]]))
