"""Generalization quantities for chart-paired translation.

All divergences are Lukaszyk-Karmowski divergences between a true mixture
(known chart laws, weights 1/K) and an empirical measure given per chart.
Two routes are supported: ``paper_closed`` evaluates the Gaussian closed form
on per-chart sample moments, ``monte_carlo`` averages distances between the
empirical points and fresh draws from the true chart laws.

Sample-count convention for the per-chart trace condition (:func:`thm3_sides`):
``n`` source and ``m`` target points per chart, with ``1/sqrt(m)`` paired
with the target trace and ``1/sqrt(n)`` with the source trace.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ._seeding import derive_seed, rng_for
from .chart_model import ChartGaussian, ManifoldSpec, sample_mixture
from .coupling import cost_matrix
from .generator import lipschitz_estimate
from .metrics import MONTE_CARLO, PAPER_CLOSED, lk_empirical, pairwise_mean_distance

LK_FORMS = (PAPER_CLOSED, MONTE_CARLO)
SAMPLE_CONVENTION = "n_source_m_target"


def _check_form(lk_form: str):
    if lk_form not in LK_FORMS:
        raise ValueError(f"lk_form must be one of {LK_FORMS}, got {lk_form!r}")


def _points(s) -> np.ndarray:
    return s.points if hasattr(s, "points") else np.atleast_2d(np.asarray(s, dtype=float))


def chart_divergences(spec: ManifoldSpec, point_sets: Sequence, lk_form: str, seed: int,
                      n_mc: int = 1000) -> np.ndarray:
    """Matrix ``D[j, i] = D_LK(true chart j of spec, empirical set i)``."""
    _check_form(lk_form)
    sets = [_points(s) for s in point_sets]
    k = spec.k
    out = np.empty((k, len(sets)))
    if lk_form == PAPER_CLOSED:
        tr = spec.trace
        for i, pts in enumerate(sets):
            mean = pts.mean(axis=0)
            centred = pts - mean
            tr_i = float((centred ** 2).sum() / pts.shape[0])
            out[:, i] = np.linalg.norm(spec.means - mean, axis=1) + tr + tr_i
    else:
        for c in spec.charts:
            fresh = c.transform(rng_for(seed, c.index).standard_normal((n_mc, spec.dimension)))
            for i, pts in enumerate(sets):
                out[c.index, i] = pairwise_mean_distance(fresh, pts)[0]
    return out


def mixture_divergence(spec: ManifoldSpec, point_sets: Sequence, lk_form: str, seed: int,
                       n_mc: int = 1000) -> float:
    """``D_LK((1/K) sum_j nu_j, (1/K') sum_i empirical_i)`` by bilinear expansion."""
    return float(chart_divergences(spec, point_sets, lk_form, seed, n_mc).mean())


def adv_gap_terms(g, source: ManifoldSpec, target: ManifoldSpec, m: int, n: int, lk_form: str,
                  seed: int, n_mc: int = 1000):
    """``(D(G(mu_hat^m), nu), D(nu_hat^n, nu))`` with m source / n target points per chart."""
    if m < 1 or n < 1:
        raise ValueError("m and n must be >= 1")
    src = sample_mixture(source, m, derive_seed(seed, 0))
    tgt = sample_mixture(target, n, derive_seed(seed, 1))
    images = [g(s.points) for s in src]
    mc_seed = derive_seed(seed, 2)
    push = mixture_divergence(target, images, lk_form, mc_seed, n_mc)
    base = mixture_divergence(target, tgt, lk_form, mc_seed, n_mc)
    return push, base


def adv_gap(g, source: ManifoldSpec, target: ManifoldSpec, m: int, n: int, lk_form: str, seed: int,
            n_mc: int = 1000) -> float:
    push, base = adv_gap_terms(g, source, target, m, n, lk_form, seed, n_mc)
    return push - base


def erm_risk(g, paired_samples) -> float:
    """Double-sum empirical risk over the pooled source and target points.

    ``paired_samples`` is a sequence of (source_points, target_points), one
    entry per chart.
    """
    if not paired_samples:
        raise ValueError("no samples")
    s = np.concatenate([_points(a) for a, _ in paired_samples])
    t = np.concatenate([_points(b) for _, b in paired_samples])
    return lk_empirical(g(s), t).value


def paired_risks(g, paired_samples) -> np.ndarray:
    """Per-chart double-sum risk (1/nm) sum_i sum_j ||G(s_k^i) - t_k^j||."""
    return np.array([lk_empirical(g(_points(a)), _points(b)).value for a, b in paired_samples])


class Thm2Check(NamedTuple):
    satisfied: bool
    slack: float
    lhs: float
    rhs: float


def thm2_condition(eps_classical: float, eps_adv: float, eta: float, d_target: float,
                   d_source: float, M_G: float) -> Thm2Check:
    """``eps_classical - eps_adv + eta < d_target - M_G * d_source`` (strict)."""
    vals = (eps_classical, eps_adv, eta, d_target, d_source, M_G)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("inputs must be finite")
    lhs = eps_classical - eps_adv + eta
    rhs = d_target - M_G * d_source
    return Thm2Check(lhs < rhs, rhs - lhs, lhs, rhs)


@dataclass(frozen=True)
class GapReport:
    gap_adv: float
    eps_classical: float
    eps_adv: float
    eta: float
    m: int
    n: int
    M_G: float
    lhs_22: float
    rhs_22: float
    satisfied_22: bool
    implication_holds: bool
    lk_form: str
    seed: int

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be >= 1")
        for name in ("gap_adv", "eps_classical", "eta", "M_G", "lhs_22", "rhs_22"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} is not finite")

    def to_dict(self) -> dict:
        return asdict(self)


def gap_report(g, source: ManifoldSpec, target: ManifoldSpec, m: int, n: int, eps_adv: float,
               lk_form: str, seed: int, M_G: float | None = None, n_mc: int = 1000,
               n_population: int = 20_000) -> GapReport:
    """Evaluate both sides of the sufficient condition together with the realised gap.

    ``eps_classical`` is the realised classical gap: the population risk
    E||G(x) - y|| (Monte-Carlo over all chart pairs) minus the empirical risk.
    ``implication_holds`` is False only when the condition held but the gap
    did not fall below ``eps_adv``.
    """
    push, base = adv_gap_terms(g, source, target, m, n, lk_form, seed, n_mc)
    gap = push - base
    src = sample_mixture(source, m, derive_seed(seed, 0))
    tgt = sample_mixture(target, n, derive_seed(seed, 1))
    eta = erm_risk(g, list(zip(src, tgt)))
    population = float(cost_matrix(g, source, target, max(2, n_population // source.k ** 2),
                                   derive_seed(seed, 3)).entries.mean())
    eps_classical = population - eta
    if M_G is None:
        M_G = lipschitz_estimate(g, 10_000, source, derive_seed(seed, 4))
    mc_seed = derive_seed(seed, 2)
    d_target = base
    d_source = mixture_divergence(source, src, lk_form, mc_seed, n_mc)
    chk = thm2_condition(eps_classical, eps_adv, eta, d_target, d_source, M_G)
    return GapReport(gap, eps_classical, eps_adv, eta, m, n, float(M_G), chk.lhs, chk.rhs,
                     chk.satisfied, (not chk.satisfied) or gap < eps_adv, lk_form, int(seed))


@dataclass(frozen=True)
class LocalGlobalReport:
    eps_local: float
    eps_global: float
    K: int
    m: int
    lk_form: str
    seed: int

    def __post_init__(self):
        if self.eps_local < 0 or self.eps_global < 0:
            raise ValueError("divergences must be nonnegative")

    @property
    def satisfied(self) -> bool:
        return self.eps_local < self.eps_global

    def to_dict(self) -> dict:
        return asdict(self) | {"satisfied": self.satisfied}


def eps_local_global(source: ManifoldSpec, m: int, lk_form: str, seed: int, n_mc: int = 1000) -> LocalGlobalReport:
    """Average per-chart estimation divergence versus the pooled-mixture divergence.

    With m points per chart the pooled estimator of the mixture is
    (1/K) sum_j mu_hat_j, so the global term expands into all K^2 chart pairs
    with weight 1/K^2 and the local term is the diagonal average.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    samples = sample_mixture(source, m, derive_seed(seed, 0))
    dmat = chart_divergences(source, samples, lk_form, derive_seed(seed, 1), n_mc)
    return LocalGlobalReport(float(np.diag(dmat).mean()), float(dmat.mean()), source.k, m, lk_form, int(seed))


def thm3_rhs(n: int, m: int, tr_sigma_M: float, tr_sigma_N: float, M_G: float) -> float:
    return (math.sqrt(tr_sigma_N) / math.sqrt(m) + 2.0 * tr_sigma_N
            - M_G * (math.sqrt(tr_sigma_M) / math.sqrt(n) + 2.0 * tr_sigma_M))


@dataclass(frozen=True)
class Thm3Report:
    lhs: float
    rhs: float
    satisfied: bool
    near_boundary: bool
    epsilon: float
    n: int
    m: int
    tr_sigma_M: float
    tr_sigma_N: float
    M_G: float
    K: int
    worst_chart: int
    sample_convention: str = SAMPLE_CONVENTION

    def __post_init__(self):
        if self.satisfied != (self.lhs < self.rhs):
            raise ValueError("satisfied flag disagrees with lhs < rhs")

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    def to_dict(self) -> dict:
        return asdict(self)


def thm3_sides(g, source: ManifoldSpec, target: ManifoldSpec, n: int, m: int, epsilon: float, seed: int,
               M_G: float | None = None, n_lipschitz: int = 10_000, boundary_tol: float = 1e-2) -> Thm3Report:
    """Both sides of the per-chart generalization condition.

    lhs = epsilon + max_k (1/nm) sum_i sum_j ||G(s_k^i) - t_k^j|| over n source
    and m target points of chart k; rhs is :func:`thm3_rhs`. ``M_G`` defaults
    to :func:`lipschitz_estimate` on the source charts.
    """
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    src = sample_mixture(source, n, derive_seed(seed, 0))
    tgt = sample_mixture(target, m, derive_seed(seed, 1))
    risks = paired_risks(g, list(zip(src, tgt)))
    if M_G is None:
        M_G = lipschitz_estimate(g, n_lipschitz, source, derive_seed(seed, 2))
    worst = int(risks.argmax())
    lhs = float(epsilon + risks[worst])
    rhs = thm3_rhs(n, m, source.trace, target.trace, M_G)
    return Thm3Report(lhs, rhs, lhs < rhs, abs(rhs - lhs) < boundary_tol, float(epsilon), n, m,
                      source.trace, target.trace, float(M_G), source.k, worst)


class MseCheck(NamedTuple):
    mse: float
    expected: float
    ratio: float


def estimator_mse_check(chart: ChartGaussian, N: int, trials: int, seed: int) -> MseCheck:
    """Empirical E||mean_hat - mean||^2 of the N-sample mean against tr(S)/N.

    N = 1 is accepted (the single-draw estimator); at least 30 trials are required.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if trials < 30:
        raise ValueError("trials must be >= 30")
    d = chart.dimension
    per_chunk = max(1, (1 << 22) // (N * d))
    sq = []
    for blk, lo in enumerate(range(0, trials, per_chunk)):
        size = min(per_chunk, trials - lo)
        z = rng_for(seed, blk).standard_normal((size, N, d))
        pts = chart.transform(z.reshape(-1, d)).reshape(size, N, d)
        err = pts.mean(axis=1) - chart.mean
        sq.append((err ** 2).sum(axis=1))
    mse = float(np.concatenate(sq).mean())
    expected = chart.trace / N
    return MseCheck(mse, expected, mse / expected)
