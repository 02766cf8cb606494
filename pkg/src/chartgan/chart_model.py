"""Chart-decomposed Gaussian manifolds.

A manifold is an atlas of K charts, each carrying a Gaussian law with its own
mean and a covariance shared by every chart of the manifold. Charts live
directly in R^d (the chart maps are identities), and the glued measure on the
manifold is the equal-weight mixture of the chart laws.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from ._seeding import derive_seed, rng_for

MAX_PLACEMENT_ATTEMPTS = 10_000


class InfeasibleAtlasError(RuntimeError):
    """Raised when chart means cannot be placed at the requested separation."""


@dataclass(frozen=True, eq=False)
class ChartGaussian:
    index: int
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if mean.ndim != 1:
            raise ValueError("mean must be a vector")
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match dimension {mean.size}")
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=0.0):
            raise ValueError("covariance is not symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("covariance is not positive definite") from None
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_chol", chol)

    @property
    def dimension(self) -> int:
        return self.mean.size

    @property
    def cholesky(self) -> np.ndarray:
        return self._chol

    @property
    def trace(self) -> float:
        return float(np.trace(self.covariance))

    def transform(self, z: np.ndarray) -> np.ndarray:
        """Map standard-normal draws ``z`` (n, d) onto this chart's law."""
        return self.mean + z @ self._chol.T


@dataclass(frozen=True, eq=False)
class ManifoldSpec:
    charts: tuple
    dimension: int = field(init=False)

    def __post_init__(self):
        charts = tuple(self.charts)
        if not charts:
            raise ValueError("a manifold needs at least one chart")
        cov = charts[0].covariance
        for c in charts:
            if c.covariance is not cov and not np.array_equal(c.covariance, cov):
                raise ValueError("all charts of a manifold must share one covariance")
        if sorted(c.index for c in charts) != list(range(len(charts))):
            raise ValueError("chart indices must be exactly 0..K-1")
        object.__setattr__(self, "charts", charts)
        object.__setattr__(self, "dimension", charts[0].dimension)

    @classmethod
    def from_means(cls, means, covariance) -> "ManifoldSpec":
        cov = np.atleast_2d(np.asarray(covariance, dtype=float))
        means = np.asarray(means, dtype=float).reshape(-1, cov.shape[0])
        # asarray on a float ndarray is a no-op, so every chart holds this same object
        return cls(tuple(ChartGaussian(i, means[i], cov) for i in range(means.shape[0])))

    @property
    def k(self) -> int:
        return len(self.charts)

    @property
    def covariance(self) -> np.ndarray:
        return self.charts[0].covariance

    @property
    def trace(self) -> float:
        return self.charts[0].trace

    @property
    def means(self) -> np.ndarray:
        return np.stack([c.mean for c in self.charts])

    @property
    def separation(self) -> float:
        """Minimum pairwise distance between chart means (inf for one chart)."""
        if self.k < 2:
            return float("inf")
        mu = self.means
        diff = mu[:, None, :] - mu[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        return float(dist[np.triu_indices(self.k, 1)].min())

    def nearest_chart(self, points: np.ndarray) -> np.ndarray:
        """Index of the nearest chart mean for each row of ``points``."""
        points = np.atleast_2d(points)
        mu = self.means
        d2 = ((points[:, None, :] - mu[None, :, :]) ** 2).sum(-1)
        return d2.argmin(axis=1)

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "charts": [{"index": c.index, "mean": c.mean.tolist()} for c in self.charts],
            "covariance": self.covariance.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ManifoldSpec":
        charts = sorted(doc["charts"], key=lambda c: c["index"])
        spec = cls.from_means([c["mean"] for c in charts], doc["covariance"])
        if spec.dimension != doc["dimension"]:
            raise ValueError("dimension field disagrees with chart means")
        return spec

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ManifoldSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class EmpiricalSample:
    chart_index: int
    points: np.ndarray
    source_seed: int

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[0] == 0:
            raise ValueError("an empirical sample needs at least one point")

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def moments(self):
        """Mean and (population) covariance of the empirical measure."""
        mean = self.points.mean(axis=0)
        centred = self.points - mean
        return mean, centred.T @ centred / self.size


def random_covariance(d: int, trace_target: float, rng: np.random.Generator) -> np.ndarray:
    """Random orthogonal conjugation of a positive diagonal with the given trace."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    diag = rng.uniform(0.5, 1.5, size=d)
    diag *= trace_target / diag.sum()
    cov = (q * diag) @ q.T
    cov = 0.5 * (cov + cov.T)
    return cov * (trace_target / np.trace(cov))


def build_atlas(k: int, d: int, mean_scale: float, trace_target: float, seed: int) -> ManifoldSpec:
    """Build a K-chart Gaussian manifold with mean separation >= ``mean_scale``.

    Means are drawn uniformly from a cube of half-width
    ``mean_scale * k ** (1/d)`` and rejected when closer than ``mean_scale``
    to an accepted mean. At most ``MAX_PLACEMENT_ATTEMPTS`` candidates are
    drawn in total.
    """
    if k < 1 or d < 1:
        raise ValueError("k and d must be >= 1")
    if mean_scale <= 0 or trace_target <= 0:
        raise ValueError("mean_scale and trace_target must be positive")
    rng = rng_for(seed, 0)
    half = mean_scale * k ** (1.0 / d)
    means = np.empty((k, d))
    placed = attempts = 0
    while placed < k:
        if attempts >= MAX_PLACEMENT_ATTEMPTS:
            raise InfeasibleAtlasError(
                f"placed {placed} of {k} means at separation {mean_scale} in d={d} "
                f"after {attempts} attempts"
            )
        attempts += 1
        cand = rng.uniform(-half, half, size=d)
        if placed == 0 or np.linalg.norm(means[:placed] - cand, axis=1).min() >= mean_scale:
            means[placed] = cand
            placed += 1
    cov = random_covariance(d, trace_target, rng_for(seed, 1))
    return ManifoldSpec.from_means(means, cov)


def sample_chart(chart: ChartGaussian, m: int, seed: int) -> EmpiricalSample:
    if m < 1:
        raise ValueError("sample count must be >= 1")
    z = np.random.default_rng(seed).standard_normal((m, chart.dimension))
    return EmpiricalSample(chart.index, chart.transform(z), int(seed))


def sample_mixture(spec: ManifoldSpec, per_chart: int, seed: int) -> list:
    """Draw ``per_chart`` points from every chart; chart i uses sub-seed (seed, i)."""
    if per_chart < 1:
        raise ValueError("per_chart must be >= 1")
    return [sample_chart(c, per_chart, derive_seed(seed, c.index)) for c in spec.charts]


class RelatednessResult(NamedTuple):
    holds: bool
    margin: float


def inner_relatedness_check(spec: ManifoldSpec, n_probe: int, seed: int) -> RelatednessResult:
    """Probe ``d(x, y) <= d(x, z)`` for x, y in one chart and z in another.

    The returned margin is the smallest ``d(x, z) - d(x, y)`` seen.
    """
    if spec.k < 2:
        raise ValueError("inner relatedness needs at least two charts")
    if n_probe < 1:
        raise ValueError("n_probe must be >= 1")
    rng = rng_for(seed, 0)
    a = rng.integers(spec.k, size=n_probe)
    b = (a + rng.integers(1, spec.k, size=n_probe)) % spec.k
    z = rng.standard_normal((3, n_probe, spec.dimension))
    mu = spec.means
    chol = spec.charts[0].cholesky
    x = mu[a] + z[0] @ chol.T
    y = mu[a] + z[1] @ chol.T
    w = mu[b] + z[2] @ chol.T
    margin = np.linalg.norm(x - w, axis=1) - np.linalg.norm(x - y, axis=1)
    worst = float(margin.min())
    return RelatednessResult(worst >= 0.0, worst)


def overlap_mass(spec: ManifoldSpec, n_probe: int, seed: int) -> float:
    """Fraction of mixture draws whose nearest chart mean is not their own chart."""
    rng = rng_for(seed, 0)
    labels = rng.integers(spec.k, size=n_probe)
    pts = spec.means[labels] + rng.standard_normal((n_probe, spec.dimension)) @ spec.charts[0].cholesky.T
    return float(np.mean(spec.nearest_chart(pts) != labels))
