"""Piecewise-affine generators and PTI-family membership.

A generator carries one affine piece ``s -> W_i s + b_i`` per source chart.
The piece applied to a point is chosen by the nearest source-chart mean (the
Bayes rule for equal-covariance, equal-weight Gaussian charts). A generator
belongs to the family F_p when every chart i is mapped into target chart
p(i); for full-support charts this is checked on sampled probes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._seeding import rng_for
from .chart_model import ManifoldSpec
from .permutation import Permutation


@dataclass(frozen=True, eq=False)
class PiecewiseAffineGenerator:
    permutation: Permutation
    W: np.ndarray
    b: np.ndarray
    anchors: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        b = np.asarray(self.b, dtype=float)
        anchors = np.asarray(self.anchors, dtype=float)
        k = len(self.permutation)
        if W.ndim != 3 or W.shape[0] != k or W.shape[1] != W.shape[2]:
            raise ValueError(f"W must have shape (K, d, d) with K={k}, got {W.shape}")
        d = W.shape[1]
        if b.shape != (k, d) or anchors.shape != (k, d):
            raise ValueError("b and anchors must have shape (K, d)")
        if not np.all(np.isfinite(W)) or not np.all(np.isfinite(b)):
            raise ValueError("generator parameters must be finite")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "anchors", anchors)

    @property
    def k(self) -> int:
        return self.W.shape[0]

    @property
    def dimension(self) -> int:
        return self.W.shape[1]

    @classmethod
    def identity(cls, source: ManifoldSpec, permutation: Permutation | None = None):
        k, d = source.k, source.dimension
        return cls(permutation or Permutation.identity(k), np.tile(np.eye(d), (k, 1, 1)),
                   np.zeros((k, d)), source.means)

    def piece_of(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        d2 = ((points[:, None, :] - self.anchors[None, :, :]) ** 2).sum(-1)
        return d2.argmin(axis=1)

    def apply_with_pieces(self, points: np.ndarray, pieces: np.ndarray) -> np.ndarray:
        return np.einsum("nij,nj->ni", self.W[pieces], points) + self.b[pieces]

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[1] != self.dimension:
            raise ValueError(f"expected points of dimension {self.dimension}, got {pts.shape[1]}")
        out = self.apply_with_pieces(pts, self.piece_of(pts))
        return out[0] if single else out

    # flat parameter vector [W_0, ..., W_{K-1}, b_0, ..., b_{K-1}]
    def params(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(), self.b.ravel()])

    def with_params(self, theta: np.ndarray) -> "PiecewiseAffineGenerator":
        nw = self.W.size
        return PiecewiseAffineGenerator(self.permutation, theta[:nw].reshape(self.W.shape),
                                        theta[nw:].reshape(self.b.shape), self.anchors)

    def with_permutation(self, permutation: Permutation) -> "PiecewiseAffineGenerator":
        return PiecewiseAffineGenerator(permutation, self.W, self.b, self.anchors)

    def spectral_bound(self) -> float:
        """Largest per-piece spectral norm; an upper bound for within-piece Lipschitz ratios."""
        return float(max(np.linalg.norm(w, 2) for w in self.W))

    def to_dict(self) -> dict:
        return {
            "permutation": list(self.permutation.mapping),
            "pieces": [
                {"W": self.W[i].tolist(), "b": self.b[i].tolist(), "anchor": self.anchors[i].tolist()}
                for i in range(self.k)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PiecewiseAffineGenerator":
        pieces = doc["pieces"]
        return cls(Permutation(tuple(doc["permutation"])),
                   np.array([p["W"] for p in pieces], dtype=float),
                   np.array([p["b"] for p in pieces], dtype=float),
                   np.array([p["anchor"] for p in pieces], dtype=float))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "PiecewiseAffineGenerator":
        return cls.from_dict(json.loads(text))


def apply(g: PiecewiseAffineGenerator, s: np.ndarray) -> np.ndarray:
    return g(s)


def _sym_power(cov: np.ndarray, power: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() <= 0:
        raise ValueError("covariance is not positive definite")
    return (vecs * vals ** power) @ vecs.T


def ideal_generator(source: ManifoldSpec, target: ManifoldSpec, p: Permutation) -> PiecewiseAffineGenerator:
    """Canonical member of F_p: piece i pushes N(x_i, S_M) exactly onto N(y_p(i), S_N)."""
    if source.k != target.k or len(p) != source.k:
        raise ValueError("source, target and permutation must agree on K")
    if source.dimension != target.dimension:
        raise ValueError("source and target dimensions differ")
    w = _sym_power(target.covariance, 0.5) @ _sym_power(source.covariance, -0.5)
    k = source.k
    W = np.tile(w, (k, 1, 1))
    x, y = source.means, target.means
    b = np.stack([y[p(i)] - w @ x[i] for i in range(k)])
    return PiecewiseAffineGenerator(p, W, b, x)


def constant_generator(source: ManifoldSpec, point, permutation: Permutation | None = None):
    """Every piece maps to ``point`` (W = 0)."""
    k, d = source.k, source.dimension
    return PiecewiseAffineGenerator(permutation or Permutation.identity(k), np.zeros((k, d, d)),
                                    np.tile(np.asarray(point, dtype=float), (k, 1)), source.means)


def chart_probes(spec: ManifoldSpec, n_probe: int, tolerance: float, seed: int) -> np.ndarray:
    """``n_probe`` draws per chart from the chart law restricted to Mahalanobis radius ``tolerance``.

    Returns an array of shape (K, n_probe, d).
    """
    d = spec.dimension
    out = np.empty((spec.k, n_probe, d))
    for c in spec.charts:
        rng = rng_for(seed, c.index)
        kept = []
        have = 0
        while have < n_probe:
            z = rng.standard_normal((2 * n_probe, d))
            z = z[np.linalg.norm(z, axis=1) <= tolerance]
            kept.append(z)
            have += z.shape[0]
        out[c.index] = c.transform(np.concatenate(kept)[:n_probe])
    return out


def _target_hits(g, source, target, n_probe, tolerance, seed) -> np.ndarray:
    probes = chart_probes(source, n_probe, tolerance, seed)
    k, n, d = probes.shape
    images = g(probes.reshape(-1, d))
    if not np.all(np.isfinite(images)):
        return np.full((k, n), -1)
    return target.nearest_chart(images).reshape(k, n)


class MembershipResult(NamedTuple):
    member: bool
    violation_rate: float


def pti_membership(g, source: ManifoldSpec, target: ManifoldSpec, n_probe: int = 1000,
                   tolerance: float = 3.0, seed: int = 0, threshold: float = 0.01,
                   permutation: Permutation | None = None) -> MembershipResult:
    """Sampled test of ``G(U_i) in V_p(i)`` for the declared (or given) permutation.

    Chart U_i is the Mahalanobis ball of radius ``tolerance`` around x_i; a
    probe is a violation when its image is nearer some target mean other than
    y_p(i).
    """
    if n_probe < 1:
        raise ValueError("n_probe must be >= 1")
    p = permutation or g.permutation
    hits = _target_hits(g, source, target, n_probe, tolerance, seed)
    expected = np.array(p.mapping)[:, None]
    rate = float(np.mean(hits != expected))
    return MembershipResult(rate <= threshold, rate)


def pti_index(g, source: ManifoldSpec, target: ManifoldSpec, n_probe: int = 200,
              tolerance: float = 3.0, seed: int = 0, threshold: float = 0.01) -> Permutation | None:
    """The permutation p with g in F_p (sampled), or None when g is in no family."""
    hits = _target_hits(g, source, target, n_probe, tolerance, seed)
    if np.any(hits < 0):
        return None
    k = source.k
    majority = [int(np.bincount(h, minlength=k).argmax()) for h in hits]
    if sorted(majority) != list(range(k)):
        return None
    rate = float(np.mean(hits != np.array(majority)[:, None]))
    return Permutation(tuple(majority)) if rate <= threshold else None


def lipschitz_estimate(g: PiecewiseAffineGenerator, n_pairs: int, region: ManifoldSpec, seed: int) -> float:
    """Largest ``||g(s) - g(s')|| / ||s - s'||`` over sampled pairs lying in one piece."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = rng_for(seed, 0)
    d = region.dimension
    charts = rng.integers(region.k, size=n_pairs)
    mu = region.means
    chol = region.charts[0].cholesky
    s = mu[charts] + rng.standard_normal((n_pairs, d)) @ chol.T
    t = mu[charts] + rng.standard_normal((n_pairs, d)) @ chol.T
    ps, pt = g.piece_of(s), g.piece_of(t)
    same = (ps == pt) & np.any(s != t, axis=1)
    if not np.any(same):
        return 0.0
    s, t, pieces = s[same], t[same], ps[same]
    num = np.linalg.norm(g.apply_with_pieces(s, pieces) - g.apply_with_pieces(t, pieces), axis=1)
    den = np.linalg.norm(s - t, axis=1)
    return float((num / den).max())
