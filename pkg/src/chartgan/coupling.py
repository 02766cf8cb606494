"""Chart-pair cost matrices and the coupling program over H(K).

H(K) is the set of nonnegative K x K matrices whose columns each sum to K.
Minimising sum_ij A_ij C_ij over H(K) separates into one program per column,
each a linear functional over a scaled simplex, so the optimum puts mass K on
the cheapest row of every column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._seeding import rng_for
from .chart_model import ManifoldSpec
from .generator import pti_membership
from .permutation import Permutation

FEASIBILITY_TOL = 1e-9


class IllPosedGeneratorError(ValueError):
    """The generator produced non-finite output on chart samples."""


@dataclass(frozen=True, eq=False)
class CouplingMatrix:
    entries: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("coupling matrix must be square")
        check_feasible(a)
        object.__setattr__(self, "entries", a)

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    def permutation(self) -> Permutation | None:
        """p with A = K * P_p, or None when the support is not a permutation."""
        k = self.k
        rows = self.entries.argmax(axis=0)
        if sorted(rows.tolist()) != list(range(k)):
            return None
        if not np.allclose(self.entries[rows, np.arange(k)], k):
            return None
        mapping = [0] * k
        for j, i in enumerate(rows):
            mapping[i] = j
        return Permutation(tuple(mapping))


def check_feasible(a: np.ndarray, tol: float = FEASIBILITY_TOL):
    k = a.shape[0]
    if np.any(a < 0):
        raise ValueError("coupling matrix has negative entries")
    if np.any(np.abs(a.sum(axis=0) - k) > tol):
        raise ValueError(f"column sums {a.sum(axis=0)} differ from K={k}")


@dataclass(frozen=True, eq=False)
class CostMatrix:
    entries: np.ndarray
    stderr: np.ndarray = None
    n_per_pair: int = 0

    def __post_init__(self):
        c = np.asarray(self.entries, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("cost matrix must be square")
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise ValueError("cost entries must be finite and nonnegative")
        se = np.zeros_like(c) if self.stderr is None else np.asarray(self.stderr, dtype=float)
        object.__setattr__(self, "entries", c)
        object.__setattr__(self, "stderr", se)

    @property
    def k(self) -> int:
        return self.entries.shape[0]


def _entries(c) -> np.ndarray:
    return c.entries if isinstance(c, CostMatrix) else np.asarray(c, dtype=float)


@dataclass(frozen=True, eq=False)
class CellSamples:
    """Frozen draws for every chart pair: ``s[i, j]`` from source chart i, ``t[i, j]`` from target chart j."""

    s: np.ndarray
    t: np.ndarray
    pieces: np.ndarray = None


def sample_cells(source: ManifoldSpec, target: ManifoldSpec, n_per_pair: int, seed: int,
                 anchors: np.ndarray | None = None) -> CellSamples:
    if source.k != target.k:
        raise ValueError("source and target must have the same number of charts")
    if source.dimension != target.dimension:
        raise ValueError("source and target dimensions differ")
    k, d = source.k, source.dimension
    s = np.empty((k, k, n_per_pair, d))
    t = np.empty((k, k, n_per_pair, d))
    for i in range(k):
        for j in range(k):
            s[i, j] = source.charts[i].transform(rng_for(seed, i, j, 0).standard_normal((n_per_pair, d)))
            t[i, j] = target.charts[j].transform(rng_for(seed, i, j, 1).standard_normal((n_per_pair, d)))
    pieces = None
    if anchors is not None:
        flat = s.reshape(-1, d)
        pieces = ((flat[:, None, :] - anchors[None]) ** 2).sum(-1).argmin(1).reshape(k, k, n_per_pair)
    return CellSamples(s, t, pieces)


def cell_distances(g, cells: CellSamples) -> np.ndarray:
    """``||g(s) - t||`` for every frozen draw, shape (K, K, n)."""
    k, _, n, d = cells.s.shape
    flat = cells.s.reshape(-1, d)
    if cells.pieces is not None:
        img = g.apply_with_pieces(flat, cells.pieces.reshape(-1))
    else:
        img = np.asarray(g(flat), dtype=float)
    if img.shape != flat.shape:
        raise ValueError(f"generator returned shape {img.shape}, expected {flat.shape}")
    if not np.all(np.isfinite(img)):
        raise IllPosedGeneratorError("generator output is not finite")
    return np.linalg.norm(img.reshape(k, k, n, d) - cells.t, axis=-1)


def cost_from_cells(g, cells: CellSamples) -> CostMatrix:
    dist = cell_distances(g, cells)
    n = dist.shape[-1]
    se = dist.std(axis=-1, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(dist.shape[:2])
    return CostMatrix(dist.mean(axis=-1), se, n)


def cost_matrix(g, source: ManifoldSpec, target: ManifoldSpec, n_per_pair: int, seed: int) -> CostMatrix:
    """Monte-Carlo estimate of C_ij = E||g(s) - t||, s ~ mu_i, t ~ nu_j.

    Cell (i, j) uses its own sub-seeds (seed, i, j, 0) and (seed, i, j, 1).
    """
    if n_per_pair < 1:
        raise ValueError("n_per_pair must be >= 1")
    return cost_from_cells(g, sample_cells(source, target, n_per_pair, seed))


@dataclass(frozen=True, eq=False)
class CouplingSolution:
    coupling: CouplingMatrix
    objective: float
    rows: np.ndarray


def solve_coupling(c) -> CouplingSolution:
    """Exact minimiser of sum_ij A_ij C_ij over H(K); ties go to the lowest row."""
    cost = _entries(c)
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    k = cost.shape[0]
    rows = cost.argmin(axis=0)
    a = np.zeros_like(cost)
    a[rows, np.arange(k)] = k
    objective = float(k * cost[rows, np.arange(k)].sum())
    return CouplingSolution(CouplingMatrix(a), objective, rows)


def coupling_objective(a, c) -> float:
    return float((np.asarray(a) * _entries(c)).sum())


def random_couplings(k: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` random points of H(K): every column is K times a flat Dirichlet draw."""
    cols = rng.dirichlet(np.ones(k), size=(n, k))  # (n, col, row)
    return k * cols.transpose(0, 2, 1)


@dataclass(frozen=True)
class BruteForceResult:
    best: float
    n_evaluated: int
    best_candidate: np.ndarray = field(repr=False, default=None)
    max_infeasibility: float = 0.0


def brute_force_coupling(c, n_candidates: int, seed: int, extra=(), include_permutations: bool = True,
                         chunk: int = 4096) -> BruteForceResult:
    """Minimum objective over random points of H(K), the K! scaled permutation matrices (K <= 6)
    and any ``extra`` candidates."""
    if n_candidates < 1:
        raise ValueError("n_candidates must be >= 1")
    cost = _entries(c)
    k = cost.shape[0]
    rng = rng_for(seed, 0)
    best, best_a, count, worst = math.inf, None, 0, 0.0

    def consider(batch):
        nonlocal best, best_a, count, worst
        worst = max(worst, float(np.abs(batch.sum(axis=1) - k).max()))
        if np.any(batch < 0):
            raise ValueError("candidate outside H(K)")
        obj = np.einsum("nij,ij->n", batch, cost)
        i = int(obj.argmin())
        if obj[i] < best:
            best, best_a = float(obj[i]), batch[i].copy()
        count += batch.shape[0]

    left = n_candidates
    while left > 0:
        size = min(chunk, left)
        consider(random_couplings(k, size, rng))
        left -= size
    if include_permutations and k <= 6:
        consider(np.stack([k * p.matrix() for p in Permutation.all(k)]))
    if len(extra):
        consider(np.stack([np.asarray(a, dtype=float) for a in extra]))
    return BruteForceResult(best, count, best_a, worst)


@dataclass(frozen=True, eq=False)
class LocalizationReport:
    declared_permutation: Permutation
    recovered_permutation: Permutation | None
    match: bool
    objective_eq14: float
    objective_eq16: float
    discrepancy: float
    stderr_eq16: float
    inconclusive_columns: tuple
    member: bool
    violation_rate: float
    cost: CostMatrix = field(repr=False)
    coupling: CouplingMatrix = field(repr=False)

    @property
    def inconclusive(self) -> bool:
        return bool(self.inconclusive_columns)

    def to_dict(self) -> dict:
        rec = self.recovered_permutation
        return {
            "declared_permutation": list(self.declared_permutation.mapping),
            "recovered_permutation": None if rec is None else list(rec.mapping),
            "match": self.match,
            "objective_eq14": self.objective_eq14,
            "objective_eq16": self.objective_eq16,
            "discrepancy": self.discrepancy,
            "stderr_eq16": self.stderr_eq16,
            "inconclusive_columns": list(self.inconclusive_columns),
            "inconclusive": self.inconclusive,
            "member": self.member,
            "violation_rate": self.violation_rate,
            "cost": self.cost.entries.tolist(),
            "cost_stderr": self.cost.stderr.tolist(),
            "coupling": self.coupling.entries.tolist(),
        }


def indistinguishable_columns(c: CostMatrix, n_sigma: float = 3.0) -> tuple:
    """Columns whose best and runner-up cells differ by less than ``n_sigma`` combined stderr."""
    if c.k < 2:
        return ()
    flagged = []
    for j in range(c.k):
        order = np.argsort(c.entries[:, j], kind="stable")
        i0, i1 = order[0], order[1]
        gap = c.entries[i1, j] - c.entries[i0, j]
        if gap < n_sigma * math.hypot(c.stderr[i0, j], c.stderr[i1, j]):
            flagged.append(j)
    return tuple(flagged)


def verify_localization(g, source: ManifoldSpec, target: ManifoldSpec, n_per_pair: int, seed: int,
                        n_probe: int = 1000) -> LocalizationReport:
    """Check that the solved coupling is K * P_p for the generator's declared p.

    ``objective_eq16`` is the paired-chart sum K * sum_i C_{i, p(i)} (the
    paired integrals weighted by the coupling mass K), so that it matches the
    H(K) objective at the optimum whenever localization holds.
    """
    p = g.permutation
    c = cost_matrix(g, source, target, n_per_pair, seed)
    sol = solve_coupling(c)
    rec = sol.coupling.permutation()
    k = c.k
    idx = np.arange(k)
    paired = c.entries[idx, list(p.mapping)]
    eq16 = float(k * paired.sum())
    se16 = float(k * math.sqrt((c.stderr[idx, list(p.mapping)] ** 2).sum()))
    membership = pti_membership(g, source, target, n_probe=n_probe, seed=seed)
    return LocalizationReport(
        declared_permutation=p,
        recovered_permutation=rec,
        match=rec == p,
        objective_eq14=sol.objective,
        objective_eq16=eq16,
        discrepancy=abs(sol.objective - eq16),
        stderr_eq16=se16,
        inconclusive_columns=indistinguishable_columns(c),
        member=membership.member,
        violation_rate=membership.violation_rate,
        cost=c,
        coupling=sol.coupling,
    )
