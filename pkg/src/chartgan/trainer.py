"""Toy optimizer for the combined objective L_adv(G) + lambda * L_L1(G).

The adversarial loss is the H(K) coupling objective on a Monte-Carlo cost
matrix, normalised by K^2; the identity loss pairs chart i's source draws with
chart i's target draws (ground-truth pairing is the identity). Parameters are
updated by plain gradient descent on central finite-difference gradients,
with one frozen batch per step.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._seeding import derive_seed, rng_for
from .chart_model import ManifoldSpec
from .coupling import cell_distances, cost_from_cells, sample_cells, solve_coupling
from .generator import PiecewiseAffineGenerator, pti_index
from .permutation import Permutation

DIVERGENCE_FACTOR = 1e6


class TrainingDivergedError(RuntimeError):
    def __init__(self, message, trace=None, generator=None):
        super().__init__(message)
        self.trace = trace
        self.generator = generator


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.0
    steps: int = 100
    step_size: float = 0.2
    batch: int = 32
    seed: int = 0
    init_scale: float = 0.1
    h: float = 1e-5
    n_probe: int = 200

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.step_size < 0:
            raise ValueError("step_size must be >= 0")
        if self.batch < 2:
            raise ValueError("batch must be >= 2")
        if self.h <= 0:
            raise ValueError("h must be > 0")


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss_adv: float
    loss_l1: float
    combined: float
    recovered_permutation: Permutation | None
    pti_member: Permutation | None

    def row(self) -> dict:
        d = asdict(self)
        for key in ("recovered_permutation", "pti_member"):
            p = getattr(self, key)
            d[key] = "" if p is None else p.cycle_string()
        return d


@dataclass
class TrainTrace:
    """``records[t - 1]`` follows update t; the step-0 state is kept in ``initial``."""

    initial: StepRecord
    records: list = field(default_factory=list)
    diverged: bool = False
    message: str = ""

    def __len__(self):
        return len(self.records)

    def all_records(self) -> list:
        return [self.initial] + list(self.records)

    @property
    def final(self) -> StepRecord:
        return self.records[-1] if self.records else self.initial


@dataclass(frozen=True)
class TrainResult:
    trace: TrainTrace
    generator: PiecewiseAffineGenerator
    initial: PiecewiseAffineGenerator


def two_chart_config(trace: float = 0.02, source_gap: float = 2.0, target_gap: float = 10.0):
    """Standard 2-chart demo: source charts on the x-axis, target charts on the y-axis.

    A near-identity generator is equidistant from both target charts, so the
    adversarial loss alone has no preference between the two pairings.
    """
    cov = np.eye(2) * (trace / 2.0)
    source = ManifoldSpec.from_means([[-source_gap, 0.0], [source_gap, 0.0]], cov)
    target = ManifoldSpec.from_means([[0.0, -target_gap], [0.0, target_gap]], cov.copy())
    return source, target


def initial_generator(source: ManifoldSpec, init_scale: float, seed: int) -> PiecewiseAffineGenerator:
    k, d = source.k, source.dimension
    rng = rng_for(seed, 0)
    W = np.eye(d) + init_scale * rng.standard_normal((k, d, d))
    b = init_scale * rng.standard_normal((k, d))
    return PiecewiseAffineGenerator(Permutation.identity(k), W, b, source.means)


@dataclass(frozen=True, eq=False)
class FrozenBatch:
    cells: object
    l1_s: np.ndarray
    l1_t: np.ndarray
    l1_pieces: np.ndarray


def frozen_batch(source: ManifoldSpec, target: ManifoldSpec, batch: int, seed: int) -> FrozenBatch:
    anchors = source.means
    cells = sample_cells(source, target, batch, derive_seed(seed, 0), anchors=anchors)
    d = source.dimension
    s = np.concatenate([c.transform(rng_for(seed, 1, c.index, 0).standard_normal((batch, d))) for c in source.charts])
    t = np.concatenate([c.transform(rng_for(seed, 1, c.index, 1).standard_normal((batch, d))) for c in target.charts])
    pieces = ((s[:, None, :] - anchors[None]) ** 2).sum(-1).argmin(1)
    return FrozenBatch(cells, s, t, pieces)


def _adv_from_batch(g, fb: FrozenBatch) -> float:
    k = fb.cells.s.shape[0]
    cost = cell_distances(g, fb.cells).mean(axis=-1)
    return float(k * cost.min(axis=0).sum()) / k ** 2


def _l1_from_batch(g, fb: FrozenBatch) -> float:
    img = g.apply_with_pieces(fb.l1_s, fb.l1_pieces)
    return float(np.linalg.norm(img - fb.l1_t, axis=1).mean())


def loss_adv(g, source: ManifoldSpec, target: ManifoldSpec, batch: int, seed: int) -> float:
    """(1/K^2) times the optimal H(K) objective on a fresh cost matrix."""
    if batch < 2:
        raise ValueError("batch must be >= 2")
    cells = sample_cells(source, target, batch, seed)
    return solve_coupling(cost_from_cells(g, cells)).objective / source.k ** 2


def loss_l1(g, paired_batch) -> float:
    """Mean ||g(s) - t|| over same-index pairs within each chart.

    ``paired_batch`` is a sequence of (source_points, target_points) per chart.
    """
    if not paired_batch:
        raise ValueError("empty batch")
    s = np.concatenate([np.atleast_2d(a) for a, _ in paired_batch])
    t = np.concatenate([np.atleast_2d(b) for _, b in paired_batch])
    if s.shape != t.shape or s.shape[0] == 0:
        raise ValueError("paired batch must have matching, non-empty source and target draws")
    return float(np.linalg.norm(g(s) - t, axis=1).mean())


def loss_l1_grad_b(g, paired_batch) -> np.ndarray:
    """Analytic gradient of :func:`loss_l1` with respect to every offset b_i, shape (K, d)."""
    s = np.concatenate([np.atleast_2d(a) for a, _ in paired_batch])
    t = np.concatenate([np.atleast_2d(b) for _, b in paired_batch])
    pieces = g.piece_of(s)
    r = g.apply_with_pieces(s, pieces) - t
    unit = r / np.linalg.norm(r, axis=1, keepdims=True)
    grad = np.zeros_like(g.b)
    np.add.at(grad, pieces, unit)
    return grad / s.shape[0]


def finite_difference_gradient(f, theta: np.ndarray, h: float) -> np.ndarray:
    grad = np.empty_like(theta)
    probe = theta.copy()
    for j in range(theta.size):
        probe[j] = theta[j] + h
        fp = f(probe)
        probe[j] = theta[j] - h
        fm = f(probe)
        probe[j] = theta[j]
        grad[j] = (fp - fm) / (2.0 * h)
    return grad


def _record(step, g, fb, lam, source, target, config) -> StepRecord:
    adv = _adv_from_batch(g, fb)
    l1 = _l1_from_batch(g, fb)
    cost = cost_from_cells(g, fb.cells)
    recovered = solve_coupling(cost).coupling.permutation()
    member = pti_index(g, source, target, n_probe=config.n_probe, seed=derive_seed(config.seed, 3))
    return StepRecord(step, adv, l1, adv + lam * l1, recovered, member)


def train(config: TrainConfig, source: ManifoldSpec, target: ManifoldSpec,
          initial: PiecewiseAffineGenerator | None = None) -> TrainResult:
    """Gradient descent with step ``step_size / (1 + lambda)`` on finite-difference gradients.

    Losses in the trace are measured on one evaluation batch fixed for the
    whole run; gradients use a fresh frozen batch at every step. Raises
    :class:`TrainingDivergedError` (carrying the partial trace) when the
    combined loss exceeds ``DIVERGENCE_FACTOR`` times its initial value.
    """
    g0 = initial or initial_generator(source, config.init_scale, config.seed)
    lam = config.lam
    eval_batch = frozen_batch(source, target, config.batch, derive_seed(config.seed, 1))
    trace = TrainTrace(_record(0, g0, eval_batch, lam, source, target, config))
    limit = DIVERGENCE_FACTOR * max(trace.initial.combined, np.finfo(float).tiny)
    g = g0
    theta = g0.params()
    rate = config.step_size / (1.0 + lam)
    for step in range(1, config.steps + 1):
        fb = frozen_batch(source, target, config.batch, derive_seed(config.seed, 2, step))

        def objective(th):
            gg = g0.with_params(th)
            return _adv_from_batch(gg, fb) + lam * _l1_from_batch(gg, fb)

        if rate > 0:
            theta = theta - rate * finite_difference_gradient(objective, theta, config.h)
        try:
            g = g0.with_params(theta)
            rec = _record(step, g, eval_batch, lam, source, target, config)
        except ValueError as exc:
            trace.diverged, trace.message = True, f"step {step}: {exc}"
            raise TrainingDivergedError(trace.message, trace, g) from exc
        trace.records.append(rec)
        if not math.isfinite(rec.combined) or rec.combined > limit:
            trace.diverged = True
            trace.message = (f"step {step}: combined loss {rec.combined:.6g} exceeds "
                             f"{DIVERGENCE_FACTOR:g} x initial {trace.initial.combined:.6g}")
            raise TrainingDivergedError(trace.message, trace, g)
    return TrainResult(trace, g, g0)


def attractor_probe(trace):
    """First step at which the generator is a PTI member, and whether the recovered
    pairing then stays equal to that member's permutation until the end.

    A :class:`TrainTrace` is probed including its step-0 state. Returns
    ``(None, False)`` when membership never occurs.
    """
    records = trace.all_records() if isinstance(trace, TrainTrace) else list(trace)
    if not records:
        raise ValueError("empty trace")
    for pos, rec in enumerate(records):
        if rec.pti_member is not None:
            p = rec.pti_member
            persisted = all(r.recovered_permutation == p for r in records[pos + 1:])
            return rec.step, persisted
    return None, False
