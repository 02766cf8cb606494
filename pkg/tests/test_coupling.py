import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy.optimize import linprog

from chartgan.chart_model import ManifoldSpec, build_atlas
from chartgan.coupling import (
    FEASIBILITY_TOL,
    CostMatrix,
    CouplingMatrix,
    IllPosedGeneratorError,
    brute_force_coupling,
    coupling_objective,
    cost_matrix,
    indistinguishable_columns,
    random_couplings,
    solve_coupling,
    verify_localization,
)
from chartgan.generator import PiecewiseAffineGenerator, constant_generator, ideal_generator
from chartgan.permutation import Permutation
from chartgan._seeding import rng_for


def lp_optimum(c: np.ndarray) -> float:
    """Independent oracle: the H(K) program handed to a general LP solver."""
    k = c.shape[0]
    a_eq = np.zeros((k, k * k))
    for j in range(k):
        a_eq[j, j::k] = 1.0  # column j of the row-major flattening
    res = linprog(c.ravel(), A_eq=a_eq, b_eq=np.full(k, float(k)), bounds=(0, None), method="highs")
    assert res.status == 0
    return float(res.fun)


costs = st.integers(1, 6).flatmap(
    lambda k: hnp.arrays(np.float64, (k, k), elements=st.floats(0, 100, allow_subnormal=False)))


@given(costs)
@settings(max_examples=150, deadline=None)
def test_solver_matches_lp_oracle(c):
    sol = solve_coupling(c)
    k = c.shape[0]
    lp = lp_optimum(c)
    # never worse than the LP; may beat it only by HiGHS's own feasibility/optimality tolerance
    assert sol.objective <= lp + 1e-9
    assert sol.objective >= lp - 1e-6 * k * (1.0 + c.max())
    assert np.all(np.abs(sol.coupling.entries.sum(axis=0) - k) <= FEASIBILITY_TOL)
    assert np.all(sol.coupling.entries >= 0)
    assert sol.objective == pytest.approx(coupling_objective(sol.coupling.entries, c), abs=1e-9)


def test_solver_examples():
    sol = solve_coupling(np.array([[0.0, 5.0], [5.0, 0.0]]))
    assert np.array_equal(sol.coupling.entries, [[2, 0], [0, 2]]) and sol.objective == 0
    sol = solve_coupling(np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert np.array_equal(sol.coupling.entries, [[2, 2], [0, 0]]) and sol.objective == 4
    assert sol.coupling.permutation() is None
    sol = solve_coupling(np.array([[0.0, 3, 9], [9, 0, 3], [3, 9, 0]]))
    assert np.array_equal(sol.coupling.entries, 3 * np.eye(3)) and sol.objective == 0
    assert sol.coupling.permutation().is_identity


def test_solver_rejects_non_finite():
    with pytest.raises(ValueError):
        solve_coupling(np.array([[np.nan, 1.0], [1.0, 0.0]]))


@given(costs, st.data())
@settings(max_examples=60, deadline=None)
def test_column_equivariance(c, data):
    k = c.shape[0]
    q = data.draw(st.permutations(list(range(k))))
    base = solve_coupling(c).coupling.entries
    assert np.array_equal(solve_coupling(c[:, q]).coupling.entries, base[:, q])


def test_coupling_matrix_validation():
    with pytest.raises(ValueError):
        CouplingMatrix(np.array([[1.0, 2.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        CouplingMatrix(np.array([[3.0, -1.0], [-1.0, 3.0]]))
    with pytest.raises(ValueError):
        CouplingMatrix(np.ones((2, 3)))
    assert CouplingMatrix(2 * Permutation((1, 0)).matrix()).permutation() == Permutation((1, 0))


def test_cost_matrix_validation():
    with pytest.raises(ValueError):
        CostMatrix(np.array([[-1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        CostMatrix(np.array([[np.inf, 0.0], [0.0, 0.0]]))


def test_random_couplings_feasible():
    a = random_couplings(5, 1000, rng_for(0))
    assert a.shape == (1000, 5, 5)
    assert np.max(np.abs(a.sum(axis=1) - 5)) < FEASIBILITY_TOL and a.min() >= 0


def test_brute_force_examples():
    c = np.array([[0.0, 5.0], [5.0, 0.0]])
    res = brute_force_coupling(c, 100, 0)
    assert res.best >= 0.0
    assert coupling_objective(np.ones((2, 2)), c) == 10.0
    assert coupling_objective(np.array([[1.0, 1.0], [1.0, 1.0]]), c) > 0
    only = brute_force_coupling(c, 1, 0, extra=[np.ones((2, 2))], include_permutations=False)
    assert only.n_evaluated == 2
    with pytest.raises(ValueError):
        brute_force_coupling(c, 0, 0)


@pytest.mark.parametrize("seed", range(5))
def test_brute_force_never_beats_solver(seed):
    c = rng_for(seed).uniform(0, 10, (3, 3))
    bf = brute_force_coupling(c, 10_000, seed)
    assert bf.best >= solve_coupling(c).objective - 1e-9
    assert bf.n_evaluated == 10_000 + 6


def test_cost_matrix_dirac_examples(dirac_line):
    one = ManifoldSpec.from_means([[0.0, 0.0]], 1e-12 * np.eye(2))
    g1 = PiecewiseAffineGenerator.identity(one)
    assert cost_matrix(g1, one, one, 100, 0).entries[0, 0] < 1e-5
    g = PiecewiseAffineGenerator.identity(dirac_line)
    c = cost_matrix(g, dirac_line, dirac_line, 100, 0).entries
    assert np.allclose(np.diag(c), 0, atol=1e-5)
    assert np.allclose(c[[0, 1], [1, 0]], 10, atol=1e-5)
    const = constant_generator(dirac_line, [0.0])
    c = cost_matrix(const, dirac_line, dirac_line, 100, 0).entries
    assert np.allclose(c[:, 0], 0, atol=1e-5) and np.allclose(c[:, 1], 10, atol=1e-5)


def test_cost_matrix_errors(dirac_line):
    other = build_atlas(3, 1, 5.0, 1.0, 0)
    g = PiecewiseAffineGenerator.identity(dirac_line)
    with pytest.raises(ValueError):
        cost_matrix(g, dirac_line, other, 10, 0)
    with pytest.raises(ValueError):
        cost_matrix(g, dirac_line, build_atlas(2, 2, 5.0, 1.0, 0), 10, 0)
    broken = lambda s: np.full_like(s, np.nan)
    with pytest.raises(IllPosedGeneratorError):
        cost_matrix(broken, dirac_line, dirac_line, 10, 0)


def test_cost_matrix_cell_seeds_independent_of_k(dirac_line):
    g = PiecewiseAffineGenerator.identity(dirac_line)
    c1 = cost_matrix(g, dirac_line, dirac_line, 50, 3)
    c2 = cost_matrix(g, dirac_line, dirac_line, 50, 3)
    assert np.array_equal(c1.entries, c2.entries) and np.array_equal(c1.stderr, c2.stderr)


def test_localization_cycle_example():
    cov = 1e-10 * np.eye(2)
    source = ManifoldSpec.from_means([[0, 0], [20, 0], [0, 20], [20, 20]], cov)
    target = ManifoldSpec.from_means([[50, 0], [70, 0], [50, 20], [70, 20]], cov.copy())
    p = Permutation((1, 2, 3, 0))
    rep = verify_localization(ideal_generator(source, target, p), source, target, 200, 0)
    assert rep.match and rep.recovered_permutation == p and rep.member
    assert rep.discrepancy <= 3 * rep.stderr_eq16 + 1e-12
    assert rep.objective_eq14 == pytest.approx(rep.objective_eq16, abs=1e-12)
    doc = rep.to_dict()
    assert doc["recovered_permutation"] == [1, 2, 3, 0] and not doc["inconclusive"]


def test_localization_k1():
    spec = build_atlas(1, 2, 1.0, 1.0, 0)
    rep = verify_localization(ideal_generator(spec, spec, Permutation.identity(1)), spec, spec, 50, 0)
    assert rep.match and rep.inconclusive_columns == ()


def test_localization_overlap_flags_inconclusive():
    source = build_atlas(4, 2, 0.1, 10.0, 1)
    target = build_atlas(4, 2, 0.1, 10.0, 2)
    rep = verify_localization(ideal_generator(source, target, Permutation.identity(4)), source, target, 200, 0)
    assert rep.inconclusive


@pytest.mark.parametrize("seed", range(4))
def test_recovery_on_separated_specs(seed):
    source, target = build_atlas(4, 2, 20.0, 0.01, 100 + seed), build_atlas(4, 2, 20.0, 0.01, 200 + seed)
    p = Permutation.random(4, rng_for(seed))
    rep = verify_localization(ideal_generator(source, target, p), source, target, 1000, seed)
    assert rep.match and not rep.inconclusive


def test_indistinguishable_columns_rule():
    c = CostMatrix(np.array([[1.0, 0.0], [1.2, 5.0]]), stderr=np.array([[0.1, 0.01], [0.1, 0.01]]))
    assert indistinguishable_columns(c) == (0,)
    assert indistinguishable_columns(c, n_sigma=1.0) == ()
