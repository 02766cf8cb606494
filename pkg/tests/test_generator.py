import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chartgan.chart_model import ChartGaussian, ManifoldSpec, build_atlas, sample_chart
from chartgan.generator import (
    PiecewiseAffineGenerator,
    apply,
    chart_probes,
    constant_generator,
    ideal_generator,
    lipschitz_estimate,
    pti_index,
    pti_membership,
)
from chartgan.permutation import Permutation


def _gen(means, W, b, p=None):
    means = np.asarray(means, dtype=float)
    k = means.shape[0]
    return PiecewiseAffineGenerator(p or Permutation.identity(k), np.asarray(W, float), np.asarray(b, float), means)


def test_apply_examples():
    spec = build_atlas(3, 2, 5.0, 1.0, 0)
    g = PiecewiseAffineGenerator.identity(spec)
    s = np.array([0.3, -7.0])
    assert np.array_equal(apply(g, s), s)
    g = _gen([[0.0, 0.0]], [2 * np.eye(2)], [[1.0, 1.0]])
    assert np.array_equal(g(np.zeros(2)), [1.0, 1.0])
    g = _gen([[0.0], [10.0]], [[[1.0]], [[1.0]]], [[5.0], [-5.0]])
    assert g(np.array([0.3]))[0] == pytest.approx(5.3)
    assert g(np.array([9.8]))[0] == pytest.approx(4.8)
    with pytest.raises(ValueError):
        g(np.zeros((1, 2)))


def test_generator_validation():
    with pytest.raises(ValueError):
        _gen([[0.0], [1.0]], [[[1.0]]], [[0.0], [0.0]])
    with pytest.raises(ValueError):
        _gen([[0.0]], [[[np.inf]]], [[0.0]])


def test_ideal_examples():
    spec = build_atlas(3, 2, 5.0, 0.7, 4)
    g = ideal_generator(spec, spec, Permutation.identity(3))
    assert np.allclose(g.W, np.eye(2), atol=1e-12) and np.allclose(g.b, 0, atol=1e-12)
    src = ManifoldSpec.from_means([[0.0]], [[1.0]])
    tgt = ManifoldSpec.from_means([[3.0]], [[4.0]])
    g = ideal_generator(src, tgt, Permutation.identity(1))
    assert g.W[0, 0, 0] == pytest.approx(2.0) and g.b[0, 0] == pytest.approx(3.0)


def test_ideal_swap_lands_in_partner_ball():
    source, target = build_atlas(2, 2, 20.0, 0.1, 1), build_atlas(2, 2, 20.0, 0.1, 2)
    g = ideal_generator(source, target, Permutation((1, 0)))
    pts = sample_chart(source.charts[0], 10_000, 0).points
    img = g(pts)
    L = target.charts[1].cholesky
    z = np.linalg.solve(L, (img - target.charts[1].mean).T).T
    assert np.mean(np.linalg.norm(z, axis=1) <= 3.0) > 0.98
    assert np.mean(target.nearest_chart(img) == 1) > 0.99


def test_pushforward_moments():
    source, target = build_atlas(3, 2, 20.0, 0.5, 5), build_atlas(3, 2, 20.0, 2.0, 6)
    p = Permutation((2, 0, 1))
    g = ideal_generator(source, target, p)
    n = 50_000
    for i in range(3):
        img = g(sample_chart(source.charts[i], n, i).points)
        sd = np.sqrt(np.diag(target.covariance))
        assert np.all(np.abs(img.mean(axis=0) - target.means[p(i)]) < 3 * sd / np.sqrt(n))
        assert np.allclose(np.cov(img.T), target.covariance, atol=0.05)


def test_composition_is_identity():
    a, b = build_atlas(3, 2, 20.0, 0.3, 1), build_atlas(3, 2, 20.0, 1.5, 2)
    p = Permutation((1, 2, 0))
    fwd, back = ideal_generator(a, b, p), ideal_generator(b, a, p.inverse())
    pts = np.concatenate([sample_chart(c, 200, c.index).points for c in a.charts])
    assert np.max(np.abs(back(fwd(pts)) - pts)) < 1e-9


def test_membership_examples(separated_pair):
    source, target = separated_pair
    g = ideal_generator(source, target, Permutation.identity(4))
    res = pti_membership(g, source, target)
    assert res.member and res.violation_rate == 0.0
    swapped = ideal_generator(source, target, Permutation((1, 0, 3, 2))).with_permutation(Permutation.identity(4))
    res = pti_membership(swapped, source, target)
    assert not res.member and res.violation_rate == pytest.approx(1.0)
    one = build_atlas(1, 2, 1.0, 1.0, 0)
    assert pti_membership(constant_generator(one, [100.0, 100.0]), one, one).member
    with pytest.raises(ValueError):
        pti_membership(g, source, target, n_probe=0)


def test_pti_index(separated_pair):
    source, target = separated_pair
    p = Permutation((3, 2, 1, 0))
    assert pti_index(ideal_generator(source, target, p), source, target) == p
    mid = target.means.mean(axis=0)
    assert pti_index(constant_generator(source, mid), source, target) is None


def test_probes_inside_tolerance(separated_pair):
    source, _ = separated_pair
    probes = chart_probes(source, 500, 2.0, 0)
    for c in source.charts:
        z = np.linalg.solve(c.cholesky, (probes[c.index] - c.mean).T).T
        assert np.linalg.norm(z, axis=1).max() <= 2.0 + 1e-12


def test_lipschitz_examples():
    spec = build_atlas(2, 2, 20.0, 1.0, 0)
    assert lipschitz_estimate(PiecewiseAffineGenerator.identity(spec), 1000, spec, 0) == pytest.approx(1.0)
    line = ManifoldSpec.from_means([[0.0]], [[1.0]])
    assert lipschitz_estimate(_gen([[0.0]], [[[2.0]]], [[0.0]]), 100, line, 0) == pytest.approx(2.0)
    plane = ManifoldSpec.from_means([[0.0, 0.0]], np.eye(2))
    g = _gen([[0.0, 0.0]], [np.diag([1.0, 3.0])], [[0.0, 0.0]])
    est = lipschitz_estimate(g, 100_000, plane, 0)
    assert 0.99 * 3 <= est <= 3 + 1e-12
    with pytest.raises(ValueError):
        lipschitz_estimate(g, 0, plane, 0)


@given(st.integers(0, 10_000), st.integers(1, 4))
@settings(max_examples=25, deadline=None)
def test_lipschitz_never_exceeds_spectral_bound(seed, k):
    rng = np.random.default_rng(seed)
    spec = build_atlas(k, 2, 5.0, 1.0, seed)
    g = PiecewiseAffineGenerator(Permutation.identity(k), rng.normal(size=(k, 2, 2)), rng.normal(size=(k, 2)), spec.means)
    assert lipschitz_estimate(g, 2000, spec, seed) <= g.spectral_bound() * (1 + 1e-12)


def test_lipschitz_converges_from_below():
    plane = ManifoldSpec.from_means([[0.0, 0.0]], np.eye(2))
    g = _gen([[0.0, 0.0]], [[[1.0, 2.0], [0.5, -1.0]]], [[0.0, 0.0]])
    small, big = lipschitz_estimate(g, 100, plane, 0), lipschitz_estimate(g, 100_000, plane, 0)
    assert small <= big <= g.spectral_bound() + 1e-12
    assert big == pytest.approx(g.spectral_bound(), rel=1e-2)


def test_json_round_trip(separated_pair):
    source, target = separated_pair
    g = ideal_generator(source, target, Permutation((1, 0, 3, 2)))
    back = PiecewiseAffineGenerator.from_json(g.to_json())
    assert back.permutation == g.permutation
    assert np.array_equal(back.W, g.W) and np.array_equal(back.b, g.b) and np.array_equal(back.anchors, g.anchors)
    doc = g.to_dict()
    assert set(doc) == {"permutation", "pieces"} and set(doc["pieces"][0]) >= {"W", "b"}


def test_params_round_trip(separated_pair):
    source, target = separated_pair
    g = ideal_generator(source, target, Permutation.identity(4))
    h = g.with_params(g.params())
    assert np.array_equal(h.W, g.W) and np.array_equal(h.b, g.b)
