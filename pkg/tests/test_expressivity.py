import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from effcap import expressivity as ex
from effcap.errors import NumericError, ValidationError


def instance(n, d, seed):
    gen = np.random.default_rng(seed)
    return gen.standard_normal((n, d)), gen.standard_normal(n)


def random_interleaving(n, gen):
    pts = np.sort(gen.uniform(-5, 5, size=2 * n))
    return pts[1::2], pts[0::2]  # x, b


# -- triangular ReLU matrix ------------------------------------------------------------------


def test_lemma_example():
    lm, full, lam = ex.lemma_matrix_props([0.5, 1.5, 2.5], [0, 1, 2])
    assert np.array_equal(lm.A, [[0.5, 0, 0], [1.5, 0.5, 0], [2.5, 1.5, 0.5]])
    assert full and lam == 0.5
    lm, full, lam = ex.lemma_matrix_props([2.0], [1.0])
    assert lm.A.tolist() == [[1.0]] and lam == 1.0


def test_lemma_rejects_broken_interleaving():
    with pytest.raises(ValidationError):
        ex.lemma_matrix_props([0.5, 1.5], [1.0, 0.0])
    with pytest.raises(ValidationError):
        ex.lemma_matrix_props([0.5, 1.0], [0.0, 1.0])  # b_2 == x_2


@given(seed=st.integers(0, 2**32), n=st.integers(1, 8))
def test_lemma_min_eigenvalue_matches_dense_oracle(seed, n):
    x, b = random_interleaving(n, np.random.default_rng(seed))
    lm, full, lam = ex.lemma_matrix_props(x, b)
    assert np.all(np.triu(lm.A, 1) == 0)
    assert full
    assert lam == np.min(x - b)
    assert abs(lam - np.min(np.linalg.eigvals(lm.A).real)) <= 1e-9


@given(seed=st.integers(0, 2**32), n=st.integers(1, 64))
@settings(max_examples=40)
def test_forward_substitution_matches_dense_solver(seed, n):
    # construction-style breakpoints; arbitrary interleavings can be so badly
    # conditioned that no two solvers agree to 1e-8
    gen = np.random.default_rng(seed)
    x = np.sort(gen.standard_normal(n))
    b = ex.interleaving_breakpoints(x)
    y = gen.standard_normal(n)
    A = ex.relu_feature_matrix(x, b)
    w = ex.forward_substitution(A, y)
    ref = np.linalg.solve(A, y)
    assert np.max(np.abs(w - ref)) <= 1e-8 * (1 + np.max(np.abs(ref)))


def test_forward_substitution_zero_pivot():
    with pytest.raises(NumericError):
        ex.forward_substitution(np.array([[1.0, 0], [1.0, 0]]), np.ones(2))


def test_breakpoints_half_gap_rule():
    b = ex.interleaving_breakpoints(np.array([0.0, 1.0, 3.0]))
    assert b.tolist() == [-0.5, 0.5, 2.0]
    assert ex.interleaving_breakpoints(np.array([2.0]), margin=1.0).tolist() == [1.0]


# -- depth 2 -----------------------------------------------------------------------


def test_worked_example():
    model = ex.construct_depth2([[0.0], [1.0]], [3.0, -1.0], seed=0, direction=[1.0])
    assert model.b.tolist() == [-0.5, 0.5]
    assert ex.relu_feature_matrix(np.array([0.0, 1.0]), model.b).tolist() == [[0.5, 0], [1.5, 0.5]]
    assert model.w.tolist() == [6.0, -20.0]
    assert ex.eval_interpolator(model, [0.0]) == 3.0
    assert ex.eval_interpolator(model, [1.0]) == -1.0


def test_zero_targets_give_zero_weights():
    z, _ = instance(10, 3, 0)
    model = ex.construct_depth2(z, np.zeros(10), seed=1)
    assert not model.w.any()


@given(seed=st.integers(0, 2**32), n=st.integers(1, 256), d=st.integers(1, 32))
@settings(max_examples=40)
def test_depth2_interpolates(seed, n, d):
    z, y = instance(n, d, seed)
    model = ex.construct_depth2(z, y, seed)
    assert model.weight_count == d + 2 * n
    assert np.linalg.norm(model.a) == pytest.approx(1.0)
    assert ex.check_interleaving(np.sort(z @ model.a), model.b)
    assert ex.fit_residuals(model, z, y) <= 1e-6
    assert np.array_equal(np.sort(model.sort_order), np.arange(n))


def test_dead_zone_and_piecewise_linearity():
    z, y = instance(20, 4, 3)
    model = ex.construct_depth2(z, y, 3)
    below = (model.b[0] - 1.0) * model.a
    assert model(below) == 0.0
    # three collinear points whose projections stay inside one breakpoint interval
    lo, hi = model.b[4], model.b[5]
    ts = np.array([0.25, 0.5, 0.75]) * (hi - lo) + lo
    vals = model(np.outer(ts, model.a))
    assert vals[1] - vals[0] == pytest.approx(vals[2] - vals[1], rel=1e-9, abs=1e-12)


def test_depth2_rejects_duplicates_and_bad_shapes():
    with pytest.raises(ValidationError):
        ex.construct_depth2([[1.0, 2.0], [1.0, 2.0]], [0.0, 1.0], 0)
    with pytest.raises(ValidationError):
        ex.construct_depth2([[1.0], [2.0]], [0.0], 0)


def test_depth2_json_roundtrip():
    z, y = instance(7, 3, 0)
    model = ex.construct_depth2(z, y, 0)
    doc = json.loads(json.dumps(model.to_json()))
    assert set(doc) == {"d", "n", "a", "b", "w", "sort_order"}
    again = ex.InterpolatorNet.from_json(doc)
    assert np.array_equal(again(z), model(z))


# -- depth k -----------------------------------------------------------------------


@given(seed=st.integers(0, 2**32), n=st.integers(2, 80), d=st.integers(1, 10), data=st.data())
@settings(max_examples=40)
def test_depth_k_interpolates_within_budget(seed, n, d, data):
    k = data.draw(st.integers(2, n + 1))
    z, y = instance(n, d, seed)
    model = ex.construct_depth_k(z, y, k, seed)
    assert ex.fit_residuals(model, z, y) <= 1e-6
    blocks = k - 1
    assert len(model.blocks) == math.ceil(n / math.ceil(n / blocks))
    assert all(blk.indices.size <= math.ceil(n / blocks) for blk in model.blocks)
    assert model.weight_count <= ex.WEIGHT_CONSTANT * (n + d)
    if k <= n:
        assert max(model.widths) <= ex.WIDTH_CONSTANT * n / k


def test_depth_k_layer_count():
    z, y = instance(64, 8, 0)
    for k in (3, 4, 8):
        model = ex.construct_depth_k(z, y, k, 0)
        assert model.depth == (k - 1) + 2
    assert ex.construct_depth_k(z, y, 2, 0).depth == 2


def test_depth_k2_matches_depth2_off_sample():
    z, y = instance(30, 5, 4)
    a = ex.construct_depth2(z, y, 4)
    b = ex.construct_depth_k(z, y, 2, 4)
    assert np.array_equal(a.a, b.a)
    probe = np.random.default_rng(9).standard_normal((50, 5))
    assert np.allclose(a(probe), b(probe), rtol=1e-8, atol=1e-8)


def test_gates_are_exact_on_sample():
    z, y = instance(40, 3, 2)
    model = ex.construct_depth_k(z, y, 5, 2)
    t = model.project(z)
    for blk in model.blocks:
        g = blk.gate_value(t)
        inside = np.zeros(40, bool)
        inside[blk.indices] = True
        assert np.allclose(g[inside], 1.0) and np.allclose(g[~inside], 0.0, atol=1e-12)
        assert model.M > np.max(np.abs(blk.value(t))) + 1 - 1e-12


def test_depth_k_range_and_json():
    z, y = instance(6, 2, 0)
    with pytest.raises(ValidationError):
        ex.construct_depth_k(z, y, 1, 0)
    with pytest.raises(ValidationError):
        ex.construct_depth_k(z, y, 8, 0)
    doc = ex.construct_depth_k(z, y, 3, 0).to_json()
    assert {"d", "n", "a", "sort_order", "k", "blocks", "gates", "M"} <= set(doc)
    assert len(doc["gates"]) == 2
