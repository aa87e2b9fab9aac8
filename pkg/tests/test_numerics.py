import math

import numpy as np
import pytest

from gsc.numerics import (AdamState, adam_step, cosine, derive_rng, logsumexp,
                          make_rng, softmax_rows)

N_CASES = 120


def test_softmax_single_element():
    for x in (-3.0, 0.0, 7.5):
        out = softmax_rows(np.array([[x]]), tau=2.0)
        assert out.shape == (1, 1)
        assert out[0, 0] == pytest.approx(1.0, abs=0)


def test_softmax_equal_values_row():
    for n in (2, 5, 17):
        out = softmax_rows(np.full((1, n), 3.7), tau=0.5)
        assert np.allclose(out, 1.0 / n, atol=1e-15)


def test_softmax_analytic_ratio():
    out = softmax_rows(np.array([[0.0, math.log(2.0)]]), tau=1.0)
    assert out[0, 0] == pytest.approx(1.0 / 3.0, abs=1e-12)
    assert out[0, 1] == pytest.approx(2.0 / 3.0, abs=1e-12)


def test_softmax_invalid_arguments():
    with pytest.raises(ValueError):
        softmax_rows(np.ones((2, 2)), tau=0.0)
    with pytest.raises(ValueError):
        softmax_rows(np.ones((2, 2)), tau=-1.0)
    with pytest.raises(ValueError):
        softmax_rows(np.array([[1.0, np.nan]]), tau=1.0)
    with pytest.raises(ValueError):
        softmax_rows(np.array([[1.0, np.inf]]), tau=1.0)


def test_softmax_rows_sum_to_one_extreme_magnitudes():
    rng = derive_rng(0, "softmax-sums")
    for _ in range(N_CASES):
        rows = int(rng.integers(1, 8))
        cols = int(rng.integers(1, 12))
        scale = float(rng.choice([1.0, 10.0, 1e4]))
        m = rng.uniform(-scale, scale, size=(rows, cols))
        tau = float(rng.choice([0.05, 0.07, 1.0, 5.0]))
        out = softmax_rows(m, tau)
        assert np.all(out >= 0)
        assert np.max(np.abs(out.sum(axis=1) - 1.0)) < 1e-9


def test_softmax_shift_invariance():
    rng = derive_rng(1, "softmax-shift")
    for _ in range(N_CASES):
        m = rng.standard_normal((int(rng.integers(1, 6)), int(rng.integers(2, 9))))
        c = float(rng.uniform(-100.0, 100.0))
        tau = float(rng.uniform(0.05, 3.0))
        a = softmax_rows(m, tau)
        b = softmax_rows(m + c, tau)
        assert np.max(np.abs(a - b)) < 1e-12


def test_cosine_identity_orthogonal_analytic():
    u = np.array([0.6, 0.8])
    assert cosine(u, u) == pytest.approx(1.0, abs=1e-15)
    assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(0.0, abs=0)
    assert cosine(np.array([1.0, 0.0]), np.array([1.0, 1.0])) == pytest.approx(
        math.sqrt(2.0) / 2.0, abs=1e-15)


def test_cosine_zero_norm_is_degenerate_not_error():
    value, degenerate = cosine(np.zeros(3), np.ones(3), return_degenerate=True)
    assert value == 0.0 and degenerate
    value, degenerate = cosine(np.ones(3), np.ones(3), return_degenerate=True)
    assert not degenerate


def test_cosine_length_mismatch():
    with pytest.raises(ValueError):
        cosine(np.ones(3), np.ones(4))


def test_cosine_symmetry_and_scale_invariance():
    rng = derive_rng(2, "cosine-props")
    for _ in range(N_CASES):
        n = int(rng.integers(1, 10))
        u = rng.standard_normal(n)
        v = rng.standard_normal(n)
        assert cosine(u, v) == pytest.approx(cosine(v, u), abs=1e-15)
        s = float(rng.uniform(0.1, 50.0))
        assert cosine(s * u, v) == pytest.approx(cosine(u, v), abs=1e-12)
        assert -1.0 <= cosine(u, v) <= 1.0


def test_logsumexp_basics():
    assert logsumexp([4.25]) == 4.25  # exact for a single element
    assert logsumexp([0.0, 0.0]) == pytest.approx(math.log(2.0), abs=1e-15)
    out = logsumexp([1000.0, 1000.0])
    assert math.isfinite(out)
    assert out == pytest.approx(1000.0 + math.log(2.0), abs=1e-12)
    with pytest.raises(ValueError):
        logsumexp([])


def test_adam_first_step_moves_by_lr():
    p = [np.array([1.0])]
    state = AdamState.for_params(p)
    adam_step(p, [np.array([0.3])], state, lr=0.01)
    # bias-corrected first step is lr * g / (|g| + eps) ~= lr * sign(g)
    assert p[0][0] == pytest.approx(1.0 - 0.01, rel=1e-6)
    assert state.step == 1


def test_adam_zero_gradient_leaves_params_unchanged():
    p = [np.array([2.0, -1.0]), np.ones((2, 2))]
    state = AdamState.for_params(p)
    before = [x.copy() for x in p]
    for _ in range(5):
        adam_step(p, [np.zeros_like(x) for x in p], state, lr=0.1)
    for x, b in zip(p, before):
        assert np.array_equal(x, b)
    assert state.step == 5


def test_adam_deterministic_and_shape_preserving():
    shapes = [(3, 4), (4,), (2, 2)]

    def run_once():
        r = derive_rng(3, "adam-data")
        p = [r.standard_normal(s) for s in shapes]
        state = AdamState.for_params(p)
        for _ in range(10):
            adam_step(p, [r.standard_normal(s) for s in shapes], state, lr=1e-3)
        return p

    a, b = run_once(), run_once()
    for x, y, shape in zip(a, b, shapes):
        assert np.array_equal(x, y)
        assert x.shape == shape


def test_adam_shape_mismatch_error():
    p = [np.zeros((2, 2))]
    state = AdamState.for_params(p)
    with pytest.raises(ValueError):
        adam_step(p, [np.zeros(3)], state, lr=0.1)
    with pytest.raises(ValueError):
        adam_step(p, [np.zeros((2, 2))], state, lr=0.0)


def test_derived_rng_streams_are_stable_and_independent():
    a = derive_rng(42, "batches", 3, 0).standard_normal(5)
    b = derive_rng(42, "batches", 3, 0).standard_normal(5)
    c = derive_rng(42, "batches", 3, 1).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(make_rng(42).standard_normal(5),
                              make_rng(43).standard_normal(5))
