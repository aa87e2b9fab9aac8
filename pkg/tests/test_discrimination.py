import math

import numpy as np
import pytest

from gsc.discrimination import (GmmModel, SoftLabels, combine_labels,
                                cross_modal_indicator, ensemble_update, gmm_fit,
                                gmm_posterior, intra_structure_score)
from gsc.numerics import derive_rng

N_CASES = 100


# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------

def _indicator_oracle(s, tau):
    """Direct per-term evaluation of the bidirectional indicator."""
    n = s.shape[0]
    out = np.zeros(n)
    for i in range(n):
        row = sum(math.exp(s[i, j] / tau) for j in range(n))
        col = sum(math.exp(s[j, i] / tau) for j in range(n))
        out[i] = 0.5 * (math.exp(s[i, i] / tau) / row + math.exp(s[i, i] / tau) / col)
    return out


def _structure_score_oracle(s_ii, s_tt, y):
    """Direct summation of the weighted-cosine form."""
    n = s_ii.shape[0]
    out = np.zeros(n)
    for i in range(n):
        num = sum(y[j] ** 2 * s_ii[i, j] * s_tt[i, j] for j in range(n))
        d1 = math.sqrt(sum((y[j] * s_ii[i, j]) ** 2 for j in range(n)))
        d2 = math.sqrt(sum((y[j] * s_tt[i, j]) ** 2 for j in range(n)))
        out[i] = num / (d1 * d2) if d1 > 0 and d2 > 0 else 0.0
    return out


def _gauss_pdf(x, mean, var):
    return math.exp(-((x - mean) ** 2) / (2.0 * var)) / math.sqrt(2.0 * math.pi * var)


def _posterior_oracle(model, s):
    dens = [model.weights[k] * _gauss_pdf(s, model.means[k], model.variances[k])
            for k in range(2)]
    return dens[model.clean_component] / sum(dens)


def _loglik_oracle(weights, means, variances, x):
    total = 0.0
    for xi in x:
        total += math.log(sum(weights[k] * _gauss_pdf(xi, means[k], variances[k])
                              for k in range(2)))
    return total


# ---------------------------------------------------------------------------
# cross-modal indicator
# ---------------------------------------------------------------------------

def test_indicator_single_element():
    assert cross_modal_indicator(np.array([[0.37]]), tau1=0.07) == pytest.approx(1.0)


def test_indicator_uniform_matrix():
    for b in (2, 5, 9):
        out = cross_modal_indicator(np.full((b, b), 0.4), tau1=1.0)
        assert np.allclose(out, 1.0 / b, atol=1e-12)


def test_indicator_identity_matrix_analytic():
    out = cross_modal_indicator(np.eye(2), tau1=1.0)
    expected = math.e / (math.e + 1.0)  # independent direct evaluation
    assert np.allclose(out, expected, atol=1e-12)
    assert np.allclose(out, _indicator_oracle(np.eye(2), 1.0), atol=1e-12)


def test_indicator_matches_oracle():
    rng = derive_rng(0, "ind-oracle")
    for _ in range(25):
        b = int(rng.integers(2, 7))
        s = rng.uniform(-1, 1, size=(b, b))
        tau = float(rng.uniform(0.05, 2.0))
        got = cross_modal_indicator(s, tau)
        want = _indicator_oracle(s, tau)
        assert np.max(np.abs(got - want)) < 1e-10


def test_indicator_range_and_shape_errors():
    rng = derive_rng(1, "ind-range")
    for _ in range(N_CASES):
        b = int(rng.integers(1, 8))
        s = rng.uniform(-1, 1, size=(b, b)) * float(rng.choice([1.0, 100.0]))
        out = cross_modal_indicator(s, 0.07)
        assert np.all(out > 0.0) and np.all(out <= 1.0)
    with pytest.raises(ValueError):
        cross_modal_indicator(np.ones((2, 3)), 0.07)


def test_indicator_diagonal_monotonicity():
    rng = derive_rng(2, "ind-mono")
    for _ in range(N_CASES):
        b = int(rng.integers(2, 7))
        s = rng.uniform(-1, 1, size=(b, b))
        i = int(rng.integers(0, b))
        bumped = s.copy()
        bumped[i, i] += float(rng.uniform(0.01, 0.5))
        before = cross_modal_indicator(s, 0.5)[i]
        after = cross_modal_indicator(bumped, 0.5)[i]
        assert after > before


# ---------------------------------------------------------------------------
# intra-modal structure score
# ---------------------------------------------------------------------------

def test_structure_score_identical_rows_unit_weights():
    rng = derive_rng(3, "ss-ident")
    s = rng.uniform(-1, 1, size=(4, 4))
    out = intra_structure_score(s, s, np.ones(4))
    assert np.allclose(out, 1.0, atol=1e-12)


def test_structure_score_unit_weights_reduce_to_plain_cosine():
    rng = derive_rng(4, "ss-plain")
    for _ in range(N_CASES):
        b = int(rng.integers(2, 6))
        a = rng.uniform(-1, 1, size=(b, b))
        c = rng.uniform(-1, 1, size=(b, b))
        got = intra_structure_score(a, c, np.ones(b))
        for i in range(b):
            num = float(np.dot(a[i], c[i]))
            den = float(np.linalg.norm(a[i]) * np.linalg.norm(c[i]))
            assert got[i] == pytest.approx(num / den, abs=1e-12)


def test_structure_score_matches_weighted_oracle():
    rng = derive_rng(5, "ss-oracle")
    for _ in range(25):
        b = int(rng.integers(2, 6))
        a = rng.uniform(-1, 1, size=(b, b))
        c = rng.uniform(-1, 1, size=(b, b))
        y = rng.uniform(0, 1, size=b)
        got = intra_structure_score(a, c, y)
        want = _structure_score_oracle(a, c, y)
        assert np.max(np.abs(got - want)) < 1e-12


def test_structure_score_row_scale_invariance():
    rng = derive_rng(6, "ss-scale")
    for _ in range(N_CASES):
        b = int(rng.integers(2, 6))
        a = rng.uniform(-1, 1, size=(b, b))
        c = rng.uniform(-1, 1, size=(b, b))
        y = rng.uniform(0.1, 1, size=b)
        base = intra_structure_score(a, c, y)
        i = int(rng.integers(0, b))
        s = float(rng.uniform(0.1, 10.0))
        a2, c2 = a.copy(), c.copy()
        a2[i] *= s
        c2[i] *= s
        scaled = intra_structure_score(a2, c2, y)
        assert scaled[i] == pytest.approx(base[i], abs=1e-10)


def test_structure_score_degenerate_flag():
    a = np.ones((3, 3))
    scores, degenerate = intra_structure_score(a, a, np.zeros(3), return_degenerate=True)
    assert np.all(scores == 0.0) and degenerate.all()
    with pytest.raises(ValueError):
        intra_structure_score(a, np.ones((2, 2)), np.ones(3))


# ---------------------------------------------------------------------------
# GMM fit and posterior
# ---------------------------------------------------------------------------

def test_gmm_fit_recovers_two_clusters():
    scores = np.concatenate([np.full(50, 0.1), np.full(50, 0.9)])
    rng = derive_rng(7, "gmm-jitter")
    scores = scores + rng.normal(0, 0.01, size=100)
    model = gmm_fit(scores)
    lo, hi = sorted(model.means)
    assert abs(lo - 0.1) < 0.02 and abs(hi - 0.9) < 0.02
    assert model.clean_component == int(np.argmax(model.means))
    assert model.weights.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(model.variances >= 1e-4)


def test_gmm_fit_identical_scores_degenerates_to_half_posterior():
    model = gmm_fit(np.full(20, 0.42))
    assert model.means[0] == pytest.approx(0.42) and model.means[1] == pytest.approx(0.42)
    assert np.all(model.variances == 1e-4)
    assert gmm_posterior(model, 0.42) == pytest.approx(0.5, abs=1e-12)


def test_gmm_fit_loglik_nondecreasing_over_seeds():
    for seed in range(20):
        rng = derive_rng(seed, "gmm-ll")
        scores = np.concatenate([rng.normal(0.3, 0.08, 40), rng.normal(0.8, 0.05, 60)])
        model = gmm_fit(scores, keep_trace=True)
        # oracle: recompute the log-likelihood of every iteration's snapshot
        recomputed = [_loglik_oracle(w, m, v, scores) for w, m, v in model.trace]
        assert np.max(np.abs(np.array(recomputed) - np.array(model.loglik))) < 1e-8
        diffs = np.diff(model.loglik)
        assert np.all(diffs >= -1e-9)


def test_gmm_fit_requires_enough_scores():
    with pytest.raises(ValueError):
        gmm_fit(np.array([0.1, 0.9, 0.5]))


def test_gmm_posterior_midpoint_symmetry():
    model = GmmModel(weights=np.array([0.5, 0.5]), means=np.array([0.2, 0.8]),
                     variances=np.array([0.01, 0.01]), clean_component=1)
    assert gmm_posterior(model, 0.5) == pytest.approx(0.5, abs=1e-12)


def test_gmm_posterior_limit_behavior():
    model = GmmModel(weights=np.array([0.5, 0.5]), means=np.array([0.2, 0.8]),
                     variances=np.array([0.0025, 0.0025]), clean_component=1)
    s = 0.8 + 10 * 0.05
    post = gmm_posterior(model, s)
    assert post > 0.999
    assert 0.0 < post < 1.0


def test_gmm_posterior_matches_density_ratio_oracle():
    scores = np.concatenate([np.full(50, 0.1), np.full(50, 0.9)])
    rng = derive_rng(8, "gmm-oracle")
    scores = scores + rng.normal(0, 0.02, size=100)
    model = gmm_fit(scores)
    for s in (0.85, 0.05, 0.5, 0.3):
        assert gmm_posterior(model, s) == pytest.approx(_posterior_oracle(model, s), abs=1e-12)
    # vectorized path agrees with scalar path
    batch = gmm_posterior(model, np.array([0.85, 0.05]))
    assert batch[0] == pytest.approx(gmm_posterior(model, 0.85), abs=0)


def test_gmm_posterior_monotone_above_both_means_when_clean_is_broader():
    rng = derive_rng(9, "gmm-mono")
    for _ in range(N_CASES):
        mu_lo = float(rng.uniform(0.0, 0.4))
        mu_hi = float(rng.uniform(0.5, 0.9))
        var_lo = float(rng.uniform(1e-4, 0.01))
        var_hi = var_lo + float(rng.uniform(0.0, 0.02))
        w = float(rng.uniform(0.2, 0.8))
        model = GmmModel(weights=np.array([1 - w, w]), means=np.array([mu_lo, mu_hi]),
                         variances=np.array([var_lo, var_hi]), clean_component=1)
        grid = np.linspace(mu_hi, mu_hi + 0.5, 40)
        post = gmm_posterior(model, grid)
        assert np.all(np.diff(post) >= -1e-12)


# ---------------------------------------------------------------------------
# label combination and ensembling
# ---------------------------------------------------------------------------

def test_combine_labels_examples():
    out = combine_labels(np.array([1.0, 0.5]), np.array([0.3, 0.5]))
    assert np.array_equal(out, np.array([0.3, 0.5]))
    with pytest.raises(ValueError):
        combine_labels(np.ones(2), np.ones(3))


def test_combine_labels_dominance_property():
    rng = derive_rng(10, "min-prop")
    for _ in range(N_CASES):
        n = int(rng.integers(1, 30))
        a = rng.uniform(0, 1, n)
        b = rng.uniform(0, 1, n)
        out = combine_labels(a, b)
        assert np.all(out <= a) and np.all(out <= b)
        assert np.array_equal(combine_labels(a, a), a)


def test_ensemble_update_direct_substitution():
    labels = SoftLabels.ones(1)
    labels.y_cm[:] = 0.5
    labels.y_im[:] = 0.5
    out = ensemble_update(labels, np.array([1.0]), np.array([1.0]), 0.7, 0.7)
    assert out.y_cm[0] == pytest.approx(0.85, abs=1e-15)
    assert out.y_im[0] == pytest.approx(0.85, abs=1e-15)
    assert out.y[0] == pytest.approx(0.85, abs=1e-15)
    assert out.prev_cm[0] == 0.5
    assert out.epoch == 1


def test_ensemble_update_beta_one_takes_new_estimates():
    labels = SoftLabels.ones(3)
    new = np.array([0.2, 0.4, 0.6])
    out = ensemble_update(labels, new, new, 1.0, 1.0)
    assert np.array_equal(out.y_cm, new)
    assert np.array_equal(out.y_im, new)


def test_ensemble_update_is_convex_combination():
    rng = derive_rng(11, "ens-prop")
    for _ in range(N_CASES):
        n = int(rng.integers(1, 20))
        labels = SoftLabels.from_estimates(rng.uniform(0, 1, n), rng.uniform(0, 1, n))
        new_cm = rng.uniform(0, 1, n)
        new_im = rng.uniform(0, 1, n)
        b1 = float(rng.uniform(0, 1))
        b2 = float(rng.uniform(0, 1))
        out = ensemble_update(labels, new_cm, new_im, b1, b2)
        assert np.all(out.y_cm >= np.minimum(labels.y_cm, new_cm) - 1e-12)
        assert np.all(out.y_cm <= np.maximum(labels.y_cm, new_cm) + 1e-12)
        assert np.all(out.y_im >= np.minimum(labels.y_im, new_im) - 1e-12)
        assert np.all(out.y_im <= np.maximum(labels.y_im, new_im) + 1e-12)
        assert np.array_equal(out.y, np.minimum(out.y_cm, out.y_im))


def test_ensemble_update_rejects_bad_momentum():
    labels = SoftLabels.ones(2)
    with pytest.raises(ValueError):
        ensemble_update(labels, np.ones(2), np.ones(2), 1.2, 0.5)
    with pytest.raises(ValueError):
        ensemble_update(labels, np.ones(2), np.ones(2), 0.5, -0.1)
