import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ablpath.classifier import CallableClassifier, ClassifierModel, LinearSoftmaxClassifier, threshold_on_mean_classifier
from ablpath.constraints import project_masks, validate_path
from ablpath.core import AblationPath, GridDomain, Image, ParameterError, linear_path
from ablpath.reduction import saliency_to_path
from ablpath.scores import (
    DESCEND,
    integrated_gradients,
    linear_path_ig,
    path_differential,
    score_contrastive,
    score_dissipate,
    score_objective,
    score_retain,
    score_straddle,
    smooth_gradient,
    trapezoid,
    trapezoid_weights,
)

SHAPE = (4, 4, 1)
ONES, ZEROS = np.ones(SHAPE), np.zeros(SHAPE)


def constant_model(value):
    return CallableClassifier(lambda x: np.tile([value, 1 - value], (len(x), 1)), SHAPE, 2)


def affine_model():
    # mean intensity 1 at the input and 0 at the baseline: F = mean(x), exactly affine along the segment
    def fn(x):
        m = x.reshape(len(x), -1).mean(axis=1)
        return np.stack([m, 1 - m], axis=1)

    return CallableClassifier(fn, SHAPE, 2)


class AffineProbability(ClassifierModel):
    """F_0(x) = 0.5 + <w, x>: constant input gradient."""

    def __init__(self, w):
        self.w = w
        self.input_shape = w.shape
        self.n_classes = 2

    def predict_proba(self, x):
        x = self._batch(x)
        f = 0.5 + x.reshape(len(x), -1) @ self.w.ravel()
        return np.stack([f, 1 - f], axis=1)

    def input_gradient(self, x, k):
        x = self._batch(x)
        return np.broadcast_to(self.w if k == 0 else -self.w, x.shape).copy()


def random_admissible(seed, T=20, H=4, W=4):
    rng = np.random.default_rng(seed)
    return AblationPath(project_masks(rng.random((T, H, W)) + np.linspace(0, 1, T)[:, None, None]))


def test_trapezoid_rule():
    assert np.isclose(trapezoid_weights(5).sum(), 1.0)
    t = np.linspace(0, 1, 7)
    assert trapezoid(3 * t + 2) == pytest.approx(3.5, abs=1e-14)


def test_constant_classifier_scores():
    lin = linear_path(GridDomain(4, 4), 9)
    assert score_retain(lin, constant_model(1.0), ONES, ZEROS, 0).score == pytest.approx(1.0)
    assert score_dissipate(lin, constant_model(1.0), ONES, ZEROS, 0).score == pytest.approx(0.0)
    assert score_dissipate(lin, constant_model(0.0), ONES, ZEROS, 0).score == pytest.approx(1.0)
    assert score_contrastive(lin, constant_model(1.0), ONES, ZEROS, 0).score == pytest.approx(1.0)


def test_affine_classifier_scores():
    lin = linear_path(GridDomain(4, 4), 20)
    m = affine_model()
    assert abs(score_retain(lin, m, ONES, ZEROS, 0).score - 0.5) <= 1e-12
    ctr = score_contrastive(lin, m, ONES, ZEROS, 0)
    assert abs(ctr.score - 1.0) <= 1e-12
    assert abs(ctr.sub_reports["dissipate_complement"].score - 0.5) <= 1e-12
    strad = score_straddle(lin, lin, m, ONES, ZEROS, 0)
    assert abs(strad.score - 1.0) <= 1e-12
    assert strad.diagnostics["l1_distance"] == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_score_identities_on_random_paths(seed):
    rng = np.random.default_rng(seed)
    model = LinearSoftmaxClassifier(rng.standard_normal((16, 2)), rng.standard_normal(2), SHAPE)
    xi, beta = rng.random(SHAPE), rng.random(SHAPE)
    p = random_admissible(seed)
    ret = score_retain(p, model, xi, beta, 0)
    diss = score_dissipate(p, model, xi, beta, 0)
    assert 0 <= ret.score <= 1
    assert abs(ret.score + diss.score - 1) <= 1e-12
    assert abs(ret.score - trapezoid(ret.per_step_F)) <= 1e-12
    ctr = score_contrastive(p, model, xi, beta, 0).score
    comp = score_retain(1 - p.masks, model, xi, beta, 0).score
    assert abs(ctr - (ret.score + 1 - comp)) <= 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_threshold_classifier_scores_crossing_time(seed):
    # target holds while the mask mass stays <= 0.6
    model = threshold_on_mean_classifier(SHAPE, 0.4)
    T = 20
    p = random_admissible(seed, T)
    assert validate_path(p) == []
    assert abs(score_retain(p, model, ONES, ZEROS, 0).score - 0.6) <= 1 / (T - 1)


def test_perfect_straddle():
    # class 0 iff pixel (0,0) is still mostly the input
    def fn(x):
        keep = x[:, 0, 0, 0] > 0.5
        return np.stack([keep, ~keep], axis=1).astype(float)

    model = CallableClassifier(fn, SHAPE, 2)
    T = 17
    order_ret = np.arange(16)[::-1].reshape(4, 4)  # (0,0) ablated last
    order_diss = np.arange(16).reshape(4, 4)  # (0,0) ablated first
    ret = saliency_to_path(order_ret.astype(float), T)
    diss = saliency_to_path(order_diss.astype(float), T)
    s = score_straddle(ret, diss, model, ONES, ZEROS, 0)
    assert s.score == pytest.approx(2 - 1 / (T - 1), abs=1e-12)


def test_objective_dispatch():
    lin = linear_path(GridDomain(4, 4), 5)
    m = affine_model()
    assert score_objective("retain", lin, m, ONES, ZEROS, 0).score == score_retain(lin, m, ONES, ZEROS, 0).score
    assert score_objective("straddle", (lin, lin), m, ONES, ZEROS, 0).objective == "straddle"
    with pytest.raises(ParameterError):
        score_objective("nope", lin, m, ONES, ZEROS, 0)


def test_report_json_roundtrip():
    lin = linear_path(GridDomain(4, 4), 5)
    rep = score_straddle(lin, lin, affine_model(), ONES, ZEROS, 0)
    d = json.loads(rep.to_json())
    assert d["objective"] == "straddle" and len(d["per_step_F"]) == 5
    assert set(d["sub_reports"]) == {"retain", "dissipate"}


def test_differential_matches_finite_differences(random_mlp):
    rng = np.random.default_rng(7)
    xi, beta = rng.random(random_mlp.input_shape), rng.random(random_mlp.input_shape)
    T = 9
    masks = np.array(linear_path(GridDomain(6, 5), T).masks)
    g = path_differential(masks, random_mlp, xi, beta, 1)
    dt = 1 / (T - 1)
    eps = 1e-4
    for k, r, c in [(1, 0, 0), (4, 3, 2), (7, 5, 4)]:
        up, dn = masks.copy(), masks.copy()
        up[k, r, c] += eps
        dn[k, r, c] -= eps
        fd = (score_retain(up, random_mlp, xi, beta, 1).score - score_retain(dn, random_mlp, xi, beta, 1).score) / (2 * eps)
        assert abs(dt * g[k, r, c] - fd) <= 1e-3 * abs(fd)


def test_differential_sign_and_pins(random_mlp):
    rng = np.random.default_rng(8)
    xi, beta = rng.random(random_mlp.input_shape), rng.random(random_mlp.input_shape)
    lin = linear_path(GridDomain(6, 5), 6)
    up = path_differential(lin, random_mlp, xi, beta, 0)
    assert np.all(up[0] == 0) and np.all(up[-1] == 0)
    assert np.array_equal(path_differential(lin, random_mlp, xi, beta, 0, sign=DESCEND), -up)
    free = path_differential(lin, random_mlp, xi, beta, 0, pin_endpoints=False)
    assert np.any(free[0] != 0)
    with pytest.raises(ParameterError):
        path_differential(lin, random_mlp, xi, beta, 0, sign="up")


def test_differential_vanishes_when_input_is_baseline(random_mlp):
    x = np.random.default_rng(9).random(random_mlp.input_shape)
    g = path_differential(linear_path(GridDomain(6, 5), 5), random_mlp, x, x, 0)
    assert np.all(g == 0)


def test_differential_constant_in_time_for_linear_probability():
    rng = np.random.default_rng(10)
    w = rng.standard_normal(SHAPE) * 0.01
    model = AffineProbability(w)
    xi, beta = rng.random(SHAPE), rng.random(SHAPE)
    g = path_differential(random_admissible(1, 8), model, xi, beta, 0, pin_endpoints=False)
    assert np.allclose(g, g[0], atol=1e-15)
    assert np.allclose(g[0], (w * (beta - xi))[:, :, 0])


def test_smooth_gradient():
    g = np.random.default_rng(11).random((3, 5, 5))
    assert np.array_equal(smooth_gradient(g, 0), g)
    assert np.allclose(smooth_gradient(np.full((2, 5, 5), 0.7), 2.0), 0.7)
    with pytest.raises(ParameterError):
        smooth_gradient(g, -1)


def test_ig_closed_form_for_affine_logit():
    rng = np.random.default_rng(12)
    W = rng.standard_normal((16, 2)) * 0.5
    b = rng.standard_normal(2)
    model = LinearSoftmaxClassifier(W, b, SHAPE)
    xi, beta = rng.random(SHAPE), rng.random(SHAPE)
    dw = (W[:, 0] - W[:, 1]).reshape(SHAPE)
    z0 = float(xi.ravel() @ (W[:, 0] - W[:, 1]) + b[0] - b[1])
    dz = float((beta - xi).ravel() @ (W[:, 0] - W[:, 1]))
    sig = lambda z: 1 / (1 + math.exp(-z))
    # discrete trapezoid average of the squash derivative
    steps = 33
    ts = [k / (steps - 1) for k in range(steps)]
    vals = [sig(z0 + t * dz) * (1 - sig(z0 + t * dz)) for t in ts]
    avg = (sum(vals) - 0.5 * (vals[0] + vals[-1])) / (steps - 1)
    oracle = (dw * (beta - xi))[:, :, 0] * avg
    assert np.allclose(integrated_gradients(model, xi, beta, 0, steps).values, oracle, atol=1e-12)
    # continuous average (sig(z1) - sig(z0)) / dz, reached with fine steps
    cont = (dw * (beta - xi))[:, :, 0] * (sig(z0 + dz) - sig(z0)) / dz
    assert np.allclose(integrated_gradients(model, xi, beta, 0, 4001).values, cont, atol=1e-6)


def test_ig_two_routes_agree(random_mlp):
    rng = np.random.default_rng(13)
    xi, beta = rng.random(random_mlp.input_shape), rng.random(random_mlp.input_shape)
    direct = integrated_gradients(random_mlp, xi, beta, 2, steps=20).values
    via_path = linear_path_ig(random_mlp, xi, beta, 2, T=20)
    assert np.abs(direct - via_path).max() <= 1e-12


def test_ig_completeness(random_mlp):
    rng = np.random.default_rng(14)
    xi, beta = rng.random(random_mlp.input_shape), rng.random(random_mlp.input_shape)
    ig = integrated_gradients(random_mlp, xi, beta, 0, steps=256)
    F = random_mlp.predict_proba(np.stack([xi, beta]))[:, 0]
    assert abs(ig.values.sum() - (F[1] - F[0])) <= 1e-2
    assert "F(baseline) - F(input)" in ig.orientation


def test_ig_zero_when_input_is_baseline(random_mlp):
    x = np.random.default_rng(15).random(random_mlp.input_shape)
    assert np.all(integrated_gradients(random_mlp, x, x, 0, 8).values == 0)
    with pytest.raises(ParameterError):
        integrated_gradients(random_mlp, x, x, 0, 1)


def test_scores_accept_image_objects(random_mlp):
    rng = np.random.default_rng(16)
    xi, beta = Image(rng.random(random_mlp.input_shape)), Image(rng.random(random_mlp.input_shape))
    lin = linear_path(xi.domain, 5)
    assert score_retain(lin, random_mlp, xi, beta, 0).score == score_retain(lin, random_mlp, xi.values, beta.values, 0).score
