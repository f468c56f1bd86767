import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ablpath.constraints import (
    ConstraintError,
    monotonise,
    monotonise_paths,
    project_admissible,
    reparametrise_constant_speed,
    resample_constant_speed,
    validate_path,
)
from ablpath.core import AblationPath, GridDomain, linear_path


def oracle_distance(p):
    """L-infinity distance from p to the nondecreasing sequences, via the
    midpoint of running max and reverse running min."""
    up = np.maximum.accumulate(p)
    down = np.minimum.accumulate(p[::-1])[::-1]
    q = 0.5 * (up + down)
    return np.abs(q - p).max()


sequences = arrays(np.float64, st.integers(1, 64), elements=st.floats(0, 1))
tied_sequences = arrays(np.float64, st.integers(1, 40), elements=st.sampled_from([0.0, 0.25, 0.5, 1.0]))


@settings(max_examples=300, deadline=None)
@given(st.one_of(sequences, tied_sequences))
def test_monotonise_is_l_inf_optimal(p):
    q = monotonise(p)
    assert np.all(np.diff(q) >= 0)
    assert abs(np.abs(q - p).max() - oracle_distance(p)) <= 1e-9


def test_monotonise_known_cases():
    assert np.array_equal(monotonise([0.0, 0.3, 0.7]), [0.0, 0.3, 0.7])
    q = monotonise([0.0, 1.0, 0.0])
    assert np.abs(q - [0.0, 1.0, 0.0]).max() == pytest.approx(0.5)
    assert np.all(np.diff(q) >= 0)
    assert np.allclose(monotonise([1.0, 0.0]), [0.5, 0.5])


def test_monotonise_rejects_nan():
    with pytest.raises(ValueError):
        monotonise([0.0, np.nan, 1.0])


def test_monotonise_paths_per_pixel():
    rng = np.random.default_rng(0)
    m = rng.random((12, 3, 4))
    out = monotonise_paths(m)
    assert np.all(np.diff(out, axis=0) >= 0)
    for r in range(3):
        for c in range(4):
            assert np.array_equal(out[:, r, c], monotonise(m[:, r, c]))


def random_monotone_masks(rng, K, H, W):
    steps = rng.random((K - 1, H, W)) ** 3
    m = np.concatenate([np.zeros((1, H, W)), np.cumsum(steps, axis=0)])
    m /= m[-1]
    return m


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(3, 32), st.integers(1, 16), st.integers(1, 16))
def test_reparametrise_gives_uniform_mass(seed, T, H, W):
    rng = np.random.default_rng(seed)
    m = random_monotone_masks(rng, int(rng.integers(2, 40)), H, W)
    out = resample_constant_speed(m, T)
    assert out.shape == (T, H, W)
    assert np.allclose(out.mean(axis=(1, 2)), np.linspace(0, 1, T), atol=1e-6)
    assert np.all(np.diff(out, axis=0) >= -1e-12)
    assert validate_path(AblationPath(out)) == []


def test_resample_hits_existing_masks_exactly():
    # masses 0, 0.5, 1 and T=3 -> the middle mask is taken unchanged
    m = np.array([[[0, 0]], [[1, 0]], [[1, 1]]], dtype=float)
    assert np.array_equal(resample_constant_speed(m, 3), m)


def test_resample_blends_across_a_jump():
    m = np.array([[[0, 0]], [[1, 1]]], dtype=float)
    out = resample_constant_speed(m, 5)
    assert np.allclose(out[:, 0, 0], np.linspace(0, 1, 5))


def test_resample_rejects_bad_mass_curves():
    with pytest.raises(ConstraintError):
        resample_constant_speed(np.array([[[0.0]], [[0.8]], [[0.2]], [[1.0]]]), 5)
    with pytest.raises(ConstraintError):
        resample_constant_speed(np.array([[[0.1]], [[1.0]]]), 5)


def test_reparametrise_linear_path_is_fixed():
    p = linear_path(GridDomain(3, 3), 9)
    assert np.allclose(reparametrise_constant_speed(p).masks, p.masks, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(3, 24))
def test_project_admissible_on_arbitrary_masks(seed, T):
    rng = np.random.default_rng(seed)
    raw = rng.normal(0.5, 0.6, (T, 5, 6))
    p = project_admissible(AblationPath(raw))
    assert validate_path(p, tol=1e-6) == []


def test_project_admissible_keeps_admissible_paths():
    rng = np.random.default_rng(1)
    p = AblationPath(resample_constant_speed(random_monotone_masks(rng, 30, 4, 4), 10))
    assert np.allclose(project_admissible(p).masks, p.masks, atol=1e-12)


def test_validate_path_reports_each_kind():
    T = 5
    m = np.array(linear_path(GridDomain(2, 2), T).masks)
    m[0, 0, 0] = 0.2
    m[3, 1, 1] = 0.1
    kinds = {v.kind for v in validate_path(AblationPath(m))}
    assert kinds == {"boundary", "monotonicity", "constant_speed"}
    mono = [v for v in validate_path(AblationPath(m)) if v.kind == "monotonicity"]
    # step index: the drop is between samples 2 and 3
    assert mono[0].k == 2 and mono[0].pixel == (1, 1)
    assert "monotonicity" in str(mono[0])
