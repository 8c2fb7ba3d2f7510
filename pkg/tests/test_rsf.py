import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from featurestep.errors import FeatureAbsentError, ParameterError
from featurestep.geometry import Polyline, rigid_transform
from featurestep.rsf import Season, day_of_year, linearize, rsf_exact, rsf_seasonal
from featurestep.scenarios import circle_polyline

LINE = [Polyline([(-1000.0, 0.0), (1000.0, 0.0)])]


def test_weight_on_feature_is_one():
    assert rsf_exact((12.0, 0.0), LINE, 100.0) == 1.0


def test_weight_at_one_range():
    assert rsf_exact((0.0, 93.0), LINE, 8649.0) == pytest.approx(0.606531, abs=5e-7)
    assert rsf_exact((0.0, 93.0), LINE, 8649.0) == pytest.approx(math.exp(-0.5), rel=1e-14)


def test_huge_range_is_flat():
    assert abs(rsf_exact((0.0, 100.0), LINE, 1e12) - 1.0) < 1e-8


def test_batch_and_errors():
    w = rsf_exact(np.array([[0.0, 0.0], [0.0, 10.0]]), LINE, 100.0)
    assert w.shape == (2,) and w[0] == 1.0
    with pytest.raises(ParameterError):
        rsf_exact((0, 0), LINE, 0.0)
    with pytest.raises(FeatureAbsentError):
        rsf_exact((0, 0), [], 1.0)


def test_season_bounds():
    s = Season(69.0, 337.0)
    assert not s.contains(69) and not s.contains(337)
    assert s.contains(70) and s.contains(336) and not s.contains(10)
    assert s.contains(365 + 100) and day_of_year(730 + 3) == 3
    with pytest.raises(ParameterError):
        Season(200.0, 100.0)
    with pytest.raises(ParameterError):
        Season(-1.0, 100.0)
    with pytest.raises(ParameterError):
        Season(10.0, 365.0)


def test_seasonal_weight():
    s = Season(100.0, 200.0)
    p = (0.0, 50.0)
    assert rsf_seasonal(p, LINE, 900.0, 150, s) == rsf_exact(p, LINE, 900.0)
    assert rsf_seasonal(p, LINE, 900.0, 250, s) == 1.0
    # strict inequality at the start of the season
    assert rsf_seasonal(p, LINE, 900.0, 100, s) == 1.0
    # the feature is not needed out of season
    assert rsf_seasonal(p, None, 900.0, 20, s) == 1.0
    assert np.all(rsf_seasonal(np.zeros((3, 2)), None, 900.0, 20, s) == 1.0)


def test_linearize_outside_season_is_absent():
    assert linearize((0, 5), LINE, 100.0, 10, Season(100, 200)) is None


def test_linearize_exact_for_straight_feature(rng):
    s = Season(0.0, 364.0)
    line = [Polyline([(-5000.0, -3000.0), (5000.0, 4000.0)])]
    f = linearize((30.0, -50.0), line, 400.0, 100, s)
    pts = rng.uniform(-300, 300, (500, 2))
    assert np.allclose(f.value(pts), rsf_exact(pts, line, 400.0), rtol=0, atol=1e-12)


def test_linearize_circle_within_two_percent():
    s = Season(0.0, 364.0)
    sigma = 16.5
    tau2 = 93.0 ** 2
    circle = [circle_polyline(500.0, 720)]
    p_prev = np.array([550.0, 0.0])
    f = linearize(p_prev, circle, tau2, 100, s)
    ax = np.linspace(-3 * sigma, 3 * sigma, 201)
    gx, gy = np.meshgrid(ax, ax)
    keep = gx ** 2 + gy ** 2 <= (3 * sigma) ** 2
    pts = p_prev + np.column_stack([gx[keep], gy[keep]])
    exact = rsf_exact(pts, circle, tau2)
    assert np.max(np.abs(f.value(pts) / exact - 1.0)) < 0.02


def test_linearization_error_shrinks_with_radius():
    s = Season(0.0, 364.0)
    tau2 = 93.0 ** 2
    r = 50.0
    errs = []
    for radius in (100.0, 300.0, 1000.0):
        circle = [circle_polyline(radius, 720)]
        p_prev = np.array([radius + 50.0, 0.0])
        f = linearize(p_prev, circle, tau2, 100, s)
        ang = np.linspace(0, 2 * math.pi, 73)
        rad = np.linspace(0, r, 11)
        pts = p_prev + (rad[:, None, None] * np.stack([np.cos(ang), np.sin(ang)], -1)).reshape(-1, 2)
        errs.append(np.max(np.abs(f.value(pts) / rsf_exact(pts, circle, tau2) - 1.0)))
    assert errs[0] > errs[1] > errs[2]


coord = st.floats(-500, 500)


@settings(max_examples=60, deadline=None)
@given(st.tuples(coord, coord), st.floats(1000.0, 1e5), st.floats(1.0, 400.0))
def test_weight_bounded_and_monotone(p, tau2, extra):
    w = rsf_exact(p, LINE, tau2)
    assert 0.0 < w <= 1.0
    farther = (p[0], math.copysign(abs(p[1]) + extra, p[1] if p[1] else 1.0))
    assert rsf_exact(farther, LINE, tau2) <= w


@settings(max_examples=60, deadline=None)
@given(st.tuples(coord, coord), st.floats(-7, 7), st.tuples(coord, coord), st.floats(100, 1e5))
def test_weight_rigid_invariance(p, theta, shift, tau2):
    feat = [circle_polyline(200.0, 90), Polyline([(-300, 250), (300, 260), (350, 400)])]
    w0 = rsf_exact(p, feat, tau2)
    moved = [pl.transformed(theta, shift) for pl in feat]
    w1 = rsf_exact(rigid_transform(np.asarray(p, float), theta, shift), moved, tau2)
    assert w1 == pytest.approx(w0, abs=1e-12)
