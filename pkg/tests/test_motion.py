import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import chi2

from vistrack.masks import BoundingBox
from vistrack.motion import (
    CHI2_4DOF_95,
    KalmanState,
    NoiseModel,
    box_to_measurement,
    gate,
    kf_init,
    kf_predict,
    kf_update,
    mahalanobis_sq,
    mahalanobis_sq_many,
    measurement_to_box,
)


def box_at(cx, cy, w=10.0, h=10.0):
    return BoundingBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def assert_sym_psd(cov):
    assert np.abs(cov - cov.T).max() <= 1e-9
    assert (np.diag(cov) >= 0).all()
    assert np.linalg.eigvalsh(cov).min() >= -1e-9 * max(1.0, np.abs(cov).max())


def test_init_examples():
    s = kf_init(BoundingBox(0, 0, 10, 10))
    assert s.mean.tolist() == [5, 5, 100, 1, 0, 0, 0, 0]
    s = kf_init(BoundingBox(2, 2, 6, 10))
    assert s.mean[:4].tolist() == [4, 6, 32, 0.5]
    assert_sym_psd(s.covariance)


def test_zero_area_box_errors():
    with pytest.raises(ValueError):
        kf_init(BoundingBox(1, 1, 1, 5))


def test_measurement_round_trip():
    box = BoundingBox(2, 3, 7, 11)
    back = measurement_to_box(box_to_measurement(box))
    assert np.allclose([back.x_min, back.y_min, back.x_max, back.y_max], [2, 3, 7, 11])


def test_zero_velocity_predict_keeps_position():
    s = kf_init(box_at(20, 30))
    p = kf_predict(s)
    assert (p.mean[:4] == s.mean[:4]).all()


def test_non_finite_state_errors():
    s = kf_init(box_at(20, 30))
    bad = KalmanState(np.full(8, np.nan), s.covariance)
    with pytest.raises(ValueError):
        kf_predict(bad)


def test_repeated_update_converges_monotonically():
    s = kf_init(box_at(0, 0))
    target = box_at(40, -10, 14, 8)
    z = box_to_measurement(target)
    dist = start = np.linalg.norm(s.mean[:4] - z)
    for _ in range(50):
        s = kf_update(s, target)
        d = np.linalg.norm(s.mean[:4] - z)
        assert d <= dist + 1e-12
        dist = d
    # without predict steps the gain decays like 1/n, so convergence is slow but steady
    assert dist < 0.01 * start


def test_constant_velocity_prediction_error():
    s = kf_init(box_at(10, 50))
    for t in range(1, 11):
        s = kf_predict(s)
        s = kf_update(s, box_at(10 + 5 * t, 50))
    pred = kf_predict(s)
    assert abs(pred.mean[0] - (10 + 5 * 11)) < 1e-3


def test_covariance_stays_symmetric_long_run(rng):
    s = kf_init(box_at(100, 100, 20, 40))
    for t in range(2000):
        s = kf_predict(s)
        if t % 3:
            jitter = rng.normal(0, 1, 2)
            s = kf_update(s, box_at(100 + 0.5 * t % 300 + jitter[0], 100 + jitter[1], 20, 40))
        assert np.abs(s.covariance - s.covariance.T).max() <= 1e-9
    assert_sym_psd(s.covariance)


@given(st.floats(-50, 50), st.floats(-50, 50), st.integers(0, 5))
def test_update_contracts_toward_measurement(dx, dy, n_predict):
    s = kf_init(box_at(100, 100))
    for _ in range(n_predict):
        s = kf_predict(s)
    z = box_to_measurement(box_at(100 + dx, 100 + dy))
    post = kf_update(s, box_at(100 + dx, 100 + dy))
    assert abs(post.mean[0] - z[0]) <= abs(s.mean[0] - z[0]) + 1e-12
    assert abs(post.mean[1] - z[1]) <= abs(s.mean[1] - z[1]) + 1e-12


def test_default_threshold_is_chi2_quantile():
    assert CHI2_4DOF_95 == pytest.approx(chi2.ppf(0.95, 4), abs=1e-4)


def test_gate_examples():
    s = kf_predict(kf_init(box_at(50, 50)))
    assert mahalanobis_sq(s, box_at(50, 50)) == pytest.approx(0.0, abs=1e-20)
    assert gate(s, box_at(50, 50))
    assert not gate(s, box_at(1050, 50))


@given(st.floats(0, 30), st.floats(0.1, 50), st.floats(0, 50))
def test_gate_monotone_in_threshold(dx, theta, extra):
    s = kf_predict(kf_init(box_at(50, 50)))
    if gate(s, box_at(50 + dx, 50), theta):
        assert gate(s, box_at(50 + dx, 50), theta + extra)


def test_many_matches_single(rng):
    s = kf_predict(kf_init(box_at(50, 50, 12, 20)))
    boxes = [box_at(*rng.uniform(30, 70, 2), *rng.uniform(5, 25, 2)) for _ in range(10)]
    many = mahalanobis_sq_many(s, boxes)
    for b, d in zip(boxes, many):
        assert d == pytest.approx(mahalanobis_sq(s, b), rel=1e-10)


def test_singular_innovation_fails_gate(caplog):
    noise = NoiseModel(pos_weight=0.0, vel_weight=0.0)
    s = kf_init(box_at(50, 50), noise)
    with caplog.at_level(logging.WARNING):
        assert not gate(s, box_at(50, 50), noise=noise)
    assert "degenerate" in caplog.text
