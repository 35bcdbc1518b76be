import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cacc_rl.cf_models import (
    CarFollowingController,
    IdmParams,
    KraussParams,
    base_accel,
    base_accels,
    idm_accel,
    idm_desired_gap,
    idm_equilibrium_gap,
    krauss_accel,
    krauss_safe_speed,
)
from cacc_rl.errors import DomainError, NumericError, UsageError
from cacc_rl.sim import Observation

P = IdmParams()


def test_idm_at_standstill_with_minimum_gap():
    assert idm_accel(P, 0.0, 0.0, 2.0) == pytest.approx(0.0, abs=1e-15)


def test_idm_free_flow_limit():
    a = idm_accel(P, P.v0, 0.0, 1e9)
    s_star = idm_desired_gap(P, P.v0, 0.0)
    assert a < 0
    assert a == pytest.approx(-3.0 * (s_star / 1e9) ** 2, rel=1e-6)


def test_idm_reference_value():
    # s* = 2 + 10*1.5 = 17 exactly, so only the free-road term remains
    assert idm_desired_gap(P, 10.0, 0.0) == pytest.approx(17.0)
    expected = 3.0 * (1.0 - (10.0 / (120.0 / 3.6)) ** 4 - 1.0)
    assert idm_accel(P, 10.0, 0.0, 17.0) == pytest.approx(expected, abs=1e-12)
    assert idm_accel(P, 10.0, 0.0, 17.0) == pytest.approx(-0.0243, abs=1e-4)


def test_desired_gap_floor():
    # strongly opening gap would make s* negative without the floor
    assert idm_desired_gap(P, 10.0, -30.0) == P.s0


@pytest.mark.parametrize("v", [0.5, 5.0, 10.0, 15.0, 20.0, 30.0])
def test_idm_equilibrium(v):
    s = idm_equilibrium_gap(P, v)
    assert s == pytest.approx((P.s0 + v * P.T) / math.sqrt(1 - (v / P.v0) ** P.delta))
    assert abs(idm_accel(P, v, 0.0, s)) < 1e-9


@settings(max_examples=200, deadline=None)
@given(v=st.floats(0.0, 33.0), s=st.floats(1.0, 200.0), dv1=st.floats(-10, 10), dv2=st.floats(-10, 10))
def test_idm_decreasing_in_closing_rate(v, s, dv1, dv2):
    lo, hi = sorted((dv1, dv2))
    if hi - lo < 1e-6:
        return
    # strict only while s* is above its floor for both inputs
    a_lo, a_hi = idm_accel(P, v, lo, s), idm_accel(P, v, hi, s)
    assert a_hi <= a_lo
    if v > 0.1 and idm_desired_gap(P, v, lo) > P.s0:
        assert a_hi < a_lo


@settings(max_examples=200, deadline=None)
@given(v=st.floats(0.0, 33.0), dv=st.floats(-10, 10), s1=st.floats(0.5, 200.0), s2=st.floats(0.5, 200.0))
def test_idm_increasing_in_gap(v, dv, s1, s2):
    lo, hi = sorted((s1, s2))
    if hi - lo < 1e-6:
        return
    assert idm_accel(P, v, dv, hi) > idm_accel(P, v, dv, lo)


def test_idm_rejects_nonpositive_gap_and_nan():
    with pytest.raises(DomainError):
        idm_accel(P, 10.0, 0.0, 0.0)
    with pytest.raises(NumericError):
        idm_accel(P, float("nan"), 0.0, 10.0)


K = KraussParams()


def test_krauss_identity_case():
    assert krauss_safe_speed(K, 10.0, 10.0, 10.0 * K.t_r) == 10.0
    a = krauss_accel(K, 10.0, 10.0, 10.0, 0.1)
    # v_des = min(10, 10.3, v0) = 10 -> zero acceleration
    assert a == 0.0


def test_krauss_emergency_is_clamped():
    assert krauss_safe_speed(K, 20.0, 0.0, 1.0) < 20.0
    assert krauss_accel(K, 20.0, 0.0, 1.0, 0.1) == -K.b


def test_krauss_free_acceleration():
    a = krauss_accel(K, 10.0, 10.0, 1e6, 0.1)
    assert a == pytest.approx(K.a_max)
    a = krauss_accel(K, K.v0 - 0.1, K.v0, 1e6, 0.1)
    assert a == pytest.approx(1.0)


@settings(max_examples=100, deadline=None)
@given(v=st.floats(0.1, 30.0))
def test_krauss_identity_property(v):
    assert krauss_safe_speed(K, v, v, v * K.t_r) == v


def test_dispatch_identities():
    obs = Observation(12.0, 0.3, 25.0, -1.5)
    assert base_accel("idm", obs, 0.1) == idm_accel(P, 12.0, 1.5, 25.0)
    assert base_accel("krauss", obs, 0.1) == krauss_accel(K, 12.0, 10.5, 25.0, 0.1)
    arr = np.array([obs, obs])
    assert np.array_equal(base_accels("idm", arr, 0.1), [idm_accel(P, 12.0, 1.5, 25.0)] * 2)


@pytest.mark.parametrize("model", ["idm", "krauss"])
def test_dispatch_rejects_nonpositive_gap(model):
    with pytest.raises(DomainError):
        base_accel(model, Observation(10.0, 0.0, 0.0, 0.0), 0.1)


def test_unknown_model():
    with pytest.raises(UsageError):
        base_accel("gipps", Observation(10.0, 0.0, 5.0, 0.0), 0.1)
    with pytest.raises(UsageError):
        CarFollowingController("gipps")


def test_invalid_params():
    with pytest.raises(UsageError):
        IdmParams(T=0.0)
    with pytest.raises(UsageError):
        KraussParams(b=-1.0)
