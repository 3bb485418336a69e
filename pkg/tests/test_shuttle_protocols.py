import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from iontide import shuttle_protocols as sp
from iontide.field_model import ELEMENTARY_CHARGE

from conftest import CD_MASS

profiles = st.one_of(
    st.builds(sp.ShuttleProfile, st.just("Linear"), st.floats(1e-6, 1e-3), st.floats(1e-6, 1e-4)),
    st.builds(sp.ShuttleProfile, st.just("Sinusoidal"), st.floats(1e-6, 1e-3), st.floats(1e-6, 1e-4)),
    st.builds(sp.ShuttleProfile, st.just("Tanh"), st.floats(1e-6, 1e-3), st.floats(1e-6, 1e-4),
              st.floats(1.0, 8.0)),
)


@settings(max_examples=40, deadline=None)
@given(profiles)
def test_profile_endpoints_and_velocity_integral(p):
    assert p.position(0.0) == pytest.approx(0.0, abs=1e-12 * p.L)
    assert p.position(p.T) == p.L
    assert p.position(-1.0) == 0.0 and p.position(2 * p.T) == p.L
    dist, _ = quad(p.velocity, 0, p.T, epsabs=0, epsrel=1e-11, limit=200)
    assert dist == pytest.approx(p.L, rel=1e-8)


@pytest.mark.parametrize("p", [sp.ShuttleProfile("Sinusoidal", 1e-4, 1e-5),
                               sp.ShuttleProfile("Tanh", 1e-4, 1e-5, 3.0)])
def test_acceleration_is_derivative_of_velocity(p):
    t = np.linspace(0.1, 0.9, 7) * p.T
    h = 1e-6 * p.T
    num = (p.velocity(t + h) - p.velocity(t - h)) / (2 * h)
    assert np.allclose(p.regular_acceleration(t), num, rtol=1e-6)


def test_kicks_match_start_velocity():
    p = sp.ShuttleProfile("Tanh", 4e-4, 85e-6, 4.5)
    assert p.velocity(0.0) == pytest.approx(p.kick_amplitude * p.L / p.T, rel=1e-12)
    (t0, dv0), (t1, dv1) = p.kicks()
    assert (t0, t1) == (0.0, p.T) and dv0 == -dv1
    assert sp.ShuttleProfile("Sinusoidal", 1e-4, 1e-5).kicks() == []
    assert p.regular_acceleration(0.0) == pytest.approx(-p.accel_amplitude * p.L / p.T ** 2 * -1)


def test_invalid_profiles():
    with pytest.raises(ValueError):
        sp.ShuttleProfile("Tanh", 1e-4, 1e-5, 0.5)
    with pytest.raises(ValueError):
        sp.ShuttleProfile("Linear", -1e-4, 1e-5)
    with pytest.raises(ValueError):
        sp.ShuttleProfile("Cubic", 1e-4, 1e-5)


def test_config_roundtrip():
    p = sp.ShuttleProfile("Tanh", 4e-4, 85e-6, 4.5)
    back = sp.ShuttleProfile.from_config(p.to_config())
    assert back.kind is p.kind and back.N == p.N
    assert back.L == pytest.approx(p.L, rel=1e-15) and back.T == pytest.approx(p.T, rel=1e-15)
    fv = sp.FreqVariation(0.5, 230, 2 * math.pi * 1.173e6, 1e-4)
    assert sp.FreqVariation.from_config(fv.to_config()).M == 230


def test_frequency_variation_shape():
    fv = sp.FreqVariation(0.5, 3, 2.0, 1.0)
    assert fv.omega_squared(0.5) == pytest.approx(4.0 * 0.5)
    # the window ends sit at half-integer modulation phase
    assert fv.omega_squared(0.0) == pytest.approx(4.0, abs=1e-12)
    assert fv.omega_squared(1.0) == pytest.approx(4.0, abs=1e-12)
    with pytest.raises(ValueError):
        sp.FreqVariation(1.2, 3, 2.0, 1.0)


def test_adiabaticity_screen():
    w0 = 2 * math.pi * 1.173e6
    fast = sp.adiabaticity_check(sp.ShuttleProfile("Linear", 1e-4, 0.5e-6), w0)
    slow = sp.adiabaticity_check(sp.ShuttleProfile("Sinusoidal", 1e-4, 50e-6), w0)
    assert not fast.kick_ok and fast.accel_ok
    assert slow.kick_ok and slow.accel_ok and math.isinf(slow.kick_margin)
    assert sp.adiabaticity_check(sp.ShuttleProfile("Tanh", 1e-4, 5e-6, 4.5), w0).tanh_vs_sin
    # (N + 4N^2) exp(-2N) peaks near 0.68, so every admissible N qualifies
    assert sp.adiabaticity_check(sp.ShuttleProfile("Tanh", 1e-4, 5e-6, 1.0), w0).tanh_vs_sin


def test_voltage_from_trajectory():
    p = sp.ShuttleProfile("Sinusoidal", 1e-4, 1e-5)
    w = 2 * math.pi * 1e6
    wave = sp.voltage_from_trajectory(p, lambda x: 0.2, 1e-4, w, CD_MASS, ELEMENTARY_CHARGE)
    t = np.linspace(0, p.T, 5)
    expect = p.position(t) * CD_MASS * w ** 2 * 1e-4 / (ELEMENTARY_CHARGE * 0.2)
    assert np.allclose(wave(t), expect, rtol=1e-14)
    with pytest.raises(sp.SynthesisError):
        sp.voltage_from_trajectory(p, lambda x: x - 5e-5, 1e-4, w, CD_MASS, ELEMENTARY_CHARGE)


def test_short_design_hits_frequency(segmented_trap):
    target = 2 * math.pi * 1.173e6
    sched = sp.design_linear_protocol(segmented_trap, 300e-6, 310e-6, 4, target)
    assert len(sched.times) == 5
    for t, x in zip(sched.times, np.linspace(300e-6, 310e-6, 5)):
        v = sched.at(t)
        xm = sp.axial_minimum(segmented_trap, v, x - 20e-6, x + 20e-6)
        assert abs(xm - x) < 1e-6
        w = sp.axial_frequency(segmented_trap, v, xm, 1e-7)
        assert abs(w / target - 1) < 0.005


def test_design_rejects_out_of_span(segmented_trap):
    with pytest.raises(sp.DesignError):
        sp.design_linear_protocol(segmented_trap, 0.0, 100e-6, 4, 2 * math.pi * 1e6)
