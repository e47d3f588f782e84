import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nvgrating import TWO_PI
from nvgrating.bloch import ControlPulse, GridError, excitation_profile, grid_from_hz
from nvgrating.grape import (BandwidthError, GrapeConfig, GratingSpec, TargetError, TargetProfile,
                             clip_amplitude, gradient, infidelity, initial_guess,
                             make_grating_target, member_infidelities, optimize,
                             value_and_gradient)

from conftest import random_pulse

OMEGA = TWO_PI * 5e6


def local_minima(y):
    return np.nonzero((y[1:-1] < y[:-2]) & (y[1:-1] <= y[2:]))[0] + 1


def fd_gradient(pulse, target, config, rel=1e-4):
    h = rel * pulse.omega_max
    out = np.zeros_like(pulse.steps)
    for k in range(pulse.n_steps):
        for c in range(3):
            up, dn = pulse.steps.copy(), pulse.steps.copy()
            up[k, c] += h
            dn[k, c] -= h
            # omega_max is not enforced here; the gradient is of the raw map
            fp = value_and_gradient(ControlPulse(pulse.dt, up, 2 * pulse.omega_max),
                                    target, config)[0]
            fm = value_and_gradient(ControlPulse(pulse.dt, dn, 2 * pulse.omega_max),
                                    target, config)[0]
            out[k, c] = (fp - fm) / (2 * h)
    return out


def single_dip_target(n=101, half_hz=10e6, width_hz=2e6):
    return make_grating_target(GratingSpec(1, 1e6, width_hz), grid_from_hz(-half_hz, half_hz, n))


def test_single_dip_target():
    t = single_dip_target()
    assert t.target_mz[50] == pytest.approx(-1.0)
    assert t.target_mz[0] == pytest.approx(1.0, abs=1e-9)


def test_missing_dip_target():
    spec = GratingSpec(5, 3e6, 1e6, missing_dips=frozenset({2}))
    t = make_grating_target(spec, grid_from_hz(-9e6, 9e6, 721))
    mins = local_minima(t.target_mz)
    mins = mins[t.target_mz[mins] < 0]
    assert len(mins) == 4
    f = t.detuning_hz[mins]
    assert f[2] - f[1] == pytest.approx(6e6, abs=1e-6)


def test_seven_dip_minima_at_centres():
    spec = GratingSpec(7, 3e6, 1e6)
    t = make_grating_target(spec, grid_from_hz(-12e6, 12e6, 481))
    mins = local_minima(t.target_mz)
    np.testing.assert_allclose(t.detuning_hz[mins], spec.centers_hz, atol=1e-6)
    assert spec.span_hz == pytest.approx(18e6)


def test_target_errors():
    with pytest.raises(TargetError):
        make_grating_target(GratingSpec(3, 1e6, 2e6), grid_from_hz(-5e6, 5e6, 401))
    with pytest.raises(GridError):
        make_grating_target(GratingSpec(3, 3e6, 1e6), grid_from_hz(-5e6, 5e6, 11))
    with pytest.raises(GridError):
        make_grating_target(GratingSpec(3, 3e6, 1e6), grid_from_hz(-2e6, 2e6, 401))
    with pytest.raises(TargetError):
        TargetProfile(np.arange(3.0), np.array([2.0, 0, 0]))


def test_infidelity_zero_at_achieved_profile(rng):
    pulse = random_pulse(rng, 30)
    grid = grid_from_hz(-1e7, 1e7, 41)
    target = TargetProfile(grid, excitation_profile(pulse, grid).mz)
    cfg = GrapeConfig()
    assert infidelity(pulse, target, cfg) < 1e-12
    assert np.abs(gradient(pulse, target, cfg)).max() < 1e-9


def test_zero_pulse_infidelity_is_dip_mass():
    t = single_dip_target()
    zero = ControlPulse.zeros(10, 4e-9, OMEGA)
    w = t.weights / t.weights.sum()
    assert infidelity(zero, t, GrapeConfig()) == pytest.approx(
        4 * np.sum(w * ((1 - t.target_mz) / 2) ** 2), rel=1e-12)


def test_ensemble_penalises_amplitude_error():
    # target: the single dip a weak resonant pi pulse draws
    pi = ControlPulse.rectangular(TWO_PI * 0.5e6, 1e-6, 10)
    grid = grid_from_hz(-10e6, 10e6, 101)
    t = TargetProfile(grid, excitation_profile(pi, grid).mz)
    assert t.target_mz[50] == pytest.approx(-1.0)
    one = infidelity(pi, t, GrapeConfig(amplitude_ensemble=(1.0,)))
    two = infidelity(pi, t, GrapeConfig(amplitude_ensemble=(0.5, 1.0)))
    assert one < 1e-12 and two > one
    half = member_infidelities(pi, t, GrapeConfig(amplitude_ensemble=(0.5,)))[0]
    mz_half = excitation_profile(pi, t.grid, 0.5).mz
    assert abs(mz_half[50]) < 1e-12
    assert two == pytest.approx((one + half) / 2, rel=1e-12)


def test_gradient_symmetry_for_zero_pulse():
    t = single_dip_target()
    g = gradient(ControlPulse.zeros(20, 4e-9, OMEGA), t, GrapeConfig())
    assert np.abs(g[:, 1]).max() < 1e-10


def test_gradient_matches_finite_differences(rng):
    pulse = random_pulse(rng, 20, detuning_channel=True)
    grid = grid_from_hz(-10e6, 10e6, 11)
    target = TargetProfile(grid, rng.uniform(-1, 1, 11), rng.uniform(0.5, 1.5, 11))
    cfg = GrapeConfig(amplitude_ensemble=(0.9, 1.1))
    g = gradient(pulse, target, cfg)
    fd = fd_gradient(pulse, target, cfg)
    assert np.abs(g - fd).max() / np.abs(fd).max() < 1e-6


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gradient_property_random(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(20, 40))
    m = int(rng.integers(11, 31))
    pulse = random_pulse(rng, n, detuning_channel=True)
    target = TargetProfile(grid_from_hz(-12e6, 12e6, m), rng.uniform(-1, 1, m))
    cfg = GrapeConfig()
    fd = fd_gradient(pulse, target, cfg)
    assert np.abs(gradient(pulse, target, cfg) - fd).max() / np.abs(fd).max() < 1e-6


def test_initial_guess_single_dip_is_pi_pulse():
    t = single_dip_target()
    p = initial_guess(t, OMEGA, 1e-6, 50)
    np.testing.assert_allclose(p.steps[:, 0], np.pi / 1e-6, rtol=1e-12)
    np.testing.assert_allclose(p.steps[:, 1:], 0.0, atol=1e-9)


def test_initial_guess_two_dip_beat():
    spec = GratingSpec(2, 4e6, 1e6)
    t = make_grating_target(spec, grid_from_hz(-6e6, 6e6, 481))
    p = initial_guess(t, OMEGA, 1e-6, 200)
    a = np.pi / 1e-6
    np.testing.assert_allclose(p.amplitude, 2 * a * np.abs(np.cos(np.pi * 4e6 * p.times)),
                               atol=1e-6 * a)


def test_initial_guess_beats_zero_pulse():
    spec = GratingSpec(5, 3e6, 1e6)
    t = make_grating_target(spec, grid_from_hz(-10e6, 10e6, 201))
    cfg = GrapeConfig()
    p = initial_guess(t, OMEGA, 1e-6, 250)
    assert infidelity(p, t, cfg) < infidelity(ControlPulse.zeros(250, 4e-9, OMEGA), t, cfg)


def test_initial_guess_bandwidth_error():
    t = make_grating_target(GratingSpec(7, 3e6, 1e6), grid_from_hz(-12e6, 12e6, 241))
    with pytest.raises(BandwidthError, match="need at least"):
        initial_guess(t, OMEGA, 1e-8, 10)


def test_clip_amplitude():
    steps = np.array([[3.0, 4.0, 7.0], [0.1, 0.1, 0.0]])
    out = clip_amplitude(steps, 1.0)
    assert np.hypot(*out[0, :2]) <= 1.0
    assert out[0, 2] == 7.0
    np.testing.assert_array_equal(out[1], steps[1])


def test_optimize_at_optimum_returns_initial(rng):
    pulse = random_pulse(rng, 20)
    grid = grid_from_hz(-1e7, 1e7, 21)
    target = TargetProfile(grid, excitation_profile(pulse, grid).mz)
    out, trace = optimize(pulse, target, GrapeConfig())
    np.testing.assert_array_equal(out.steps, pulse.steps)
    assert trace.accepted == 0


def test_optimize_single_dip_from_zero():
    t = single_dip_target()
    out, trace = optimize(ControlPulse.zeros(100, 10e-9, OMEGA), t, GrapeConfig(max_iterations=500))
    assert trace.infidelity[-1] < 1e-3
    assert np.all(np.diff(trace.infidelity) <= 0)
    assert np.all(out.amplitude <= OMEGA)


@pytest.mark.parametrize("method", ["gradient", "lbfgs"])
def test_optimize_monotone_and_deterministic(method):
    spec = GratingSpec(3, 3e6, 1e6)
    t = make_grating_target(spec, grid_from_hz(-8e6, 8e6, 81))
    start = initial_guess(t, OMEGA, 1e-6, 100)
    cfg = GrapeConfig(max_iterations=40, method=method, amplitude_ensemble=(0.95, 1.05))
    a, ta = optimize(start, t, cfg)
    b, tb = optimize(start, t, cfg)
    np.testing.assert_array_equal(a.steps, b.steps)
    assert ta.infidelity == tb.infidelity
    assert np.all(np.diff(ta.infidelity) <= 0)
    assert ta.infidelity[-1] < ta.infidelity[0]
    assert np.all(a.amplitude <= OMEGA)


def test_detuning_channel_is_frozen_by_default():
    t = single_dip_target()
    start = initial_guess(t, OMEGA, 1e-6, 50)
    out, _ = optimize(start, t, GrapeConfig(max_iterations=5))
    np.testing.assert_array_equal(out.steps[:, 2], 0.0)


def test_config_from_dict_flattens_step_rule():
    cfg = GrapeConfig.from_dict({"max_iterations": 3, "step_rule": {"shrink": 0.25},
                                 "unrelated": 1})
    assert cfg.max_iterations == 3 and cfg.shrink == 0.25
