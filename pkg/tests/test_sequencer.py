"""Experiment protocols: spectroscopy, single-shot readout, polarization
trains, forbidden-transition scans, and the frequency-tracking loop."""

import math

import numpy as np
import pytest

from jumpspec import sequencer
from jumpspec.detector import DetectorParams
from jumpspec.dynamics import SystemState, trajectory_rng
from jumpspec.sequencer import (TrackerState, dnp_prepare, eldor_scan,
                                forbidden_pi, readout_pair, run_tracking,
                                single_shot_readout, spectroscopy_sweep,
                                trace_experiment, track_step)
from jumpspec.spinmodel import CavityParams, SpinParams, build_system

TWO_PI = 2.0 * math.pi


@pytest.fixture(scope="module")
def system():
    p = SpinParams.from_hz(7.334e9, -788.1e3, [(34.5e3, 103e3)])
    return build_system(p, CavityParams.from_hz(7.334e9, 640e3, 4.5e3))


@pytest.fixture(scope="module")
def quiet_system():
    """Same levels but no anisotropic coupling: the nuclear state is
    strictly conserved (no forbidden decay channel)."""
    p = SpinParams.from_hz(7.334e9, -788.1e3, [(34.5e3, 0.0)])
    return build_system(p, CavityParams.from_hz(7.334e9, 640e3, 4.5e3))


@pytest.fixture(scope="module")
def detector():
    return DetectorParams()


def test_readout_pair_ordering(system):
    down, up = readout_pair(system)
    assert system.levels[down.lower][1] == "d"
    assert system.levels[up.lower][1] == "u"
    assert down.frequency < up.frequency


def test_single_shot_readout_contrast(system, detector):
    for prep, expect in (("d", "d"), ("u", "u")):
        rng = trajectory_rng(1, 0 if prep == "d" else 1)
        level = system.level_index(0, prep)
        state = SystemState(level=level)
        rec = single_shot_readout(state, system, detector, rng, n_ro=600)
        assert rec.state_call == expect
        assert abs(rec.delta_c) > 30


def test_readout_is_qnd_without_forbidden_coupling(quiet_system, detector):
    """With no nuclear-flip channel, repeated readout always agrees."""
    rng = trajectory_rng(2, 0)
    state = SystemState(level=quiet_system.level_index(0, "d"))
    calls = [single_shot_readout(state, quiet_system, detector, rng,
                                 n_ro=120).state_call for _ in range(5)]
    assert calls == ["d"] * 5
    assert quiet_system.levels[state.level][1] == "d"


def test_spectroscopy_peak_at_addressed_line(system):
    # dark-count-free detector so the peak position is unambiguous
    quiet_det = DetectorParams(gamma_dc=0.0)
    rng = trajectory_rng(3, 0)
    state = SystemState(level=system.level_index(0, "u"))
    sp = spectroscopy_sweep(state, system, quiet_det, rng,
                            center=system.params.omega_s, span_hz=60e3,
                            step_hz=2e3, n_averages=60, t_int=1.6e-3)
    # nuclear-up spectra peak at +A/2; saturation broadens the top, so
    # locate the line by its count-weighted centroid
    centroid = np.sum(sp.delta_hz * sp.counts) / np.sum(sp.counts)
    assert centroid == pytest.approx(17.25e3, abs=3e3)
    assert sp.counts.max() >= 5 * np.median(sp.counts)


def test_trace_experiment_is_deterministic(system, detector):
    kwargs = dict(n_spectra=2, center=system.params.omega_s, span_hz=20e3,
                  step_hz=4e3, n_averages=5, t_int=1e-3)
    a = trace_experiment(system, detector, 17, **kwargs)
    b = trace_experiment(system, detector, 17, **kwargs)
    for sa, sb in zip(a.spectra, b.spectra):
        assert np.array_equal(sa.counts, sb.counts)


def test_forbidden_pi_carrier_is_shifted(system):
    seg = forbidden_pi(system, "zero_quantum")
    bare = system.transition("zero_quantum").frequency
    assert abs(seg.frequency - bare) / TWO_PI > 10e3
    assert seg.amplitude > 0 and seg.duration > 0


def test_dnp_polarizes_both_targets(system):
    for target in ("d", "u"):
        ok = 0
        for i in range(40):
            rng = trajectory_rng(4, i)
            state = SystemState(level=i % 4)
            dnp_prepare(state, target, system, rng, n_prep=2)
            ok += (system.levels[state.level][1] == target)
        assert ok / 40 >= 0.9
    with pytest.raises(ValueError):
        dnp_prepare(SystemState(level=0), "x", system, trajectory_rng(4, 0))


def test_dnp_monotone_in_pulse_number(system):
    fractions = []
    for n_prep in (1, 2, 4):
        ok = 0
        for i in range(60):
            rng = trajectory_rng(5, 100 * n_prep + i)
            state = SystemState(level=i % 4)
            dnp_prepare(state, "d", system, rng, n_prep=n_prep)
            ok += (system.levels[state.level][1] == "d")
        fractions.append(ok / 60)
    assert fractions[-1] >= fractions[0]
    assert fractions[-1] >= 0.95


def test_eldor_transfer_at_shifted_line_vanishing_at_zero_duration(system):
    """The scan sees the zero-quantum line at its drive-shifted offset;
    shrinking the pulse toward zero length removes the transfer."""
    from jumpspec.spinmodel import (ac_zeeman_frequencies, drive_filter,
                                    forbidden_rabi)
    det = DetectorParams()
    p = system.params
    amp = TWO_PI * 200e3
    zq_off = system.transition("zero_quantum").frequency - p.omega_s
    filt = drive_filter(system.cavity, zq_off)
    shifted = ac_zeeman_frequencies(p, amp * filt)[1] / TWO_PI
    omega_zd = forbidden_rabi(amp, p, system.cavity, zq_off)
    duration = math.pi / omega_zd
    kwargs = dict(branch="zero_quantum", deltas_hz=[shifted],
                  amplitude=amp, prepare="u", n_prep=2,
                  n_shots=24, n_ro=150)
    driven = eldor_scan(system, det, 6, duration=duration, **kwargs)
    undriven = eldor_scan(system, det, 6, duration=1e-7, edge=4e-8,
                          **kwargs)
    assert driven[0] > 0.7
    assert undriven[0] < 0.35
    assert driven[0] - undriven[0] > 0.4


def test_tracker_null_input_gives_zero_corrections():
    tracker = TrackerState(p_gain=10.0, i_gain=1e-3)
    rec = run_tracking(tracker, slope=50.0, drift=0.0, n_iter=300,
                       t_iter=0.05)
    assert np.all(rec.corrections == 0.0)
    assert np.all(rec.detunings == 0.0)


def test_tracker_cancels_linear_drift():
    tracker = TrackerState(p_gain=10.0, i_gain=1e-3)
    rate = TWO_PI * 1e3 / 60.0      # 1 kHz per minute
    rec = run_tracking(tracker, slope=50.0, drift=lambda t: rate * t,
                       n_iter=3000, t_iter=0.05)
    settled = rec.detunings[750:]
    rms = np.sqrt(np.mean(settled ** 2)) / TWO_PI
    assert rms < 2e3


def test_track_step_leaky_integrator():
    tracker = TrackerState(p_gain=2.0, i_gain=0.5, f=10.0)
    t1, corr1 = track_step(tracker, 1.0, 0.0)
    assert t1.y == pytest.approx(1.0)
    assert corr1 == pytest.approx(2.0 * 1.0 + 0.5 * 1.0)
    t2, _ = track_step(t1, 0.0, 0.0)
    assert t2.y == pytest.approx(0.9)
    with pytest.raises(ValueError):
        TrackerState(p_gain=1.0, i_gain=0.0, f=0.5)


def test_readout_requires_cycles(system, detector):
    with pytest.raises(ValueError):
        single_shot_readout(SystemState(level=0), system, detector,
                            trajectory_rng(7, 0), n_ro=0)
