"""Experiment protocols over the jump engine and the detector.

Spectroscopy sweeps and long traces, interleaved single-shot nuclear
readout, ELDOR-style forbidden-transition scans, nuclear polarization by
forbidden pulse trains, Rabi/Ramsey/echo characterization, and the
closed-loop frequency tracker.

Pulses far outside the spectral bandwidth of the addressed transition
are replaced by equal-length waits (their excitation probability is
below 1e-6), which keeps long sweeps affordable without touching the
physics near resonance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import dynamics as dyn
from .detector import DetectorParams, count_window
from .dynamics import (NO_NOISE, AmbiguousDriveError, NoiseModel,
                       PulseSegment, SystemState,
                       apply_pulse, gaussian_pi, trajectory_rng, wait)
from .spinmodel import SpinSystem, Transition, drive_filter

TWO_PI = 2.0 * math.pi

#: detuning beyond which a Gaussian pulse of FWHM T no longer excites
#: (numerically, the inversion profile is < 1e-6 past ~1/T)
SKIP_CUTOFF_SCALE = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    """Named protocol with its keyword parameters (CLI dispatch unit)."""

    protocol: str
    params: dict = field(default_factory=dict)
    tracking: str = "off"


@dataclass(frozen=True)
class Spectrum:
    delta_hz: np.ndarray       # sweep offsets from the center (Hz)
    counts: np.ndarray         # total clicks per point over all averages
    center: float              # carrier at delta=0 (rad/s)
    n_averages: int
    start_time: float          # trajectory wall-clock at sweep start (s)

    @property
    def mean_counts(self) -> np.ndarray:
        return self.counts / self.n_averages


@dataclass(frozen=True)
class Trace:
    spectra: tuple[Spectrum, ...]


@dataclass(frozen=True)
class CountRecord:
    c_down: int
    c_up: int
    n_ro: int
    duration: float

    @property
    def state_call(self) -> str:
        return "d" if self.c_down > self.c_up else "u"

    @property
    def delta_c(self) -> int:
        return self.c_down - self.c_up


def _nearest_distance(sys: SpinSystem, carrier: float) -> float:
    return min(abs(t.frequency - carrier) for t in sys.transitions)


def _pulse_or_wait(state, carrier, fwhm, sys, rng, noise):
    """Gaussian pi pulse, skipped when no transition is within bandwidth.

    A carrier that cannot be addressed unambiguously (two lines within
    the resolution band) is also skipped: such a pulse has no resolvable
    target, and in a sweep it contributes only its wall time.
    """
    cutoff = TWO_PI * SKIP_CUTOFF_SCALE / fwhm
    if _nearest_distance(sys, carrier) > cutoff:
        return apply_pulse(state, wait(2.0 * fwhm), sys, rng, noise)
    try:
        return apply_pulse(state, gaussian_pi(carrier, fwhm=fwhm), sys, rng,
                           noise)
    except AmbiguousDriveError:
        return apply_pulse(state, wait(2.0 * fwhm), sys, rng, noise)


def _detect(state, duration, sys, det, rng, noise):
    """Free evolution plus click counting over the window."""
    t0 = state.time
    events = apply_pulse(state, dyn.detect(duration), sys, rng, noise)
    emissions = [e.time for e in events if e.photon]
    return count_window(emissions, (t0, t0 + duration), det, rng), events


def spectroscopy_sweep(state: SystemState, sys: SpinSystem,
                       det: DetectorParams, rng, *, center: float,
                       span_hz: float = 100e3, step_hz: float = 2e3,
                       n_averages: int = 200, pulse_fwhm: float = 80e-6,
                       t_int: float = 2.0e-3, blanking: float = 80e-6,
                       noise: NoiseModel = NO_NOISE) -> Spectrum:
    """Pulsed spectrum around ``center``: pi pulse, blank, count window.

    Sweeps are repeated ``n_averages`` times in experiment order (full
    frequency scan per repetition), so slow state changes show up as
    averaged peak weights. The state persists and is mutated.
    """
    deltas = np.arange(-span_hz / 2.0, span_hz / 2.0 + step_hz / 2.0, step_hz)
    counts = np.zeros(deltas.size)
    start = state.time
    for _ in range(n_averages):
        if noise.t2_star:
            state.shot_offset = noise.shot_offset(rng)
        for i, d_hz in enumerate(deltas):
            carrier = center + TWO_PI * d_hz
            _pulse_or_wait(state, carrier, pulse_fwhm, sys, rng, noise)
            if blanking > 0:
                apply_pulse(state, wait(blanking), sys, rng, noise)
            c, _ = _detect(state, t_int, sys, det, rng, noise)
            counts[i] += c
    return Spectrum(delta_hz=deltas, counts=counts, center=center,
                    n_averages=n_averages, start_time=start)


def trace_experiment(sys: SpinSystem, det: DetectorParams, seed: int,
                     n_spectra: int, *, initial_level: int = 0,
                     noise: NoiseModel = NO_NOISE, **sweep_kwargs) -> Trace:
    """Consecutive spectra sharing one trajectory; nuclear flips during
    the acquisition appear as telegraphic peak-position changes."""
    rng = trajectory_rng(seed, 0)
    state = SystemState(level=initial_level)
    spectra = [spectroscopy_sweep(state, sys, det, rng, noise=noise,
                                  **sweep_kwargs)
               for _ in range(n_spectra)]
    return Trace(spectra=tuple(spectra))


def readout_pair(sys: SpinSystem) -> tuple[Transition, Transition]:
    """The two electron-spin-resonance lines, (nuclear-down, nuclear-up)."""
    allowed = sys.allowed_transitions()
    if len(allowed) != 2:
        raise ValueError("interleaved readout needs exactly two allowed lines")
    down = next(t for t in allowed
                if sys.levels[t.lower][1] == "d")
    up = next(t for t in allowed if t is not down)
    return down, up


def single_shot_readout(state: SystemState, sys: SpinSystem,
                        det: DetectorParams, rng, *, n_ro: int = 1000,
                        t_d: float = 2.6e-3, pulse_fwhm: float = 80e-6,
                        blanking: float = 0.0,
                        noise: NoiseModel = NO_NOISE) -> CountRecord:
    """Interleaved pi pulses on both allowed lines, counts per line.

    Each of the ``n_ro`` cycles pulses the nuclear-down line, counts for
    ``t_d``, then the nuclear-up line, and counts again; only the line
    matching the current nuclear state excites, so the click imbalance
    encodes the state.
    """
    if n_ro < 1:
        raise ValueError("need at least one readout cycle")
    down, up = readout_pair(sys)
    t_start = state.time
    c_down = c_up = 0
    for _ in range(n_ro):
        for which, trans in (("down", down), ("up", up)):
            _pulse_or_wait(state, trans.frequency, pulse_fwhm, sys, rng, noise)
            if blanking > 0:
                apply_pulse(state, wait(blanking), sys, rng, noise)
            c, _ = _detect(state, t_d, sys, det, rng, noise)
            if which == "down":
                c_down += c
            else:
                c_up += c
    return CountRecord(c_down=c_down, c_up=c_up, n_ro=n_ro,
                       duration=state.time - t_start)


def forbidden_pi(sys: SpinSystem, branch: str, *,
                 omega_eff: float = TWO_PI * 15e3,
                 edge: float = 5e-6) -> PulseSegment:
    """Flattop pi pulse on a forbidden line at its drive-shifted frequency.

    ``branch`` is ``"double_quantum"`` or ``"zero_quantum"``;
    ``omega_eff`` the plateau Rabi frequency on the forbidden pair. The
    carrier is placed at the frequency the line occupies *under* this
    drive (the strong pulse pushes the line while driving it).
    """
    trans = sys.transition(branch)
    filt = drive_filter(sys.cavity, trans.frequency - sys.cavity.omega_0)
    amp = omega_eff / (2.0 * trans.matrix_element * filt)
    # the Gaussian edges carry less area than a full plateau of the same
    # length; extend the duration by the measured deficit so the total
    # rotation is pi
    probe = PulseSegment(kind="flattop", frequency=trans.frequency,
                         amplitude=amp, duration=math.pi / omega_eff + 2 * edge,
                         edge=edge)
    plan_steps, plan_dt = dyn._step_grid(probe, sys, None)
    area = np.sum(dyn._envelope_samples(probe, plan_steps, plan_dt)) * plan_dt
    duration = math.pi / omega_eff + (probe.duration - area)
    if sys.params.n_nuclei == 1:
        from .spinmodel import ac_zeeman_frequencies, forbidden_frequencies
        d_d, d_z = ac_zeeman_frequencies(sys.params, amp * filt)
        d0_d, d0_z = forbidden_frequencies(sys.params)
        shift = (d_d - d0_d) if branch.startswith("double") else (d_z - d0_z)
    else:
        shift = 0.0
    return PulseSegment(kind="flattop", frequency=trans.frequency + shift,
                        amplitude=amp, duration=duration, edge=edge)


def dnp_prepare(state: SystemState, target: str, sys: SpinSystem, rng, *,
                n_prep: int = 2, tau_w: float | None = None,
                omega_eff: float = TWO_PI * 15e3,
                noise: NoiseModel = NO_NOISE) -> list:
    """Polarize the nucleus by a forbidden pi-pulse train.

    ``target="d"`` pumps the zero-quantum line (excitation out of the
    nuclear-up ground level relaxes into nuclear-down); ``target="u"``
    pumps the double-quantum line. Each pulse is followed by a
    relaxation wait ``tau_w`` (default 3 electron lifetimes).
    """
    if target not in ("d", "u"):
        raise ValueError("target nuclear state must be 'd' or 'u'")
    branch = "zero_quantum" if target == "d" else "double_quantum"
    seg = forbidden_pi(sys, branch, omega_eff=omega_eff)
    if tau_w is None:
        gamma = sys.gamma_r
        tau_w = 3.0 / gamma if gamma > 0 else 1e-3
    events = []
    for _ in range(n_prep):
        events += apply_pulse(state, seg, sys, rng, noise)
        events += apply_pulse(state, wait(tau_w), sys, rng, noise)
    return events


def eldor_scan(sys: SpinSystem, det: DetectorParams, seed: int, *,
               branch: str = "double_quantum", deltas_hz,
               amplitude: float, duration: float, edge: float = 5e-6,
               prepare: str = "d", n_prep: int = 3,
               n_shots: int = 50, n_ro: int = 120, t_d: float = 2.6e-3,
               noise: NoiseModel = NO_NOISE) -> np.ndarray:
    """P(nuclear down) versus drive offset across a forbidden line.

    Each shot polarizes the nucleus, applies a flattop pulse at
    ``omega_s + delta``, and reads the nuclear state out. ``deltas_hz``
    are offsets from the electron frequency (Hz); ``amplitude`` is the
    input-referred drive (allowed-transition Rabi units, rad/s).
    """
    deltas_hz = np.asarray(deltas_hz, dtype=float)
    omega_s = sys.params.omega_s
    p_down = np.zeros(deltas_hz.size)
    for i, d_hz in enumerate(deltas_hz):
        carrier = omega_s + TWO_PI * d_hz
        seg = PulseSegment(kind="flattop", frequency=carrier,
                           amplitude=amplitude, duration=duration, edge=edge)
        n_down = 0
        for shot in range(n_shots):
            rng = trajectory_rng(seed, i * n_shots + shot)
            state = SystemState(level=0)
            dnp_prepare(state, prepare, sys, rng, n_prep=n_prep, noise=noise)
            apply_pulse(state, seg, sys, rng, noise)
            apply_pulse(state, wait(5.0 / max(sys.gamma_r, 1.0)), sys, rng,
                        noise)
            rec = single_shot_readout(state, sys, det, rng, n_ro=n_ro,
                                      t_d=t_d, noise=noise)
            n_down += (rec.state_call == "d")
        p_down[i] = n_down / n_shots
    return p_down


def rabi_experiment(sys: SpinSystem, det: DetectorParams, seed: int, *,
                    transition: str, amplitude: float, durations,
                    n_averages: int = 100, t_int: float = 2.0e-3,
                    noise: NoiseModel = NO_NOISE) -> np.ndarray:
    """Mean clicks after a square drive of each duration."""
    trans = sys.transition(transition)
    signal = np.zeros(len(durations))
    for i, tau in enumerate(durations):
        seg = PulseSegment(kind="square", frequency=trans.frequency,
                           amplitude=amplitude, duration=tau)
        for shot in range(n_averages):
            rng = trajectory_rng(seed, i * n_averages + shot)
            state = SystemState(level=trans.lower,
                                shot_offset=noise.shot_offset(rng))
            apply_pulse(state, seg, sys, rng, noise)
            c, _ = _detect(state, t_int, sys, det, rng, noise)
            signal[i] += c
    return signal / n_averages


def _interference_experiment(sys, det, seed, schedule_fn, delays,
                             n_averages, t_int, noise):
    trans_lower, signal = None, np.zeros(len(delays))
    for i, tau in enumerate(delays):
        schedule, lower = schedule_fn(tau)
        for shot in range(n_averages):
            rng = trajectory_rng(seed, i * n_averages + shot)
            state = SystemState(level=lower,
                                shot_offset=noise.shot_offset(rng))
            for seg in schedule:
                apply_pulse(state, seg, sys, rng, noise)
            c, _ = _detect(state, t_int, sys, det, rng, noise)
            signal[i] += c
    return signal / n_averages


def ramsey_experiment(sys: SpinSystem, det: DetectorParams, seed: int, *,
                      transition: str, delays, detuning_hz: float = 1e3,
                      pulse_fwhm: float = 20e-6, n_averages: int = 100,
                      t_int: float = 2.0e-3,
                      noise: NoiseModel = NO_NOISE) -> np.ndarray:
    """Two pi/2 pulses split by a variable delay at a detuned carrier."""
    trans = sys.transition(transition)
    carrier = trans.frequency + TWO_PI * detuning_hz

    def schedule(tau):
        half = math.pi / 2.0
        return ([gaussian_pi(carrier, fwhm=pulse_fwhm, rotation=half),
                 wait(tau, frame_frequency=carrier),
                 gaussian_pi(carrier, fwhm=pulse_fwhm, rotation=half)],
                trans.lower)

    return _interference_experiment(sys, det, seed, schedule, delays,
                                    n_averages, t_int, noise)


def echo_experiment(sys: SpinSystem, det: DetectorParams, seed: int, *,
                    transition: str, delays, pulse_fwhm: float = 20e-6,
                    n_averages: int = 100, t_int: float = 2.0e-3,
                    noise: NoiseModel = NO_NOISE) -> np.ndarray:
    """pi/2 -- tau/2 -- pi -- tau/2 -- pi/2: static detunings refocus,
    so the decay tracks the Markovian coherence time."""
    trans = sys.transition(transition)
    carrier = trans.frequency

    def schedule(tau):
        half = math.pi / 2.0
        return ([gaussian_pi(carrier, fwhm=pulse_fwhm, rotation=half),
                 wait(tau / 2.0, frame_frequency=carrier),
                 gaussian_pi(carrier, fwhm=pulse_fwhm),
                 wait(tau / 2.0, frame_frequency=carrier),
                 gaussian_pi(carrier, fwhm=pulse_fwhm, rotation=half)],
                trans.lower)

    return _interference_experiment(sys, det, seed, schedule, delays,
                                    n_averages, t_int, noise)


# ---------------------------------------------------------------------------
# closed-loop frequency tracking

@dataclass(frozen=True)
class TrackerState:
    """Leaky-integrator sensor plus PI correction gains.

    The sensor recursion is y' = (1 - 1/f) y + (C - C_ref); the applied
    frequency correction is p_gain * y + i_gain * sum(y).
    """

    p_gain: float
    i_gain: float
    f: float = 2000.0
    tau: float = 25e-6
    n_track: int = 10
    y: float = 0.0
    integral: float = 0.0

    def __post_init__(self):
        if self.f < 1:
            raise ValueError("sensor memory f must be at least 1")


def track_step(tracker: TrackerState, c: float,
               c_ref: float) -> tuple[TrackerState, float]:
    """One sensor update; returns the new state and the correction."""
    y = (1.0 - 1.0 / tracker.f) * tracker.y + (c - c_ref)
    integral = tracker.integral + y
    new = replace(tracker, y=y, integral=integral)
    return new, new.p_gain * y + new.i_gain * integral


@dataclass(frozen=True)
class TrackingRecord:
    times: np.ndarray
    detunings: np.ndarray        # drift minus applied correction (rad/s)
    corrections: np.ndarray
    sensors: np.ndarray


def run_tracking(tracker: TrackerState, *, slope: float, drift,
                 n_iter: int, t_iter: float,
                 rng=None, noise_sigma: float = 0.0) -> TrackingRecord:
    """Closed-loop simulation of the interleaved-Ramsey frequency lock.

    The phase sensor responds as C - C_ref = slope * sin(detuning * tau)
    (its linear range covers a few kHz at the default tau); ``drift``
    maps time (s) to the true frequency drift (rad/s). With zero drift
    and zero noise the corrections stay identically zero. Counting noise
    can be added as Gaussian jitter of scale ``noise_sigma``.
    """
    drift_fn = drift if callable(drift) else (lambda t: drift)
    times = np.arange(n_iter) * t_iter
    detunings = np.zeros(n_iter)
    corrections = np.zeros(n_iter)
    sensors = np.zeros(n_iter)
    correction = 0.0
    for i, t in enumerate(times):
        detuning = drift_fn(t) - correction
        sensor = slope * math.sin(detuning * tracker.tau)
        if noise_sigma > 0 and rng is not None:
            sensor += noise_sigma * rng.standard_normal()
        tracker, correction = track_step(tracker, sensor, 0.0)
        detunings[i] = detuning
        corrections[i] = correction
        sensors[i] = sensor
    return TrackingRecord(times=times, detunings=detunings,
                          corrections=corrections, sensors=sensors)
