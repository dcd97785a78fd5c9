"""Quantum-jump Monte Carlo engine.

Evolves the level occupation of a ``SpinSystem`` under a pulse schedule.
The currently driven two-level subspace carries a full Bloch vector
(piecewise-analytic Rabi rotations on a time grid); all other levels are
tracked as classical populations. Radiative decays — allowed and
cross-relaxation branches — are sampled as stochastic jumps, each
emitting one cavity photon; photon loss is the detector's business.

Optional noise channels (all off by default): static per-shot detuning
reproducing an exponential Ramsey envelope, Markovian transverse decay,
Ornstein--Uhlenbeck drift of the electron frequency, telegraph jumps,
and an additive non-radiative cross-relaxation rate on one branch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spinmodel import (SpinSystem, Transition, ac_zeeman_frequencies,
                        drive_filter, forbidden_frequencies)

TWO_PI = 2.0 * math.pi

#: Two transitions within this band of the carrier make addressing ambiguous.
AMBIGUITY_BAND = TWO_PI * 1e3


class AmbiguousDriveError(ValueError):
    """A pulse carrier sits within 1 kHz of two different transitions."""


PULSE_KINDS = ("gaussian_pi", "flattop", "square", "wait", "detect_window")


@dataclass(frozen=True)
class PulseSegment:
    """One element of a schedule.

    ``frequency`` is the carrier (rad/s); for ``wait``/``detect_window``
    it sets the rotating frame for any surviving coherence (0 freezes the
    phase). ``amplitude`` is the peak Rabi frequency an allowed
    transition would see (rad/s); ``None`` on a driven kind requests
    automatic calibration to ``rotation`` (default pi) on the addressed
    transition. ``duration`` is the FWHM for ``gaussian_pi`` (wall time
    is twice that) and the full wall time otherwise. ``edge`` is the
    flattop ramp FWHM; ``phase`` the drive phase (rad).
    """

    kind: str
    frequency: float = 0.0
    amplitude: float | None = None
    duration: float = 0.0
    phase: float = 0.0
    edge: float = 0.0
    rotation: float = math.pi

    def __post_init__(self):
        if self.kind not in PULSE_KINDS:
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if self.duration < 0 or (self.duration == 0 and self.driven):
            raise ValueError("segment duration must be positive")
        if self.amplitude is not None and self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        if self.kind == "flattop" and not 0 <= 2 * self.edge <= self.duration:
            raise ValueError("flattop edges must fit inside the duration")

    @property
    def wall_time(self) -> float:
        return 2.0 * self.duration if self.kind == "gaussian_pi" else self.duration

    @property
    def driven(self) -> bool:
        return self.kind in ("gaussian_pi", "flattop", "square")

    def envelope(self, t: float) -> float:
        """Unitless envelope at time t from segment start, in [0, 1]."""
        if self.kind == "gaussian_pi":
            sigma = self.duration / 2.3548200450309493
            return math.exp(-0.5 * ((t - self.duration) / sigma) ** 2)
        if self.kind == "flattop" and self.edge > 0:
            sigma = self.edge / 2.3548200450309493
            if t < self.edge:
                return math.exp(-0.5 * ((t - self.edge) / sigma) ** 2)
            if t > self.duration - self.edge:
                return math.exp(-0.5 * ((t - (self.duration - self.edge)) / sigma) ** 2)
            return 1.0
        return 1.0


def gaussian_pi(frequency: float, fwhm: float = 80e-6,
                rotation: float = math.pi, phase: float = 0.0) -> PulseSegment:
    """Gaussian pulse auto-calibrated to the given rotation angle."""
    return PulseSegment(kind="gaussian_pi", frequency=frequency,
                        duration=fwhm, rotation=rotation, phase=phase)


def wait(duration: float, frame_frequency: float = 0.0) -> PulseSegment:
    return PulseSegment(kind="wait", frequency=frame_frequency, duration=duration)


def detect(duration: float) -> PulseSegment:
    return PulseSegment(kind="detect_window", duration=duration)


@dataclass(frozen=True)
class NoiseModel:
    """Optional imperfections; the all-defaults instance is noise-free.

    ``t2_star`` draws a static detuning per shot from a Lorentzian of
    HWHM 1/t2_star, giving the observed exponential Ramsey envelope.
    ``t2`` applies Markovian transverse decay during evolution. The
    Ornstein--Uhlenbeck channel drifts the electron frequency with
    stationary std ``ou_sigma`` (rad/s) and correlation time ``ou_tau``;
    the telegraph channel toggles a +/- ``telegraph_shift`` offset at
    rate ``telegraph_rate``. ``extra_cross_rates`` adds a non-radiative
    rate (1/s) to the named cross-relaxation branch.
    """

    t2_star: float | None = None
    t2: float | None = None
    ou_sigma: float = 0.0
    ou_tau: float = 1.0
    telegraph_rate: float = 0.0
    telegraph_shift: float = 0.0
    extra_cross_rates: dict = field(default_factory=dict)

    def shot_offset(self, rng) -> float:
        if not self.t2_star:
            return 0.0
        return rng.standard_cauchy() / self.t2_star


NO_NOISE = NoiseModel()


@dataclass
class SystemState:
    """Mutable trajectory state: occupied level plus the driven-pair coherence."""

    level: int
    time: float = 0.0
    bloch: np.ndarray | None = None          # (x, y, z) of the driven pair
    pair: tuple[int, int] | None = None      # (lower, upper) eigenlevel indices
    shot_offset: float = 0.0                 # static detuning this shot (rad/s)
    ou_value: float = 0.0
    telegraph_sign: int = 1

    def frequency_shift(self, noise: NoiseModel) -> float:
        shift = self.shot_offset + self.ou_value
        if noise.telegraph_rate > 0:
            shift += self.telegraph_sign * noise.telegraph_shift
        return shift


@dataclass(frozen=True)
class JumpEvent:
    """A relaxation jump; radiative jumps emit one cavity photon."""

    time: float
    label: str
    photon: bool = True


@dataclass(frozen=True)
class Trajectory:
    events: tuple[JumpEvent, ...]
    windows: tuple[tuple[float, float], ...]
    final_level: int
    final_time: float

    def emission_times(self) -> np.ndarray:
        return np.array([e.time for e in self.events if e.photon])


def _decay_table(sys: SpinSystem, level: int, noise: NoiseModel):
    """(rates, destinations, labels, photon flags) out of ``level``."""
    rates, dests, labels, photons = [], [], [], []
    for ch in sys.channels[level]:
        rates.append(ch.rate)
        dests.append(ch.transition.lower)
        labels.append(ch.transition.label)
        photons.append(True)
        extra = (noise.extra_cross_rates.get(ch.transition.label, 0.0)
                 + sys.extra_cross_rates.get(ch.transition.label, 0.0))
        if extra > 0:
            rates.append(extra)
            dests.append(ch.transition.lower)
            labels.append(ch.transition.label)
            photons.append(False)
    return rates, dests, labels, photons


def _sample_jump(rates, dests, labels, photons, time, rng, events):
    """Pick a branch proportionally to rate; append the event."""
    total = sum(rates)
    u = rng.random() * total
    acc = 0.0
    for rate, dest, label, photon in zip(rates, dests, labels, photons):
        acc += rate
        if u <= acc:
            events.append(JumpEvent(time=time, label=label, photon=photon))
            return dest
    events.append(JumpEvent(time=time, label=labels[-1], photon=photons[-1]))
    return dests[-1]


def sample_relaxation(state: SystemState, dt: float, sys: SpinSystem, rng,
                      noise: NoiseModel = NO_NOISE) -> list[JumpEvent]:
    """Advance a population state by dt, sampling at most one jump.

    Exact for a single excited level when dt spans the interval: the jump
    occurs with probability 1 - exp(-Gamma_tot*dt) at a time drawn from
    the conditional exponential distribution.
    """
    events: list[JumpEvent] = []
    rates, dests, labels, photons = _decay_table(sys, state.level, noise)
    total = sum(rates)
    if total <= 0:
        state.time += dt
        return events
    u = rng.random()
    if u < -math.expm1(-total * dt):
        # inverse-CDF draw; conditioning on u < p_jump keeps it inside dt
        t_jump = state.time + (-math.log1p(-u)) / total
        state.level = _sample_jump(rates, dests, labels, photons, t_jump, rng, events)
        state.bloch = None
        state.pair = None
        # the new level may itself decay within the remaining time
        remaining = state.time + dt - t_jump
        state.time = t_jump
        events += sample_relaxation(state, remaining, sys, rng, noise)
        return events
    state.time += dt
    return events


def _collapse(state: SystemState, rng):
    """Project a driven-pair coherence onto a definite level."""
    if state.bloch is None:
        return
    p_upper = 0.5 * (1.0 + state.bloch[2])
    lower, upper = state.pair
    state.level = upper if rng.random() < p_upper else lower
    state.bloch = None
    state.pair = None


def _address(seg: PulseSegment, sys: SpinSystem) -> Transition:
    """Nearest transition to the carrier; error if two sit within 1 kHz."""
    dist = [(abs(t.frequency - seg.frequency), t) for t in sys.transitions]
    dist.sort(key=lambda pair: pair[0])
    near = [t for d, t in dist if d < AMBIGUITY_BAND]
    if len(near) > 1:
        raise AmbiguousDriveError(
            "carrier within 1 kHz of transitions "
            + " and ".join(t.label for t in near))
    return dist[0][1]


def calibrated_amplitude(seg: PulseSegment, sys: SpinSystem) -> float:
    """Drive amplitude giving ``seg.rotation`` on an allowed transition.

    The power is referenced to the allowed matrix element, matching a
    calibration done on the strong lines: a carrier sitting on a weak
    (nuclear-flip) line is driven at the element ratio, not boosted to a
    full rotation. Integrates the envelope on the same step grid
    ``apply_pulse`` uses, so the calibration is exact for the
    discretized pulse.
    """
    trans = _address(seg, sys)
    allowed = [t.matrix_element for t in sys.transitions if t.is_allowed]
    element = max(allowed) if allowed else trans.matrix_element
    coupling = 2.0 * element * drive_filter(
        sys.cavity, seg.frequency - sys.cavity.omega_0)
    if coupling <= 0:
        raise ValueError(f"transition {trans.label} is not drivable (zero element)")
    n_steps, dt = _step_grid(seg, sys, None)
    area = sum(_envelope_samples(seg, n_steps, dt)) * dt
    return seg.rotation / (coupling * area)


def _step_grid(seg: PulseSegment, sys: SpinSystem, trans: Transition | None):
    gamma = sys.total_rate(trans.upper) if trans is not None else max(
        (sys.total_rate(i) for i in range(len(sys.levels))), default=0.0)
    wall = seg.wall_time
    dt = wall / 100.0
    if gamma > 0:
        dt = min(dt, 1.0 / (50.0 * gamma))
    n_steps = max(1, math.ceil(wall / dt))
    return n_steps, wall / n_steps


_ENVELOPE_CACHE: dict = {}


def _envelope_samples(seg: PulseSegment, n_steps: int, dt: float):
    """Mid-step envelope values, cached per pulse shape."""
    key = (seg.kind, seg.duration, seg.edge, n_steps)
    samples = _ENVELOPE_CACHE.get(key)
    if samples is None:
        samples = tuple(seg.envelope((i + 0.5) * dt) for i in range(n_steps))
        if len(_ENVELOPE_CACHE) < 4096:
            _ENVELOPE_CACHE[key] = samples
    return samples


_WEIGHT_FLOOR = 1e-4


def _drive_weight(trans: Transition, seg: PulseSegment) -> float:
    """Element-weighted spectral overlap of the carrier with a line."""
    delta = abs(trans.frequency - seg.frequency)
    bandwidth = TWO_PI * 0.44 / max(0.5 * seg.wall_time, 1e-12)
    return trans.matrix_element / (1.0 + (delta / bandwidth) ** 2)


class _LevelDrive:
    """Per-level drive target: the transition a pulse actually works on."""

    __slots__ = ("trans", "pair", "omega_peak", "rates", "dests", "labels",
                 "photons", "gamma", "p_step", "sqrt_survive", "ac_shift")

    def __init__(self, trans, amp_filt, omega_peak, sys, noise, dt):
        self.trans = trans
        self.pair = (trans.lower, trans.upper)
        self.omega_peak = omega_peak
        self.ac_shift = 0.0
        if trans.nuclear_flips and sys.params.n_nuclei == 1:
            # a driven forbidden line is pushed by the off-resonant
            # allowed transitions; shift of the peak-amplitude drive
            d_d, d_z = ac_zeeman_frequencies(sys.params, amp_filt)
            d0_d, d0_z = forbidden_frequencies(sys.params)
            if trans.label.startswith("double_quantum"):
                self.ac_shift = d_d - d0_d
            else:
                self.ac_shift = d_z - d0_z
        table = _decay_table(sys, trans.upper, noise)
        self.rates, self.dests, self.labels, self.photons = table
        self.gamma = sum(self.rates)
        self.p_step = -math.expm1(-self.gamma * dt) if self.gamma > 0 else 0.0
        self.sqrt_survive = math.sqrt(1.0 - self.p_step)


class _PulsePlan:
    """Shot-independent precomputation for one (segment, system) pair.

    A pulse only drives transitions that involve the occupied level, so
    the plan holds one drive target per level: the line with the
    largest element-weighted spectral overlap, or ``None`` when every
    candidate is too far off resonance to matter.
    """

    __slots__ = ("sys", "noise", "by_level", "n_steps", "dt", "envelope",
                 "phase", "_tables")

    def __init__(self, seg: PulseSegment, sys: SpinSystem, noise: NoiseModel):
        self.sys = sys
        self.noise = noise
        self.n_steps, self.dt = _step_grid(seg, sys, None)
        self.envelope = _envelope_samples(seg, self.n_steps, self.dt)
        self.phase = seg.phase
        self._tables = {}
        self.by_level = [None] * len(sys.levels)
        if not seg.driven:
            return
        _address(seg, sys)          # ambiguous-carrier guard
        amp = seg.amplitude
        if amp is None:
            amp = calibrated_amplitude(seg, sys)
        filt = drive_filter(sys.cavity, seg.frequency - sys.cavity.omega_0)
        drives: dict[int, _LevelDrive] = {}
        for level in range(len(sys.levels)):
            cands = [t for t in sys.transitions if level in (t.lower, t.upper)]
            if not cands:
                continue
            best = max(cands, key=lambda t: _drive_weight(t, seg))
            if _drive_weight(best, seg) < _WEIGHT_FLOOR:
                continue
            drive = drives.get(id(best))
            if drive is None:
                omega_peak = amp * 2.0 * best.matrix_element * filt
                drive = _LevelDrive(best, amp * filt, omega_peak, sys,
                                    noise, self.dt)
                drives[id(best)] = drive
            self.by_level[level] = drive

    def drive_for(self, level: int):
        return self.by_level[level] if 0 <= level < len(self.by_level) else None

    def hazard_table(self, drive: _LevelDrive, detuning: float, z0: float):
        """Deterministic no-jump trajectory from a pure pole.

        Without dynamic noise the conditional evolution between jumps
        does not depend on the shot, so the per-step jump hazard and
        Bloch vector can be tabulated once per (drive, detuning, pole)
        and each shot reduces to one vectorized threshold test.
        """
        key = (id(drive), detuning, z0)
        table = self._tables.get(key)
        if table is None:
            table = self._build_table(drive, detuning, z0)
            self._tables[key] = table
        return table

    def _build_table(self, drive: _LevelDrive, detuning: float, z0: float):
        n_steps, dt = self.n_steps, self.dt
        omega_peak, ac_shift = drive.omega_peak, drive.ac_shift
        p_step, sqrt_survive = drive.p_step, drive.sqrt_survive
        cphi, sphi = math.cos(self.phase), math.sin(self.phase)
        x, y, z = 0.0, 0.0, z0
        hazard = np.empty(n_steps)
        bx = np.empty(n_steps)
        by = np.empty(n_steps)
        bz = np.empty(n_steps)
        for i in range(n_steps):
            env_i = self.envelope[i]
            wx = omega_peak * env_i
            wy = wx * sphi
            wx *= cphi
            wz = detuning - ac_shift * env_i * env_i \
                if ac_shift != 0.0 else detuning
            norm2 = wx * wx + wy * wy + wz * wz
            if norm2 > 1e-28:
                inv = 1.0 / math.sqrt(norm2)
                angle = dt / inv
                ax, ay, az = wx * inv, wy * inv, wz * inv
                c, s = math.cos(angle), math.sin(angle)
                dot = (ax * x + ay * y + az * z) * (1.0 - c)
                x, y, z = (x * c + (ay * z - az * y) * s + ax * dot,
                           y * c + (az * x - ax * z) * s + ay * dot,
                           z * c + (ax * y - ay * x) * s + az * dot)
            p_upper = 0.5 * (1.0 + z)
            hazard[i] = p_upper * p_step
            if p_step > 0.0:
                norm = 1.0 - p_upper * p_step
                x *= sqrt_survive / norm
                y *= sqrt_survive / norm
                z = (p_upper * (1.0 - p_step) - (1.0 - p_upper)) / norm
            bx[i], by[i], bz[i] = x, y, z
        return hazard, bx, by, bz


_PLAN_CACHE: dict = {}


def _pulse_plan(seg: PulseSegment, sys: SpinSystem,
                noise: NoiseModel) -> _PulsePlan:
    key = (id(sys), id(noise), seg.kind, seg.frequency, seg.amplitude,
           seg.duration, seg.phase, seg.edge, seg.rotation)
    plan = _PLAN_CACHE.get(key)
    if plan is None or plan.sys is not sys or plan.noise is not noise:
        plan = _PulsePlan(seg, sys, noise)
        if len(_PLAN_CACHE) > 4096:
            _PLAN_CACHE.clear()
        _PLAN_CACHE[key] = plan
    return plan


def apply_pulse(state: SystemState, seg: PulseSegment, sys: SpinSystem,
                rng, noise: NoiseModel = NO_NOISE) -> list[JumpEvent]:
    """Evolve through one segment, returning the jump events.

    Driven kinds rotate the addressed two-level subspace step by step,
    with decay from the upper level interleaved as jump sampling;
    ``wait``/``detect_window`` precess any surviving coherence in the
    frame of ``seg.frequency`` (0 freezes the phase) while relaxation
    continues.
    """
    events: list[JumpEvent] = []
    if seg.wall_time == 0.0:
        return events
    plan = _pulse_plan(seg, sys, noise)

    drive = None
    if seg.driven:
        if state.bloch is not None and state.pair is not None:
            # keep the coherence only when this carrier re-addresses it
            cont = plan.drive_for(state.pair[0])
            if cont is not None and cont.pair == state.pair:
                drive = cont
            else:
                _collapse(state, rng)
        if state.bloch is None:
            drive = plan.drive_for(state.level)
            if drive is not None:
                z0 = -1.0 if state.level == drive.pair[0] else 1.0
                state.bloch, state.pair = [0.0, 0.0, z0], drive.pair
        pair = state.pair if drive is not None else None
    else:
        pair = state.pair
        if pair is not None and state.bloch is not None:
            x0, y0, z0 = state.bloch
            if x0 * x0 + y0 * y0 < 2.5e-3 and abs(z0) > 0.99:
                # nearly pure population state: resolve it now and let the
                # segment run in the cheap population mode
                _collapse(state, rng)
                pair = None

    if pair is None or state.bloch is None:
        # population mode: plain relaxation across the whole segment
        t0 = state.time
        events += sample_relaxation(state, seg.wall_time, sys, rng, noise)
        _advance_noise(state, noise, state.time - t0, rng)
        return events

    lower, upper = pair
    frame = seg.frequency
    if drive is not None:
        trans_freq = drive.trans.frequency
        rates, dests = drive.rates, drive.dests
        labels, photons = drive.labels, drive.photons
        gamma, p_step = drive.gamma, drive.p_step
        sqrt_survive = drive.sqrt_survive
        omega_peak, ac_shift = drive.omega_peak, drive.ac_shift
    else:
        trans_freq = _pair_frequency(sys, pair)
        rates, dests, labels, photons = _decay_table(sys, upper, noise)
        gamma = sum(rates)
        p_step = -math.expm1(-gamma * plan.dt) if gamma > 0 else 0.0
        sqrt_survive = math.sqrt(1.0 - p_step)
        omega_peak, ac_shift = 0.0, 0.0
    n_steps, dt = plan.n_steps, plan.dt
    envelope = plan.envelope
    t2_decay = math.exp(-dt / noise.t2) if noise.t2 else 1.0
    dynamic_noise = noise.ou_sigma > 0 or noise.telegraph_rate > 0
    uniforms = rng.random(n_steps) if gamma > 0 else None
    x, y, z = (float(state.bloch[0]), float(state.bloch[1]),
               float(state.bloch[2]))
    base_detuning = (frame - trans_freq - state.shot_offset
                     if frame != 0.0 else 0.0)
    detuning = base_detuning

    jumped_out = False
    done = False
    t_local = 0.0
    start = 0
    if (not dynamic_noise and not noise.t2 and drive is not None
            and x == 0.0 and y == 0.0 and (z == 1.0 or z == -1.0)):
        # pure-pole start without dynamic noise: the conditional no-jump
        # trajectory is shot-independent, so the first jump (if any) can
        # be located in one vectorized pass over the tabulated hazard
        hazard, bx, by, bz = plan.hazard_table(drive, detuning, z)
        hits = np.nonzero(uniforms < hazard)[0] if gamma > 0 else ()
        if len(hits) == 0:
            x, y, z = float(bx[-1]), float(by[-1]), float(bz[-1])
            state.time += n_steps * dt
            t_local = seg.wall_time
            done = True
        else:
            i = int(hits[0])
            t_local = (i + 1) * dt
            state.time += t_local
            state.level = _sample_jump(rates, dests, labels, photons,
                                       state.time, rng, events)
            if state.level == lower:
                x, y, z = 0.0, 0.0, -1.0
                start = i + 1
                done = start >= n_steps
            else:
                jumped_out = True
                done = True
    if not done:
        cphi, sphi = math.cos(seg.phase), math.sin(seg.phase)
        for i in range(start, n_steps):
            if dynamic_noise:
                _advance_noise(state, noise, dt, rng)
                if frame != 0.0:
                    detuning = base_detuning - state.ou_value
                    if noise.telegraph_rate > 0:
                        detuning -= state.telegraph_sign * noise.telegraph_shift
            env_i = envelope[i]
            wx = omega_peak * env_i
            wy = wx * sphi
            wx *= cphi
            # AC-Zeeman shift follows the instantaneous drive power
            wz = detuning - ac_shift * env_i * env_i \
                if ac_shift != 0.0 else detuning
            # Rodrigues rotation about (wx, wy, wz) * dt
            norm2 = wx * wx + wy * wy + wz * wz
            if norm2 > 1e-28:
                inv = 1.0 / math.sqrt(norm2)
                angle = dt / inv
                ax, ay, az = wx * inv, wy * inv, wz * inv
                c, s = math.cos(angle), math.sin(angle)
                dot = (ax * x + ay * y + az * z) * (1.0 - c)
                x, y, z = (x * c + (ay * z - az * y) * s + ax * dot,
                           y * c + (az * x - ax * z) * s + ay * dot,
                           z * c + (ax * y - ay * x) * s + az * dot)
            if noise.t2:
                x *= t2_decay
                y *= t2_decay
            t_local += dt
            state.time += dt
            if gamma > 0:
                p_upper = 0.5 * (1.0 + z)
                if uniforms[i] < p_upper * p_step:
                    state.level = _sample_jump(rates, dests, labels, photons,
                                               state.time, rng, events)
                    if state.level == lower:
                        x, y, z = 0.0, 0.0, -1.0
                    else:
                        jumped_out = True
                        break
                else:
                    # conditional no-jump map of amplitude damping, so that
                    # jump timing from a partially excited state stays exact
                    norm = 1.0 - p_upper * p_step
                    x *= sqrt_survive / norm
                    y *= sqrt_survive / norm
                    z = (p_upper * (1.0 - p_step) - (1.0 - p_upper)) / norm

    if jumped_out:
        state.bloch = None
        state.pair = None
        remaining = seg.wall_time - t_local
        if remaining > 0:
            events += sample_relaxation(state, remaining, sys, rng, noise)
        return events
    state.bloch = [x, y, z]
    state.pair = pair
    return events


def _pair_frequency(sys: SpinSystem, pair) -> float:
    lower, upper = pair
    return float(sys.energies[upper] - sys.energies[lower])


def _advance_noise(state: SystemState, noise: NoiseModel, dt: float, rng):
    if noise.ou_sigma > 0:
        decay = math.exp(-dt / noise.ou_tau)
        state.ou_value = (state.ou_value * decay
                          + noise.ou_sigma * math.sqrt(1 - decay * decay)
                          * rng.standard_normal())
    if noise.telegraph_rate > 0:
        if rng.random() < -math.expm1(-noise.telegraph_rate * dt):
            state.telegraph_sign = -state.telegraph_sign


def evolve_free(state: SystemState, duration: float, sys: SpinSystem, rng,
                noise: NoiseModel = NO_NOISE,
                frame_frequency: float = 0.0) -> list[JumpEvent]:
    """Relaxation (and coherent precession, if any) with the drive off."""
    seg = PulseSegment(kind="wait", frequency=frame_frequency, duration=duration)
    return apply_pulse(state, seg, sys, rng, noise)


def trajectory_rng(seed: int, index: int):
    """Counter-based stream: independent per trajectory, reproducible."""
    return np.random.Generator(np.random.Philox(key=[seed, index]))


def run_schedule(state: SystemState, schedule, sys: SpinSystem, rng,
                 noise: NoiseModel = NO_NOISE):
    """Run one shot of a schedule; returns (events, detection windows)."""
    events: list[JumpEvent] = []
    windows: list[tuple[float, float]] = []
    for seg in schedule:
        if seg.kind == "detect_window":
            t0 = state.time
            events += apply_pulse(state, seg, sys, rng, noise)
            windows.append((t0, state.time))
        else:
            events += apply_pulse(state, seg, sys, rng, noise)
    return events, windows


def run_trajectories(n: int, schedule, sys: SpinSystem, seed: int,
                     noise: NoiseModel = NO_NOISE,
                     initial_level: int = 0) -> list[Trajectory]:
    """n independent shots of the schedule; deterministic given the seed."""
    if n < 1:
        raise ValueError("need at least one trajectory")
    out = []
    for index in range(n):
        rng = trajectory_rng(seed, index)
        state = SystemState(level=initial_level)
        state.shot_offset = noise.shot_offset(rng)
        events, windows = run_schedule(state, schedule, sys, rng, noise)
        _collapse(state, rng)
        out.append(Trajectory(events=tuple(events), windows=tuple(windows),
                              final_level=state.level, final_time=state.time))
    return out
