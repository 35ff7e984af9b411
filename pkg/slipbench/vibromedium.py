"""
Synthetic sensor channels: the injected excitation, its propagation through the
deforming fingertip medium, the passive vibrotactile channel and the electrode array.
"""

import logging
import math
from typing import Optional, Sequence

import numpy as np
from scipy import signal

from slipbench.models import (
    ConfigError,
    ContactState,
    ElectrodeConfig,
    InjectionConfig,
    MaterialSpec,
    MethodEnum,
    RigConfig,
    SensorFrame,
    ShapeError,
    SlipEvent,
    TransferProfile,
    WaveformEnum,
)
from slipbench.utils import Stream, derive_rng

logger = logging.getLogger(__name__)

# hexagonal rows of 3-4-5-4-3 electrodes, index 9 sits at the patch center
ELECTRODE_ROWS = [3, 4, 5, 4, 3]
CENTER_ELECTRODE = 9

ELECTRODE_SUBSETS: dict[MethodEnum, list[int]] = {
    MethodEnum.E19: list(range(19)),
    MethodEnum.E10: list(range(0, 19, 2)),
    MethodEnum.E4: [0, 6, 12, 18],
    MethodEnum.E1: [CENTER_ELECTRODE],
}


def electrode_layout(pitch_mm: float = 2.2) -> np.ndarray:
    """
    Positions of the 19 electrodes [mm], shape (19, 2)
    """
    points = []
    row_height = pitch_mm * math.sqrt(3) / 2
    for i, count in enumerate(ELECTRODE_ROWS):
        y = (i - 2) * row_height
        for j in range(count):
            points.append(((j - (count - 1) / 2) * pitch_mm, y))
    return np.array(points)


def frame_samples(rig: RigConfig, cfg: InjectionConfig) -> int:
    return int(round(rig.sample_window_T * cfg.sample_rate))


def _check_band(cfg: InjectionConfig) -> None:
    if cfg.band_hi > cfg.sample_rate / 2:
        raise ConfigError(f"band_hi {cfg.band_hi} Hz above Nyquist {cfg.sample_rate / 2} Hz")


def band_limit(x: np.ndarray, lo: float, hi: float, sample_rate: float) -> np.ndarray:
    spectrum = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(len(x), d=1.0 / sample_rate)
    spectrum[(freqs < lo) | (freqs > hi)] = 0
    return np.fft.irfft(spectrum, n=len(x))


def gen_injection(cfg: InjectionConfig, n: int, seed) -> np.ndarray:
    """
    Generates the injected excitation
    :param cfg: injection configuration
    :param n: number of samples
    :param seed: integer seed or numpy Generator
    :return: excitation waveform of n samples
    """
    _check_band(cfg)
    if n <= 0:
        raise ConfigError(f"Sample count must be positive, got {n}")
    if not cfg.enabled:
        return np.zeros(n)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if cfg.waveform == WaveformEnum.SAWTOOTH:
        t = np.arange(n) / cfg.sample_rate
        phase = rng.uniform(0, 2 * np.pi)
        # unit standard deviation, like the gaussian excitation
        raw = math.sqrt(3) * signal.sawtooth(2 * np.pi * cfg.sawtooth_f0 * t + phase)
    else:
        raw = rng.standard_normal(n)
    return cfg.amplitude * band_limit(raw, cfg.band_lo, cfg.band_hi, cfg.sample_rate)


def propagate(
    excitation: np.ndarray,
    s: float,
    f_n: float,
    profile: TransferProfile,
    seed=None,
    sample_rate: float = 2200.0,
    damping_scale: float = 1.0,
) -> np.ndarray:
    """
    Shapes the excitation with the medium gain for the current deformation state
    :param excitation: injected waveform of one window
    :param s: stick ratio in [0, 1]
    :param f_n: normal force [kPa]
    :param profile: transfer profile
    :param seed: seed of the measurement noise
    :param sample_rate: sampling frequency [Hz]
    :param damping_scale: material multiplier of the normal force damping
    :return: received waveform
    """
    if not 0 <= s <= 1:
        raise ValueError(f"Stick ratio must be in [0, 1], got {s}")
    n = len(excitation)
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    shaped = np.fft.irfft(np.fft.rfft(excitation) * profile.gain(freqs, s, f_n, damping_scale), n=n)
    if profile.noise_std > 0:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        shaped = shaped + rng.normal(0.0, profile.noise_std, n)
    return shaped


def slip_bursts(
    events: Sequence[SlipEvent],
    f_n: float,
    n: int,
    profile: TransferProfile,
    sample_rate: float = 2200.0,
) -> np.ndarray:
    """
    Damped oscillations emitted by slip events, one per event, superposed
    """
    duration = n / sample_rate
    t = np.arange(n) / sample_rate
    out = np.zeros(n)
    for event in events:
        if event.time < 0 or event.time >= duration:
            raise ShapeError(f"Slip event at {event.time} s outside the {duration} s window")
        if event.magnitude <= 0:
            continue
        dt = t - event.time
        active = dt >= 0
        amplitude = profile.burst_gain * event.magnitude * f_n
        out[active] += (
            amplitude
            * np.exp(-dt[active] / profile.burst_decay_s)
            * np.sin(2 * np.pi * profile.burst_freq_hz * dt[active])
        )
    return out


def vibrotactile_baseline(
    events: Sequence[SlipEvent],
    f_n: float,
    n: int,
    profile: TransferProfile,
    seed=None,
    sample_rate: float = 2200.0,
) -> np.ndarray:
    """
    Passive AC pressure channel with no injection: noise floor plus slip bursts
    """
    out = slip_bursts(events, f_n, n, profile, sample_rate)
    if profile.noise_std > 0:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        out = out + rng.normal(0.0, profile.noise_std, n)
    return out


def pressure_field(
    points: np.ndarray, f_n: float, s: float, cfg: ElectrodeConfig
) -> np.ndarray:
    """
    Hertzian normal pressure sampled at the given points, shifted toward the trailing edge
    as the stick region shrinks
    """
    if f_n <= 0:
        return np.zeros(len(points))
    radius = cfg.patch_radius_ref_mm * (f_n / cfg.fn_reference_kpa) ** (1 / 3)
    p0 = 1.5 * f_n
    skew = max(0.0, (1.0 - s) - cfg.skin_deadzone) / (1.0 - cfg.skin_deadzone)
    shift = -cfg.shear_skew * radius * skew
    r2 = (points[:, 0] - shift) ** 2 + points[:, 1] ** 2
    return p0 * np.sqrt(np.clip(1.0 - r2 / radius**2, 0.0, None))


def electrode_array(
    state: ContactState, cfg: ElectrodeConfig, seed=None, layout: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    Samples the 19 electrodes for a contact state
    :param state: contact state
    :param cfg: electrode configuration
    :param seed: seed of the electrode noise
    :param layout: electrode positions, defaults to the hexagonal layout
    :return: 19 non negative pressures [kPa]
    """
    points = electrode_layout(cfg.pitch_mm) if layout is None else layout
    values = pressure_field(points, state.f_n, state.stick_ratio_true, cfg)
    if cfg.noise_kpa > 0:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        values = values + rng.normal(0.0, cfg.noise_kpa, len(values))
    return np.clip(values, 0.0, None)


def slip_events(
    state: ContactState,
    previous: Optional[ContactState],
    rig: RigConfig,
    rng: np.random.Generator,
) -> list[SlipEvent]:
    """
    Slip events of a step: micro slip at the shrinking stick boundary and gross slip
    """
    events = []
    if previous is None:
        return events
    micro = rig.micro_slip_scale * (previous.stick_ratio_true - state.stick_ratio_true)
    if micro > 0:
        events.append(SlipEvent(time=float(rng.uniform(0, rig.sample_window_T)), magnitude=micro))
    if state.slipped:
        jump = state.y_slip - previous.y_slip
        if jump > 0:
            events.append(SlipEvent(time=float(rng.uniform(0, rig.sample_window_T)), magnitude=jump))
    return events


def synthesize_frame(
    state: ContactState,
    previous: Optional[ContactState],
    rig: RigConfig,
    material: MaterialSpec,
    injection: InjectionConfig,
    profile: TransferProfile,
    electrodes: ElectrodeConfig,
    seed: int,
    trial_id: int,
    injected: bool,
) -> SensorFrame:
    """
    Builds the sensor frame observed during the step ending in state.
    Random streams depend only on (seed, trial, stream, step), so the injected and
    passive renditions of a trial share their electrodes and slip events.
    """
    n = frame_samples(rig, injection)
    step = state.step
    events = slip_events(state, previous, rig, derive_rng(seed, trial_id, Stream.MICRO_SLIP, step))
    noise_rng = derive_rng(seed, trial_id, Stream.MEDIUM_NOISE, step)
    if injected:
        excitation = gen_injection(injection, n, derive_rng(seed, trial_id, Stream.INJECTION, step))
        p_ac = propagate(
            excitation,
            state.stick_ratio_true,
            state.f_n,
            profile,
            noise_rng,
            injection.sample_rate,
            material.damping_scale,
        )
        p_ac = p_ac + slip_bursts(events, state.f_n, n, profile, injection.sample_rate)
    else:
        p_ac = vibrotactile_baseline(
            events, state.f_n, n, profile, noise_rng, injection.sample_rate
        )
    values = electrode_array(state, electrodes, derive_rng(seed, trial_id, Stream.ELECTRODES, step))
    return SensorFrame(
        p_ac=p_ac, p_dc=float(values.mean()), electrodes=values, frame_index=step
    )
