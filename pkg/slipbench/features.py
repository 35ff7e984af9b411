"""
Feature extraction and pseudo stick ratio labeling
"""

import logging
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.signal import windows

from slipbench.contact import expected_slip_step, randomize_f_n, run_rig
from slipbench.models import (
    ConfigError,
    Dataset,
    ExperimentConfig,
    FnScheduleEnum,
    LabeledSample,
    LabelFormEnum,
    LabelingError,
    MethodEnum,
    RigConfig,
    SensorFrame,
    ShapeError,
    SpectrumFeature,
    TrialRecord,
    WindowSpec,
)
from slipbench.utils import Stream, derive_rng, read_csv, read_json, write_csv, write_json
from slipbench.vibromedium import ELECTRODE_SUBSETS, synthesize_frame

logger = logging.getLogger(__name__)

META_COLUMNS = ["trial_id", "material", "f_n", "step", "label_s"]


def window_samples(spec: WindowSpec, sample_rate: float) -> int:
    n = spec.window_T * sample_rate
    if abs(n - round(n)) > 1e-9:
        raise ConfigError(f"Window of {spec.window_T} s is not a whole number of samples at {sample_rate} Hz")
    return int(round(n))


def spectrum(
    p_ac: np.ndarray, spec: WindowSpec, sample_rate: float = 2200.0, frame_index: int = 0
) -> SpectrumFeature:
    """
    One-sided amplitude spectrum of the last window of a waveform
    :param p_ac: AC pressure waveform
    :param spec: window specification
    :param sample_rate: sampling frequency [Hz]
    :param frame_index: index of the frame ending the window
    :return: spectrum restricted to [band_lo, band_hi]
    """
    n = window_samples(spec, sample_rate)
    p_ac = np.asarray(p_ac, dtype=float)
    if len(p_ac) < n:
        raise ShapeError(f"Waveform of {len(p_ac)} samples shorter than the {n} sample window")
    x = p_ac[-n:]
    taper = windows.tukey(n, spec.taper)
    X = np.fft.rfft((x - x.mean()) * taper)
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    amplitude = np.abs(X) * 2.0 / taper.sum()
    amplitude[0] /= 2
    if n % 2 == 0:
        amplitude[-1] /= 2
    keep = (freqs >= spec.band_lo) & (freqs <= spec.band_hi)
    return SpectrumFeature(
        bins=amplitude[keep],
        freqs=freqs[keep],
        bin_width=sample_rate / n,
        frame_index=frame_index,
        taper_sum=float(taper.sum()),
        n_samples=n,
    )


def band_features(feature: SpectrumFeature, spec: WindowSpec) -> np.ndarray:
    """
    Averages spectrum bins into band_width-wide bands, the last band closing at band_hi
    """
    n_bands = int(round((spec.band_hi - spec.band_lo) / spec.band_width))
    if n_bands < 1:
        raise ConfigError(f"Band width {spec.band_width} Hz wider than the feature band")
    index = np.floor((feature.freqs - spec.band_lo) / spec.band_width).astype(int)
    index = np.clip(index, 0, n_bands - 1)
    sums = np.bincount(index, weights=feature.bins, minlength=n_bands)
    counts = np.bincount(index, minlength=n_bands)
    return np.divide(sums, counts, out=np.zeros(n_bands), where=counts > 0)


def time_average_electrodes(frames: Sequence[SensorFrame], subset) -> np.ndarray:
    """
    Per-electrode mean over the frames of a window
    :param frames: frames of the window
    :param subset: method (E19, E10, E4, E1), electrode count or explicit index list
    :return: averaged electrode vector restricted to the subset
    """
    if len(frames) == 0:
        raise ShapeError("Cannot average an empty frame sequence")
    index = electrode_subset(subset)
    return np.mean([frame.electrodes for frame in frames], axis=0)[index]


def electrode_subset(subset) -> list[int]:
    if isinstance(subset, MethodEnum):
        if subset not in ELECTRODE_SUBSETS:
            raise ConfigError(f"Method {subset} has no electrode subset")
        return ELECTRODE_SUBSETS[subset]
    if isinstance(subset, int):
        try:
            return ELECTRODE_SUBSETS[MethodEnum(f"E{subset}")]
        except ValueError:
            raise ConfigError(f"No electrode subset of size {subset}")
    return list(subset)


def detect_gross_slip(y_trace: Sequence[float], rig: RigConfig) -> Optional[int]:
    """
    First step whose displacement exceeds the gross slip rate, None if the object never slid
    """
    threshold = rig.gross_slip_disp * rig.sample_window_T / rig.gross_slip_window
    y = np.asarray(y_trace, dtype=float)
    crossing = np.nonzero(np.diff(y) > threshold)[0]
    if len(crossing) == 0:
        return None
    return int(crossing[0] + 1)


def label_pseudo_stick_ratio(
    f_t: float,
    f_t_slip: float,
    form: LabelFormEnum = LabelFormEnum.LINEAR,
    exponent: float = 1.0,
) -> float:
    """
    Pseudo stick ratio interpolated between full stick (f_t = 0) and gross slip
    :param f_t: tangential force [N]
    :param f_t_slip: tangential force at gross slip [N]
    :param form: linear interpolation or its power
    :param exponent: exponent of the power form
    :return: label in [0, 1]
    """
    if f_t_slip <= 0:
        raise LabelingError(f"Tangential force at slip must be positive, got {f_t_slip}")
    s = float(np.clip(1.0 - f_t / f_t_slip, 0.0, 1.0))
    if form == LabelFormEnum.POWER:
        s = s**exponent
    return s


def simulate_trial(config: ExperimentConfig, trial_id: int, material_name: str) -> TrialRecord:
    """
    Runs one data-collection trial and synthesizes its sensor frames.
    Frame 0 is the rest frame, frame i follows step i.
    """
    material = config.material(material_name)
    f_n = randomize_f_n(config.rig, derive_rng(config.seed, trial_id, Stream.F_N))
    states = run_rig(
        f_n,
        config.rig,
        material,
        rng=derive_rng(config.seed, trial_id, Stream.CONTACT),
        fn_rng=derive_rng(config.seed, trial_id, Stream.F_N, 1),
    )
    frames = {}
    for injected in (True, False):
        frames[injected] = [
            synthesize_frame(
                state,
                states[i - 1] if i > 0 else None,
                config.rig,
                material,
                config.injection,
                config.profile,
                config.electrodes,
                config.seed,
                trial_id,
                injected,
            )
            for i, state in enumerate(states)
        ]
    slip_step = detect_gross_slip([s.y for s in states], config.rig)
    if config.rig.fn_schedule == FnScheduleEnum.PER_TRIAL:
        logger.debug(
            f"Trial {trial_id} ({material_name}, {f_n} kPa): gross slip detected at step {slip_step}, "
            f"static friction breaks at step {expected_slip_step(f_n, config.rig, material)}"
        )
    return TrialRecord(
        trial_id=trial_id,
        material=material_name,
        f_n=f_n,
        states=states,
        injected_frames=frames[True],
        passive_frames=frames[False],
        slip_step=slip_step,
        f_t_slip=states[slip_step].f_t_peak if slip_step is not None else None,
    )


def _window_frames(frames: list[SensorFrame], end: int, count: int) -> list[SensorFrame]:
    # early windows repeat the rest frame
    start = end - count + 1
    return [frames[max(i, 0)] for i in range(start, end + 1)]


def frames_feature(
    frames: list[SensorFrame],
    end: int,
    method: MethodEnum,
    spec: WindowSpec,
    rig: RigConfig,
    sample_rate: float,
) -> np.ndarray:
    """
    Feature of the window ending at frame end, for the given method
    """
    count = max(int(round(spec.window_T / rig.sample_window_T)), 1)
    window = _window_frames(frames, end, count)
    if method in (MethodEnum.INJECTION, MethodEnum.VIBROTACTILE):
        waveform = np.concatenate([f.p_ac for f in window])
        return band_features(spectrum(waveform, spec, sample_rate, end), spec)
    return time_average_electrodes(window, method)


def feature_dim(method: MethodEnum, spec: WindowSpec) -> int:
    if method in (MethodEnum.INJECTION, MethodEnum.VIBROTACTILE):
        return int(round((spec.band_hi - spec.band_lo) / spec.band_width))
    return len(electrode_subset(method))


def sample_feature(
    record: TrialRecord,
    end: int,
    method: MethodEnum,
    spec: WindowSpec,
    rig: RigConfig,
    sample_rate: float,
) -> np.ndarray:
    frames = record.injected_frames if method.uses_injection else record.passive_frames
    return frames_feature(frames, end, method, spec, rig, sample_rate)


def trial_samples(
    record: TrialRecord,
    method: MethodEnum,
    spec: WindowSpec,
    config: ExperimentConfig,
) -> list[LabeledSample]:
    """
    Labeled samples of one trial, one per hop, labels at the window's terminal interval
    """
    if record.f_t_slip is None:
        raise LabelingError(f"Trial {record.trial_id} never reached gross slip")
    rig = config.rig
    if abs(spec.label_interval - rig.sample_window_T) > 1e-9:
        raise ConfigError(
            f"Label interval {spec.label_interval} s must match the rig step {rig.sample_window_T} s"
        )
    hop = max(int(round(spec.hop / rig.sample_window_T)), 1)
    samples = []
    for end in range(hop, len(record.states), hop):
        state = record.states[end]
        samples.append(
            LabeledSample(
                feature=sample_feature(record, end, method, spec, rig, config.injection.sample_rate),
                label_s=label_pseudo_stick_ratio(
                    state.f_t, record.f_t_slip, config.label_form, config.label_exponent
                ),
                material=record.material,
                f_n=state.f_n,
                trial_id=record.trial_id,
                step=end,
            )
        )
    return samples


def build_dataset(
    trials: Iterable[TrialRecord],
    method: MethodEnum,
    spec: WindowSpec,
    config: ExperimentConfig,
) -> list[LabeledSample]:
    samples = []
    for record in trials:
        if record.f_t_slip is None:
            logger.warning(
                f"Trial {record.trial_id} ({record.material}, f_n={record.f_n} kPa) "
                "never reached gross slip, skipped"
            )
            continue
        samples.extend(trial_samples(record, method, spec, config))
    return samples


def feature_columns(dim: int) -> list[str]:
    return [f"f_{i}" for i in range(dim)]


def write_dataset(path: Path, samples: list[LabeledSample], sidecar: dict) -> None:
    """
    Writes a dataset CSV and its JSON sidecar (same name, .json suffix)
    """
    dim = len(np.atleast_1d(samples[0].feature)) if samples else 0
    rows = (
        [s.trial_id, s.material, s.f_n, s.step, s.label_s, *np.atleast_1d(s.feature)]
        for s in samples
    )
    write_csv(path, META_COLUMNS + feature_columns(dim), rows)
    write_json(path.with_suffix(".json"), {**sidecar, "n_samples": len(samples), "n_features": dim})


def read_dataset(path: Path) -> Dataset:
    header, rows = read_csv(path)
    if header[: len(META_COLUMNS)] != META_COLUMNS:
        raise ShapeError(f"Unexpected dataset columns in {path}: {header[:len(META_COLUMNS)]}")
    method = None
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        method = read_json(sidecar).get("method")
    dim = len(header) - len(META_COLUMNS)
    return Dataset(
        X=np.array([[float(v) for v in r[len(META_COLUMNS):]] for r in rows]).reshape(len(rows), dim),
        y=np.array([float(r[4]) for r in rows]),
        trial_ids=np.array([int(r[0]) for r in rows], dtype=int),
        materials=[r[1] for r in rows],
        f_n=np.array([float(r[2]) for r in rows]),
        steps=np.array([int(r[3]) for r in rows], dtype=int),
        method=method,
    )


def spectrum_by_stick_ratio(dataset: Dataset, spec: WindowSpec, bins: int = 5) -> list[list[float]]:
    """
    Average band spectrum per stick ratio bin, rows of (s_lo, s_hi, band_center, magnitude)
    """
    centers = spec.band_lo + spec.band_width * (np.arange(dataset.n_features) + 0.5)
    edges = np.linspace(0.0, 1.0, bins + 1)
    rows = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mask = (dataset.y >= lo) & ((dataset.y < hi) | (hi == 1.0))
        if not mask.any():
            continue
        mean = dataset.X[mask].mean(axis=0)
        rows.extend([[float(lo), float(hi), float(c), float(m)] for c, m in zip(centers, mean)])
    return rows
