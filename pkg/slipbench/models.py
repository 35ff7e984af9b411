import math
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class SlipbenchError(Exception):
    """
    Base class of every error raised on purpose by slipbench
    """

    def details(self) -> dict:
        return {}


class ConfigError(SlipbenchError):
    pass


class ContactError(SlipbenchError):
    pass


class LabelingError(SlipbenchError):
    pass


class ShapeError(SlipbenchError):
    pass


class DegenerateError(SlipbenchError):
    pass


class ArtifactError(SlipbenchError):
    """
    Raised when run artifacts are missing, incomplete or stale
    """

    def __init__(self, message: str, missing: Optional[list[str]] = None):
        super().__init__(message)
        self.missing = missing or []

    def details(self) -> dict:
        return {"missing": self.missing}


class MethodEnum(Enum):
    INJECTION = "injection"
    VIBROTACTILE = "vibrotactile"
    E19 = "E19"
    E10 = "E10"
    E4 = "E4"
    E1 = "E1"

    def __str__(self) -> str:
        return self.value

    @property
    def electrode_count(self) -> Optional[int]:
        if self.value.startswith("E"):
            return int(self.value[1:])
        return None

    @property
    def uses_injection(self) -> bool:
        return self == MethodEnum.INJECTION


class KernelEnum(Enum):
    LINEAR = "linear"
    RBF = "rbf"

    def __str__(self) -> str:
        return self.value


class FnScheduleEnum(Enum):
    PER_TRIAL = "per_trial"
    PER_STEP = "per_step"

    def __str__(self) -> str:
        return self.value


class WaveformEnum(Enum):
    GAUSSIAN = "gaussian"
    SAWTOOTH = "sawtooth"

    def __str__(self) -> str:
        return self.value


class LabelFormEnum(Enum):
    LINEAR = "linear"
    POWER = "power"

    def __str__(self) -> str:
        return self.value


class MaterialSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = Field(min_length=1)
    mu: float = Field(gt=0, description="Static friction coefficient")
    shear_stiffness: float = Field(gt=0, description="Tangential stiffness [N/mm]")
    damping_scale: float = Field(gt=0, description="Spectral damping multiplier")


# five printed specimens sharing the same 150 mm curvature
MATERIAL_PRESETS: dict[str, MaterialSpec] = {
    m.name: m
    for m in [
        MaterialSpec(name="pla", mu=0.50, shear_stiffness=5.0, damping_scale=1.0),
        MaterialSpec(name="abs", mu=0.52, shear_stiffness=4.5, damping_scale=1.1),
        MaterialSpec(name="petg", mu=0.55, shear_stiffness=4.0, damping_scale=0.9),
        MaterialSpec(name="nylon", mu=0.58, shear_stiffness=5.5, damping_scale=1.2),
        MaterialSpec(name="tpu", mu=0.60, shear_stiffness=3.0, damping_scale=1.4),
    ]
}


class RigConfig(BaseModel):
    spring_constant: float = Field(default=0.082, gt=0, description="[N/mm]")
    actuator_step: float = Field(default=23.0 / 450, ge=0, description="[mm/step]")
    total_steps: int = Field(default=450, ge=1)
    f_n_grid_lo: float = Field(default=1.1, description="[kPa]")
    f_n_grid_hi: float = Field(default=5.9, description="[kPa]")
    f_n_grid_step: float = Field(default=0.4, gt=0, description="[kPa]")
    gross_slip_disp: float = Field(default=0.02, gt=0, description="[mm]")
    gross_slip_window: float = Field(default=0.5, gt=0, description="[s]")
    sample_window_T: float = Field(default=0.5, gt=0, description="Step duration [s]")
    kpa_to_newton: float = Field(default=0.5, gt=0, description="[N/kPa]")
    kinetic_ratio: float = Field(default=0.9, gt=0, le=1)
    slip_jump: float = Field(default=1.25, gt=0, description="Median gross slip jump [mm]")
    slip_jump_sigma: float = Field(default=0.08, ge=0, description="Log-normal spread of the jump")
    micro_slip_scale: float = Field(default=0.5, ge=0, description="[mm]")
    fn_schedule: FnScheduleEnum = FnScheduleEnum.PER_TRIAL

    @property
    def travel(self) -> float:
        return self.actuator_step * self.total_steps

    @property
    def f_n_grid(self) -> list[float]:
        if self.f_n_grid_hi < self.f_n_grid_lo:
            return []
        count = int(math.floor((self.f_n_grid_hi - self.f_n_grid_lo) / self.f_n_grid_step + 1e-9))
        return [round(self.f_n_grid_lo + i * self.f_n_grid_step, 6) for i in range(count + 1)]


class ContactState(BaseModel):
    model_config = ConfigDict(frozen=True)

    f_n: float = Field(ge=0, description="Normal force as contact pressure [kPa]")
    f_t: float = Field(ge=0, description="Tangential force [N]")
    stick_ratio_true: float = Field(ge=0, le=1)
    y: float = Field(description="Object position [mm]")
    t: float = Field(default=0.0, description="[s]")
    step: int = 0
    x_act: float = Field(default=0.0, description="Actuator travel [mm]")
    y_slip: float = Field(default=0.0, description="Accumulated sliding [mm]")
    f_t_peak: float = Field(default=0.0, ge=0, description="Largest f_t within the step [N]")
    slipped: bool = False


class InjectionConfig(BaseModel):
    intensity_db: float = 0.0
    band_lo: float = Field(default=10.0, ge=0)
    band_hi: float = Field(default=1100.0, gt=0)
    sample_rate: float = Field(default=2200.0, gt=0)
    enabled: bool = True
    waveform: WaveformEnum = WaveformEnum.GAUSSIAN
    sawtooth_f0: float = Field(default=50.0, gt=0, description="[Hz]")

    @model_validator(mode="after")
    def check_band(self) -> "InjectionConfig":
        if self.band_hi > self.sample_rate / 2:
            raise ValueError(f"band_hi {self.band_hi} Hz above Nyquist {self.sample_rate / 2} Hz")
        if self.band_lo >= self.band_hi:
            raise ValueError("band_lo must be below band_hi")
        return self

    @property
    def amplitude(self) -> float:
        return 10 ** (self.intensity_db / 20)


class TransferProfile(BaseModel):
    base_rolloff_hz: float = Field(default=400.0, gt=0)
    alpha_peak: float = Field(default=0.8, ge=0, le=1)
    alpha_center_hz: float = Field(default=200.0, gt=0)
    alpha_log_width: float = Field(default=0.6, gt=0)
    alpha_floor: float = Field(default=0.05, ge=0, le=1)
    fn_damping: float = Field(default=0.08, ge=0)
    fn_reference_kpa: float = Field(default=6.0, gt=0)
    noise_floor_db: float = -40.0
    noise_enabled: bool = True
    burst_gain: float = Field(default=0.05, ge=0, description="Burst amplitude per mm and kPa")
    burst_freq_hz: float = Field(default=250.0, gt=0)
    burst_decay_s: float = Field(default=0.02, gt=0)

    @property
    def noise_std(self) -> float:
        return 10 ** (self.noise_floor_db / 20) if self.noise_enabled else 0.0

    def base_gain(self, freqs: np.ndarray) -> np.ndarray:
        return 1.0 / np.sqrt(1.0 + (np.asarray(freqs) / self.base_rolloff_hz) ** 2)

    def slip_sensitivity(self, freqs: np.ndarray) -> np.ndarray:
        freqs = np.maximum(np.asarray(freqs, dtype=float), 1e-6)
        bump = np.exp(-0.5 * (np.log(freqs / self.alpha_center_hz) / self.alpha_log_width) ** 2)
        return self.alpha_floor + (self.alpha_peak - self.alpha_floor) * bump

    def gain(
        self, freqs: np.ndarray, s: float, f_n: float, damping_scale: float = 1.0
    ) -> np.ndarray:
        """
        Effective gain g(f) of the medium for a deformation state
        :param freqs: frequencies [Hz]
        :param s: stick ratio
        :param f_n: normal force [kPa]
        :param damping_scale: material multiplier of the normal force damping
        :return: per-frequency gain, never negative
        """
        damping = math.exp(-self.fn_damping * damping_scale * f_n / self.fn_reference_kpa)
        shaping = 1.0 - self.slip_sensitivity(freqs) * (1.0 - s)
        return self.base_gain(freqs) * shaping * damping


class ElectrodeConfig(BaseModel):
    pitch_mm: float = Field(default=2.2, gt=0)
    patch_radius_ref_mm: float = Field(default=5.0, gt=0)
    fn_reference_kpa: float = Field(default=6.0, gt=0)
    shear_skew: float = Field(default=0.3, ge=0, lt=1)
    skin_deadzone: float = Field(default=0.2, ge=0, lt=1)
    noise_kpa: float = Field(default=0.02, ge=0)


class SlipEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    time: float = Field(ge=0, description="Onset inside the window [s]")
    magnitude: float = Field(ge=0, description="Sliding distance [mm]")


class SensorFrame(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    p_ac: np.ndarray
    p_dc: float
    electrodes: np.ndarray
    frame_index: int


class WindowSpec(BaseModel):
    window_T: float = Field(default=1.0, gt=0, description="Feature window [s]")
    label_interval: float = Field(default=0.5, gt=0, description="[s]")
    hop: float = Field(default=0.5, gt=0, description="[s]")
    band_lo: float = Field(default=10.0, ge=0)
    band_hi: float = Field(default=1100.0, gt=0)
    band_width: float = Field(default=10.0, gt=0, description="Feature band width [Hz]")
    taper: float = Field(default=0.1, ge=0, le=1, description="Tukey taper fraction")


class SpectrumFeature(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    bins: np.ndarray
    freqs: np.ndarray
    bin_width: float
    frame_index: int = 0
    taper_sum: float
    n_samples: int


class LabeledSample(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    feature: np.ndarray
    label_s: float = Field(ge=0, le=1)
    material: str
    f_n: float
    trial_id: int
    step: int


class SvrParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    kernel: KernelEnum = KernelEnum.RBF
    c: float = Field(default=1.0, gt=0)
    epsilon: float = Field(default=0.01, ge=0)
    gamma: Optional[float] = Field(
        default=1.0, gt=0, description="RBF width as a multiple of 1/n_features"
    )

    @model_validator(mode="after")
    def check_gamma(self) -> "SvrParams":
        if self.kernel == KernelEnum.RBF and self.gamma is None:
            raise ValueError("rbf kernel requires gamma")
        return self

    def label(self) -> str:
        if self.kernel == KernelEnum.RBF:
            return f"rbf(gamma={self.gamma:g}/d) C={self.c:g} eps={self.epsilon:g}"
        return f"linear C={self.c:g} eps={self.epsilon:g}"


def default_grid() -> list[SvrParams]:
    grid = []
    for c in [0.1, 1, 10, 100]:
        for epsilon in [0.001, 0.01, 0.05]:
            grid.append(SvrParams(kernel=KernelEnum.LINEAR, c=c, epsilon=epsilon, gamma=None))
            for gamma in [0.01, 0.1, 1]:
                grid.append(SvrParams(kernel=KernelEnum.RBF, c=c, epsilon=epsilon, gamma=gamma))
    return grid


class SvrModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    support_vectors: np.ndarray
    dual_coefs: np.ndarray
    bias: float
    params: SvrParams
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    kept_dims: np.ndarray
    n_features_in: int
    config_hash: Optional[str] = None

    @property
    def gamma_eff(self) -> float:
        return (self.params.gamma or 1.0) / max(len(self.kept_dims), 1)


class MetricsReport(BaseModel):
    method: Optional[str] = None
    rmse: float = Field(ge=0)
    worst10_rmse: float = Field(ge=0)
    per_material_rmse: dict[str, float] = {}
    t_stat: Optional[float] = None
    p_value: Optional[float] = Field(default=None, ge=0, le=1)
    n_test: int = Field(ge=0)
    test_kind: str = "welch-unpaired"

    @model_validator(mode="after")
    def check_order(self) -> "MetricsReport":
        if self.worst10_rmse < self.rmse - 1e-12:
            raise ValueError("worst10_rmse below rmse")
        return self


class ControllerConfig(BaseModel):
    k: float = Field(default=1.0, ge=0, description="Gain [kPa per unit error], 0 = no action")
    s_d: float = Field(default=0.3, gt=0, lt=1)
    f_n_init: float = Field(default=2.3, gt=0, description="[kPa]")
    f_n_min: float = Field(default=1.1, ge=0, description="Lowest commanded grip [kPa]")
    f_n_safety: float = Field(default=6.0, gt=0, description="[kPa]")
    y_fail: float = Field(default=1.5, gt=0, description="[mm]")
    max_steps: int = Field(default=450, ge=1)

    @model_validator(mode="after")
    def check_limits(self) -> "ControllerConfig":
        if self.f_n_safety <= self.f_n_init:
            raise ValueError("f_n_safety must be above f_n_init")
        if self.f_n_min > self.f_n_init:
            raise ValueError("f_n_min must not exceed f_n_init")
        return self


class ScoreWeights(BaseModel):
    w1: float = Field(default=0.1, gt=0)
    w2: float = Field(default=10.0, gt=0)
    w3: float = Field(default=1.0, gt=0)
    eps_den: float = Field(default=1e-3, gt=0)


class TrialOutcome(BaseModel):
    success: bool
    final_y: float
    final_f_n: float
    steps: int = Field(ge=0)
    s_trace: list[float] = []
    s_true_trace: list[float] = []
    f_n_trace: list[float] = []
    y_trace: list[float] = []
    score: Optional[float] = None
    seed: Optional[int] = None
    material: Optional[str] = None
    method: Optional[str] = None


class ExperimentConfig(BaseModel):
    seed: int = 0
    materials: list[str] = Field(default_factory=lambda: list(MATERIAL_PRESETS))
    material_presets: dict[str, MaterialSpec] = Field(
        default_factory=lambda: dict(MATERIAL_PRESETS)
    )
    trials_per_material: int = Field(default=100, ge=1)
    methods: list[MethodEnum] = Field(default_factory=lambda: list(MethodEnum), min_length=1)
    window: WindowSpec = Field(default_factory=WindowSpec)
    grid: list[SvrParams] = Field(default_factory=default_grid, min_length=1)
    folds: int = Field(default=3, ge=2)
    max_train_samples: int = Field(default=600, ge=2)
    test_fraction: float = Field(default=0.1, gt=0, lt=1)
    controller: ControllerConfig = Field(default_factory=ControllerConfig)
    weights: ScoreWeights = Field(default_factory=ScoreWeights)
    stabilization_trials: int = Field(default=10, ge=1)
    rig: RigConfig = Field(default_factory=RigConfig)
    injection: InjectionConfig = Field(default_factory=InjectionConfig)
    profile: TransferProfile = Field(default_factory=TransferProfile)
    electrodes: ElectrodeConfig = Field(default_factory=ElectrodeConfig)
    intensity_sweep_db: list[float] = []
    label_form: LabelFormEnum = LabelFormEnum.LINEAR
    label_exponent: float = Field(default=1.0, gt=0)
    output_dir: Path = Path("runs/default")

    @field_validator("methods")
    @classmethod
    def unique_methods(cls, methods: list[MethodEnum]) -> list[MethodEnum]:
        return list(dict.fromkeys(methods))

    @model_validator(mode="after")
    def check_materials(self) -> "ExperimentConfig":
        unknown = [m for m in self.materials if m not in self.material_presets]
        if unknown:
            raise ValueError(f"Unknown materials: {unknown}")
        if not self.materials:
            raise ValueError("At least one material is required")
        return self

    def material(self, name: str) -> MaterialSpec:
        return self.material_presets[name]


class RunManifest(BaseModel):
    config_hash: str
    tool_version: str
    created_at: str
    updated_at: str
    config: dict = {}
    files: dict[str, str] = Field(default_factory=dict, description="Relative path -> sha256")


class Dataset(BaseModel):
    """
    Column view of a list of LabeledSample, the unit models are trained on
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    X: np.ndarray
    y: np.ndarray
    trial_ids: np.ndarray
    materials: list[str]
    f_n: np.ndarray
    steps: np.ndarray
    method: Optional[str] = None

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n_features(self) -> int:
        return self.X.shape[1] if self.X.ndim == 2 else 0

    def subset(self, index: np.ndarray) -> "Dataset":
        index = np.asarray(index, dtype=int)
        return Dataset(
            X=self.X[index],
            y=self.y[index],
            trial_ids=self.trial_ids[index],
            materials=[self.materials[i] for i in index],
            f_n=self.f_n[index],
            steps=self.steps[index],
            method=self.method,
        )

    @classmethod
    def from_samples(cls, samples: list[LabeledSample], method: Optional[str] = None) -> "Dataset":
        if not samples:
            return cls(
                X=np.zeros((0, 0)),
                y=np.zeros(0),
                trial_ids=np.zeros(0, dtype=int),
                materials=[],
                f_n=np.zeros(0),
                steps=np.zeros(0, dtype=int),
                method=method,
            )
        return cls(
            X=np.vstack([np.atleast_1d(s.feature) for s in samples]),
            y=np.array([s.label_s for s in samples]),
            trial_ids=np.array([s.trial_id for s in samples], dtype=int),
            materials=[s.material for s in samples],
            f_n=np.array([s.f_n for s in samples]),
            steps=np.array([s.step for s in samples], dtype=int),
            method=method,
        )


class TrialRecord(BaseModel):
    """
    One simulated data-collection trial: rig states and both AC pressure renditions
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    trial_id: int
    material: str
    f_n: float
    states: list[ContactState]
    injected_frames: list[SensorFrame]
    passive_frames: list[SensorFrame]
    slip_step: Optional[int] = None
    f_t_slip: Optional[float] = None


class VersionModel(BaseModel):
    version: str


class RunStatusModel(BaseModel):
    name: str
    complete: bool
    missing: list[str] = []


class StatusModel(BaseModel):
    status: str
    healthy: bool
    runs: list[RunStatusModel]
