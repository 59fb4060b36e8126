import logging
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationInfo, field_validator, model_validator

logger = logging.getLogger(__name__)

# Grid-search domains for the tunable hyperparameters
C_DOMAIN = (0.01, 0.02, 0.04, 0.06)
V_MIN_DOMAIN = (10.0, 20.0, 30.0, 40.0, 60.0)
KERNEL_DOMAIN = (3, 5, 7, 9)
FILTER_DOMAIN = (32, 64, 128, 256, 512)


def _unsafe(info: ValidationInfo) -> bool:
    return bool(info.context and info.context.get("unsafe_hparams"))


def _check_domain(name: str, value, domain, info: ValidationInfo):
    if value in domain:
        return value
    if _unsafe(info):
        logger.warning(f"{name}={value} is outside {domain}; accepted because of --unsafe-hparams")
        return value
    raise ValueError(f"{name} must be one of {domain}, got {value}")


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TransformConfig(StrictModel):
    c: float = Field(
        default=0.02,
        gt=0.0,
        description="Scaling factor of the slow (tanh) transform",
    )
    v_min: float = Field(
        default=40.0,
        gt=0.0,
        description="Velocity threshold in deg/s below which the fast transform truncates to z(0)",
    )

    @field_validator("c")
    @classmethod
    def _c_domain(cls, v, info: ValidationInfo):
        return _check_domain("c", v, C_DOMAIN, info)

    @field_validator("v_min")
    @classmethod
    def _v_min_domain(cls, v, info: ValidationInfo):
        return _check_domain("v_min", v, V_MIN_DOMAIN, info)


class GazeCsvFormat(StrictModel):
    t_column: str = Field(default="t_ms", description="Timestamp column in milliseconds")
    x_column: str = Field(default="x_deg", description="Yaw gaze angle column in degrees")
    y_column: str = Field(default="y_deg", description="Pitch gaze angle column in degrees")
    eye_column: str = Field(default="eye", description="Optional eye column with values L or R")
    rate: float = Field(default=1000.0, gt=0.0, description="Sampling rate in Hz")
    max_gap_ms: float = Field(
        default=50.0,
        ge=0.0,
        description="NaN runs up to this duration are interpolated; longer runs split the recording",
    )
    subject_id: str = Field(default="unknown", description="Subject label attached to parsed recordings")
    session_id: str = Field(default="0", description="Session label attached to parsed recordings")


# Bounds every population range has to respect
IDENTITY_DOMAINS = {
    "fixation_duration_mean_ms": (150.0, 400.0),
    "fixation_duration_sd_ms": (0.0, 150.0),
    "saccade_duration_intercept_ms": (10.0, 40.0),
    "saccade_duration_slope_ms_per_deg": (0.0, 5.0),
    "saccade_peak_velocity": (100.0, 500.0),
    "microsaccade_rate": (0.0, 3.0),
    "microsaccade_peak_velocity": (15.0, 120.0),
    "microsaccade_duration_ms": (6.0, 30.0),
    "drift_speed": (0.1, 0.4),
    "tremor_frequency": (40.0, 100.0),
    "tremor_velocity_amplitude": (0.0, 0.3),
    "noise_sd": (0.0, 0.003),
}


class PopulationSpec(StrictModel):
    fixation_duration_mean_ms: Tuple[float, float] = (220.0, 280.0)
    fixation_duration_sd_ms: Tuple[float, float] = (40.0, 90.0)
    saccade_duration_intercept_ms: Tuple[float, float] = (20.0, 30.0)
    saccade_duration_slope_ms_per_deg: Tuple[float, float] = (2.0, 3.0)
    saccade_peak_velocity: Tuple[float, float] = (350.0, 500.0)
    microsaccade_rate: Tuple[float, float] = (0.5, 2.5)
    microsaccade_peak_velocity: Tuple[float, float] = (15.0, 120.0)
    microsaccade_duration_ms: Tuple[float, float] = (6.0, 30.0)
    drift_speed: Tuple[float, float] = (0.1, 0.4)
    tremor_frequency: Tuple[float, float] = (40.0, 100.0)
    tremor_velocity_amplitude: Tuple[float, float] = (0.05, 0.3)
    noise_sd: Tuple[float, float] = (0.0005, 0.003)
    saccade_amplitude_deg: Tuple[float, float] = Field(
        default=(2.0, 8.0),
        description="Range of saccade amplitudes drawn during scanpath generation",
    )
    separation: float = Field(
        default=1.0,
        gt=0.0,
        le=1.0,
        description="Fraction of each parameter range spanned by the identities of the population",
    )

    @model_validator(mode="after")
    def _check_ranges(self):
        for name, (lo_dom, hi_dom) in IDENTITY_DOMAINS.items():
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
            if lo < lo_dom or hi > hi_dom:
                raise ValueError(f"{name}: range ({lo}, {hi}) outside domain ({lo_dom}, {hi_dom})")
        lo, hi = self.saccade_amplitude_deg
        # peak = 2 * amplitude / duration with durations in [30, 80] ms
        max_amplitude = self.saccade_peak_velocity[0] * 0.080 / 2
        if lo > hi or lo < 2.0 or hi > max_amplitude:
            raise ValueError(
                f"saccade_amplitude_deg must lie within [2.0, {max_amplitude:.1f}] deg, got ({lo}, {hi})"
            )
        return self


class SimConfig(StrictModel):
    rate: float = Field(default=1000.0, gt=0.0, description="Sampling rate in Hz")
    duration_s: float = Field(default=60.0, gt=1.0, description="Duration of each session in seconds")
    identity_count: int = Field(default=10, ge=1)
    sessions_per_identity: int = Field(default=2, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    binocular: bool = Field(default=False, description="Emit left and right eye for every session")
    csv_precision: int = Field(default=6, ge=1, le=12, description="Decimals written to the gaze CSV")


class ConvBlock(StrictModel):
    kernel: int = Field(ge=1)
    filters: int = Field(ge=1)


def _blocks(kernels, filters) -> List[ConvBlock]:
    return [ConvBlock(kernel=k, filters=f) for k, f in zip(kernels, filters)]


class SubnetConfig(StrictModel):
    conv_blocks: List[ConvBlock] = Field(min_length=1)
    fc_sizes: List[int] = Field(default=[256, 128], min_length=1)
    embedding_size: int = Field(default=128, ge=1)
    pool_size: int = Field(default=2, ge=1)
    pool_stride: int = Field(default=1, ge=1)
    padding: Literal["valid", "same"] = "valid"
    bn_momentum: float = Field(default=0.99, ge=0.0, lt=1.0)
    bn_epsilon: float = Field(default=1e-5, gt=0.0)
    input_channels: int = Field(default=2, ge=1)

    @field_validator("conv_blocks")
    @classmethod
    def _check_blocks(cls, blocks: List[ConvBlock], info: ValidationInfo):
        for i in range(1, len(blocks)):
            if blocks[i].kernel > blocks[i - 1].kernel:
                raise ValueError(
                    f"kernel sizes must be non-increasing: block {i} has k={blocks[i].kernel} "
                    f"after k={blocks[i - 1].kernel}"
                )
            if blocks[i].filters < blocks[i - 1].filters:
                raise ValueError(
                    f"filter counts must be non-decreasing: block {i} has f={blocks[i].filters} "
                    f"after f={blocks[i - 1].filters}"
                )
        for i, block in enumerate(blocks):
            _check_domain(f"conv block {i} kernel", block.kernel, KERNEL_DOMAIN, info)
            _check_domain(f"conv block {i} filters", block.filters, FILTER_DOMAIN, info)
        return blocks

    def output_length(self, input_length: int) -> int:
        """Temporal length after the convolution/pooling stack."""
        length = input_length
        for block in self.conv_blocks:
            if self.padding == "valid":
                length = length - block.kernel + 1
            length = (length - self.pool_size) // self.pool_stride + 1
        return length

    @classmethod
    def full_slow(cls) -> "SubnetConfig":
        return cls(conv_blocks=_blocks([9] * 3 + [5] * 4 + [3] * 2, [128] * 3 + [256] * 6))

    @classmethod
    def full_fast(cls) -> "SubnetConfig":
        return cls(conv_blocks=_blocks([9] * 3 + [5] * 4 + [3] * 2, [32] * 3 + [512] * 6))

    @classmethod
    def reduced_slow(cls) -> "SubnetConfig":
        return cls(conv_blocks=_blocks([9, 9, 5, 5, 3, 3], [32, 32, 64, 64, 64, 64]), pool_stride=2)

    @classmethod
    def reduced_fast(cls) -> "SubnetConfig":
        return cls(conv_blocks=_blocks([9, 9, 5, 5, 3, 3], [32, 32, 128, 128, 128, 128]), pool_stride=2)


class JointConfig(StrictModel):
    fc_size: int = Field(default=256, ge=1)
    embedding_size: int = Field(default=128, ge=1)
    bn_momentum: float = Field(default=0.99, ge=0.0, lt=1.0)
    bn_epsilon: float = Field(default=1e-5, gt=0.0)


class TrainingSchedule(StrictModel):
    subnet_lr: float = Field(default=0.001, gt=0.0, description="Adam learning rate for the subnets")
    joint_lr: float = Field(default=0.0001, gt=0.0, description="Adam learning rate for the joint layers")
    batch_size: int = Field(default=64, ge=2)
    max_epochs: int = Field(default=100, ge=0)
    patience: int = Field(default=10, ge=1)
    validation_fraction: float = Field(
        default=0.1,
        ge=0.0,
        lt=1.0,
        description="Share of training windows held out for early stopping; 0 disables early stopping",
    )
    target_train_accuracy: Optional[float] = Field(
        default=None,
        gt=0.0,
        le=1.0,
        description="Stop a stage as soon as the epoch training accuracy reaches this value",
    )
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    amsgrad: bool = False


class WindowConfig(StrictModel):
    length: int = Field(default=1000, ge=1, description="Window length in velocity samples")
    train_stride: int = Field(default=1000, ge=1)
    eval_stride: int = Field(default=250, ge=1)
    enroll_stride: int = Field(default=1000, ge=1)


class ProtocolSpec(StrictModel):
    train_identities: int = Field(default=6, ge=1)
    enrolled_identities: int = Field(default=3, ge=1)
    impostor_identities: int = Field(default=1, ge=0)
    iterations: int = Field(default=50, ge=1)
    enroll_session: Optional[str] = Field(default=None, description="Session used for enrollment; first session if unset")
    test_session: Optional[str] = Field(default=None, description="Session used as observation; last session if unset")
    durations: List[float] = Field(default=[1.0, 2.0, 5.0, 10.0, 20.0, 40.0, 90.0], min_length=1)
    target_fpr: float = Field(default=0.1, gt=0.0, lt=1.0)

    @field_validator("durations")
    @classmethod
    def _positive(cls, v: List[float]):
        if any(d <= 0 for d in v):
            raise ValueError("durations must be positive")
        return v


class DataConfig(StrictModel):
    rate: float = Field(default=1000.0, gt=0.0)
    max_gap_ms: float = Field(default=50.0, ge=0.0)
    train_subjects: Optional[List[str]] = Field(default=None, description="Identities used for training; all if unset")
    train_sessions: Optional[List[str]] = None
    test_sessions: Optional[List[str]] = None


class RunConfig(StrictModel):
    profile: Literal["full", "reduced"] = "full"
    seed: int = Field(default=0, ge=0, lt=2**64)
    transform: TransformConfig = TransformConfig()
    slow: Optional[SubnetConfig] = None
    fast: Optional[SubnetConfig] = None
    joint: JointConfig = JointConfig()
    schedule: TrainingSchedule = TrainingSchedule()
    windows: WindowConfig = WindowConfig()
    protocol: ProtocolSpec = ProtocolSpec()
    data: DataConfig = DataConfig()
    population: PopulationSpec = PopulationSpec()
    sim: SimConfig = SimConfig()

    @model_validator(mode="after")
    def _fill_profile(self):
        if self.slow is None:
            self.slow = SubnetConfig.full_slow() if self.profile == "full" else SubnetConfig.reduced_slow()
        if self.fast is None:
            self.fast = SubnetConfig.full_fast() if self.profile == "full" else SubnetConfig.reduced_fast()
        for name, cfg in (("slow", self.slow), ("fast", self.fast)):
            if cfg.output_length(self.windows.length) < 1:
                raise ValueError(f"{name} subnet reduces a window of {self.windows.length} samples to nothing")
        return self
