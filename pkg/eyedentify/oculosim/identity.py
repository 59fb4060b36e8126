from typing import Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from eyedentify.pydantic_models.models import IDENTITY_DOMAINS, PopulationSpec


class IdentityParams(BaseModel):
    """Oculomotor parameters of one synthetic identity."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    fixation_duration_mean_ms: float = Field(ge=150.0, le=400.0)
    fixation_duration_sd_ms: float = Field(ge=0.0, le=150.0)
    # saccade duration = intercept + slope * amplitude, clipped to [30, 80] ms
    saccade_duration_intercept_ms: float = Field(ge=10.0, le=40.0)
    saccade_duration_slope_ms_per_deg: float = Field(ge=0.0, le=5.0)
    saccade_peak_velocity: float = Field(ge=100.0, le=500.0, description="Upper bound on saccade peak velocity in deg/s")
    microsaccade_rate: float = Field(ge=0.0, le=3.0, description="Microsaccades per second of fixation")
    microsaccade_peak_velocity: float = Field(ge=15.0, le=120.0)
    microsaccade_duration_ms: float = Field(ge=6.0, le=30.0)
    drift_speed: float = Field(ge=0.1, le=0.4)
    tremor_frequency: float = Field(ge=40.0, le=100.0)
    tremor_velocity_amplitude: float = Field(ge=0.0, le=0.3)
    noise_sd: float = Field(ge=0.0, le=0.003, description="Measurement noise in degrees")


def sample_identity(rng: Union[int, np.random.Generator], spec: PopulationSpec) -> IdentityParams:
    """
    Draw one identity. Each parameter is uniform on the central `spec.separation`
    share of its population range; parameters are drawn in a fixed order so a
    seed reproduces the identity exactly.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    values = {}
    for name in IDENTITY_DOMAINS:
        lo, hi = getattr(spec, name)
        mid = 0.5 * (lo + hi)
        values[name] = float(mid + spec.separation * (rng.uniform() - 0.5) * (hi - lo))
    return IdentityParams(**values)
