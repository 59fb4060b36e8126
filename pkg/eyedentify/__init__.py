from .inference import DeepEyedentification
from .pydantic_models.models import DataConfig, ProtocolSpec, RunConfig, SimConfig, SubnetConfig, TrainingSchedule, TransformConfig

__all__ = [
    "DeepEyedentification",
    "DataConfig",
    "ProtocolSpec",
    "RunConfig",
    "SimConfig",
    "SubnetConfig",
    "TrainingSchedule",
    "TransformConfig",
]
