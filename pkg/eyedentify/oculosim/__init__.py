from .dataset import DatasetEntry, load_dataset, make_dataset
from .identity import IdentityParams, sample_identity
from .scanpath import simulate_binocular, simulate_scanpath
from .segments import synth_fixation_segment, synth_saccade_segment

__all__ = [
    "DatasetEntry",
    "load_dataset",
    "make_dataset",
    "IdentityParams",
    "sample_identity",
    "simulate_binocular",
    "simulate_scanpath",
    "synth_fixation_segment",
    "synth_saccade_segment",
]
