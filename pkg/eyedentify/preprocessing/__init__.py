from .recording import GazeRecording, VelocitySequence, load_recording, parse_recording, to_velocities, write_recordings
from .transforms import (
    InputWindow,
    PreparedSequence,
    ZScoreStats,
    fit_zscore,
    prepare_sequence,
    transform_fast,
    transform_slow,
    window_count,
    windows,
)

__all__ = [
    "GazeRecording",
    "VelocitySequence",
    "load_recording",
    "parse_recording",
    "to_velocities",
    "write_recordings",
    "InputWindow",
    "PreparedSequence",
    "ZScoreStats",
    "fit_zscore",
    "prepare_sequence",
    "transform_fast",
    "transform_slow",
    "window_count",
    "windows",
]
