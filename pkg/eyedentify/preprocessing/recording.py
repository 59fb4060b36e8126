"""
Gaze recordings: parsing the gaze CSV format, gap repair and conversion to
angular velocities.
"""
import io
import logging
import re
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from eyedentify.errors import EmptySequenceError, GazeParseError, GazeValidationError
from eyedentify.pydantic_models.models import GazeCsvFormat

logger = logging.getLogger(__name__)

EYE_CODES = {"L": "left", "R": "right"}
EYE_LETTERS = {"left": "L", "right": "R"}


@dataclass
class GazeRecording:
    """Timestamped yaw/pitch gaze angles (degrees) of one eye in one session."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    rate: float
    eye: str = "unspecified"
    subject_id: str = "unknown"
    session_id: str = "0"
    segment: int = 0
    # per-sample movement label, only set for simulated recordings
    phases: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if not self.rate > 0:
            raise GazeValidationError(f"sampling rate must be positive, got {self.rate}")
        if not (len(self.t) == len(self.x) == len(self.y)):
            raise GazeValidationError(
                f"column lengths differ: t={len(self.t)}, x={len(self.x)}, y={len(self.y)}"
            )
        if self.eye not in ("left", "right", "unspecified"):
            raise GazeValidationError(f"eye must be left, right or unspecified, got {self.eye}")
        steps = np.diff(self.t)
        if (steps <= 0).any():
            i = int(np.argmax(steps <= 0))
            raise GazeValidationError(f"timestamps not strictly increasing at sample {i + 1}")
        if not (np.isfinite(self.x).all() and np.isfinite(self.y).all()):
            raise GazeValidationError("gaze angles must be finite")

    def __len__(self):
        return len(self.t)

    @property
    def sequence_id(self) -> str:
        return f"{self.subject_id}/{self.session_id}/{self.eye}/{self.segment}"


@dataclass
class VelocitySequence:
    """Angular velocity pairs in deg/s, one per consecutive sample pair of a recording."""

    pairs: np.ndarray
    rate: float
    subject_id: str = "unknown"
    session_id: str = "0"
    eye: str = "unspecified"
    segment: int = 0

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.float64)
        if self.pairs.ndim != 2 or self.pairs.shape[1] != 2:
            raise GazeValidationError(f"velocity pairs must have shape [n, 2], got {self.pairs.shape}")
        if not np.isfinite(self.pairs).all():
            raise GazeValidationError("velocities must be finite")

    def __len__(self):
        return len(self.pairs)

    @property
    def sequence_id(self) -> str:
        return f"{self.subject_id}/{self.session_id}/{self.eye}/{self.segment}"


def _line_from_message(message: str) -> Optional[int]:
    m = re.search(r"line (\d+)", message)
    return int(m.group(1)) if m else None


def _numeric_column(frame: pd.DataFrame, column: str, allow_nan: bool) -> np.ndarray:
    raw = frame[column].str.strip()
    values = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=np.float64)
    is_nan_token = raw.str.lower().eq("nan").fillna(False).to_numpy(dtype=bool)
    bad = np.isinf(values) | (np.isnan(values) & ~is_nan_token)
    if not allow_nan:
        bad |= np.isnan(values)
    if bad.any():
        i = int(np.argmax(bad))
        # header is line 1
        raise GazeParseError(f"malformed value {frame[column].iloc[i]!r} in column '{column}'", line=i + 2)
    return values


def _split_on_gaps(t: np.ndarray, x: np.ndarray, y: np.ndarray, rate: float, max_gap_ms: float):
    """Interpolate short NaN runs and cut the samples at long ones."""
    spacing = 1000.0 / rate
    missing = np.isnan(x) | np.isnan(y)
    cuts = []
    n = len(t)
    i = 0
    while i < n:
        if not missing[i]:
            i += 1
            continue
        start = i
        while i < n and missing[i]:
            i += 1
        stop = i
        if start == 0 or stop == n:
            # leading or trailing run, nothing to interpolate against
            cuts.append((start, stop))
            continue
        gap_ms = t[stop] - t[start - 1] - spacing
        if gap_ms <= max_gap_ms:
            span = slice(start, stop)
            x[span] = np.interp(t[span], [t[start - 1], t[stop]], [x[start - 1], x[stop]])
            y[span] = np.interp(t[span], [t[start - 1], t[stop]], [y[start - 1], y[stop]])
        else:
            logger.info(f"Splitting recording at a {gap_ms:.1f} ms gap (t={t[start - 1]:.1f} ms)")
            cuts.append((start, stop))

    # timestamp jumps without NaN rows also split
    for j in np.nonzero(np.diff(t) - spacing > max_gap_ms)[0]:
        cuts.append((j + 1, j + 1))

    bounds = []
    position = 0
    for start, stop in sorted(cuts):
        if start > position:
            bounds.append((position, start))
        position = max(position, stop)
    if position < n:
        bounds.append((position, n))
    return bounds


def parse_recording(raw_text: str, format: Optional[GazeCsvFormat] = None) -> List[GazeRecording]:
    """
    Parse gaze CSV text into validated recordings.

    Returns one recording per eye and per continuous segment: NaN runs of at
    most `format.max_gap_ms` are linearly interpolated, longer runs split the
    recording.

    Raises:
        GazeParseError: malformed row (carries the 1-based line number).
        GazeValidationError: non-monotone timestamps or invalid rate.
    """
    fmt = format or GazeCsvFormat()
    try:
        frame = pd.read_csv(io.StringIO(raw_text), dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise GazeParseError("no header found", line=1)
    except pd.errors.ParserError as e:
        raise GazeParseError(str(e).strip(), line=_line_from_message(str(e)))

    for column in (fmt.t_column, fmt.x_column, fmt.y_column):
        if column not in frame.columns:
            raise GazeParseError(f"missing column '{column}' (header: {list(frame.columns)})", line=1)

    t = _numeric_column(frame, fmt.t_column, allow_nan=False)
    x = _numeric_column(frame, fmt.x_column, allow_nan=True)
    y = _numeric_column(frame, fmt.y_column, allow_nan=True)

    lines = np.arange(len(frame)) + 2
    if fmt.eye_column in frame.columns:
        eyes = frame[fmt.eye_column].str.strip().str.upper()
        unknown = ~eyes.isin(list(EYE_CODES)).to_numpy(dtype=bool)
        if unknown.any():
            i = int(np.argmax(unknown))
            raise GazeParseError(f"eye must be L or R, got {frame[fmt.eye_column].iloc[i]!r}", line=i + 2)
        groups = [(EYE_CODES[code], (eyes == code).to_numpy(dtype=bool)) for code in ("L", "R")]
        groups = [(eye, mask) for eye, mask in groups if mask.any()]
    else:
        groups = [("unspecified", np.ones(len(frame), dtype=bool))]

    recordings = []
    for eye, mask in groups:
        te, xe, ye, le = t[mask], x[mask].copy(), y[mask].copy(), lines[mask]
        steps = np.diff(te)
        if (steps <= 0).any():
            i = int(np.argmax(steps <= 0)) + 1
            raise GazeValidationError(f"line {le[i]}: timestamp {te[i]} does not increase ({eye} eye)")
        for segment, (start, stop) in enumerate(_split_on_gaps(te, xe, ye, fmt.rate, fmt.max_gap_ms)):
            if stop - start < 2:
                logger.warning(f"Dropping {stop - start}-sample segment of the {eye} eye at line {le[start]}")
                continue
            recordings.append(
                GazeRecording(
                    t=te[start:stop],
                    x=xe[start:stop],
                    y=ye[start:stop],
                    rate=fmt.rate,
                    eye=eye,
                    subject_id=fmt.subject_id,
                    session_id=fmt.session_id,
                    segment=segment,
                )
            )

    for rec in recordings:
        spacing = float(np.median(np.diff(rec.t)))
        if abs(spacing - 1000.0 / rec.rate) > 0.1 * 1000.0 / rec.rate:
            logger.warning(
                f"Median sample spacing {spacing:.3f} ms does not match the configured rate of {rec.rate} Hz"
            )
    logger.debug(f"Parsed {len(frame)} rows into {len(recordings)} recording segment(s)")
    return recordings


def load_recording(path: str, format: Optional[GazeCsvFormat] = None) -> List[GazeRecording]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw_text = f.read()
    except OSError as e:
        raise ValueError(f"Cannot load gaze data from file `{path}`: {e}")
    try:
        return parse_recording(raw_text, format)
    except (GazeParseError, GazeValidationError) as e:
        raise type(e)(f"{path}: {e}") from e


def write_recordings(path: str, recordings: List[GazeRecording], precision: int = 6):
    """Write one or more recordings (e.g. both eyes of a session) in the gaze CSV format."""
    with_eye = any(rec.eye != "unspecified" for rec in recordings)
    frames = []
    for rec in recordings:
        frame = pd.DataFrame({"t_ms": rec.t, "x_deg": rec.x, "y_deg": rec.y})
        if with_eye:
            if rec.eye == "unspecified":
                raise GazeValidationError("cannot mix recordings with and without eye labels in one file")
            frame["eye"] = EYE_LETTERS[rec.eye]
        frames.append(frame)
    try:
        pd.concat(frames, ignore_index=True).to_csv(
            path, index=False, float_format=f"%.{precision}f", lineterminator="\n"
        )
    except OSError as e:
        raise OSError(f"Cannot write gaze data to `{path}`: {e}") from e
    return path


def to_velocities(rec: GazeRecording) -> VelocitySequence:
    """Forward differences scaled by the sampling rate: delta_i = r * (x_{i+1} - x_i)."""
    if len(rec) < 2:
        raise EmptySequenceError(f"need at least 2 samples to compute velocities, got {len(rec)}")
    angles = np.column_stack([rec.x, rec.y])
    return VelocitySequence(
        pairs=rec.rate * np.diff(angles, axis=0),
        rate=rec.rate,
        subject_id=rec.subject_id,
        session_id=rec.session_id,
        eye=rec.eye,
        segment=rec.segment,
    )
