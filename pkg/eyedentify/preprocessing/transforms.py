"""
Input transforms of the two subnets and sliding-window extraction.

The slow view squashes velocities with tanh(c * delta) so drift and tremor
stay on an almost linear scale; the fast view truncates everything below
`v_min` to z(0) and z-scores the rest.
"""
import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import numpy as np

from eyedentify.errors import ShapeError, ZScoreUndefinedError
from eyedentify.preprocessing.recording import VelocitySequence
from eyedentify.pydantic_models.models import TransformConfig

logger = logging.getLogger(__name__)

# largest double below 1; keeps |tanh| < 1 after rounding
_TANH_LIMIT = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class ZScoreStats:
    mean_x: float
    mean_y: float
    sd_x: float
    sd_y: float

    def __post_init__(self):
        if not (self.sd_x > 0 and self.sd_y > 0):
            raise ZScoreUndefinedError(f"standard deviations must be positive, got sd_x={self.sd_x}, sd_y={self.sd_y}")

    @property
    def mean(self) -> np.ndarray:
        return np.array([self.mean_x, self.mean_y])

    @property
    def sd(self) -> np.ndarray:
        return np.array([self.sd_x, self.sd_y])

    @property
    def z0(self) -> np.ndarray:
        """z-score of a zero velocity, per channel."""
        return (0.0 - self.mean) / self.sd

    def to_dict(self) -> dict:
        return {"mean_x": self.mean_x, "mean_y": self.mean_y, "sd_x": self.sd_x, "sd_y": self.sd_y}

    @classmethod
    def from_dict(cls, d: dict) -> "ZScoreStats":
        return cls(**{k: float(d[k]) for k in ("mean_x", "mean_y", "sd_x", "sd_y")})


def _pairs(v) -> np.ndarray:
    return v.pairs if isinstance(v, VelocitySequence) else np.asarray(v, dtype=np.float64)


def speeds(v) -> np.ndarray:
    pairs = _pairs(v)
    return np.sqrt(pairs[:, 0] ** 2 + pairs[:, 1] ** 2)


def transform_slow(v, cfg: TransformConfig) -> np.ndarray:
    out = np.tanh(cfg.c * _pairs(v))
    return np.clip(out, -_TANH_LIMIT, _TANH_LIMIT)


def fit_zscore(train: Iterable[VelocitySequence], cfg: TransformConfig) -> ZScoreStats:
    """
    Per-channel mean and population standard deviation over all training
    samples whose speed reaches `cfg.v_min`.
    """
    selected = []
    total = 0
    for v in train:
        pairs = _pairs(v)
        total += len(pairs)
        selected.append(pairs[speeds(pairs) >= cfg.v_min])
    supra = np.concatenate(selected) if selected else np.empty((0, 2))
    if len(supra) < 2:
        raise ZScoreUndefinedError(
            f"need at least 2 samples with speed >= {cfg.v_min} deg/s to fit z-scores, found {len(supra)}"
        )
    mean = supra.mean(axis=0)
    sd = supra.std(axis=0)
    logger.info(
        f"Fitted z-scores on {len(supra)} of {total} samples: mean=({mean[0]:.3f}, {mean[1]:.3f}), "
        f"sd=({sd[0]:.3f}, {sd[1]:.3f})"
    )
    return ZScoreStats(mean_x=float(mean[0]), mean_y=float(mean[1]), sd_x=float(sd[0]), sd_y=float(sd[1]))


def transform_fast(v, cfg: TransformConfig, stats: ZScoreStats) -> np.ndarray:
    pairs = _pairs(v)
    out = (pairs - stats.mean) / stats.sd
    out[speeds(pairs) < cfg.v_min] = stats.z0
    return out


@dataclass
class InputWindow:
    """Slow and fast views of the same `length` velocity pairs."""

    slow: np.ndarray
    fast: np.ndarray
    label: Optional[str] = None
    origin: Tuple[str, int] = ("", 0)

    @property
    def start(self) -> int:
        return self.origin[1]


def window_count(n: int, length: int, stride: int) -> int:
    return (n - length) // stride + 1 if n >= length else 0


def windows(
    slow_ch: np.ndarray,
    fast_ch: np.ndarray,
    length: int = 1000,
    stride: int = 1000,
    label: Optional[str] = None,
    sequence_id: str = "",
) -> List[InputWindow]:
    if length < 1 or stride < 1:
        raise ValueError(f"window length and stride must be >= 1, got length={length}, stride={stride}")
    if slow_ch.shape != fast_ch.shape:
        raise ShapeError(f"slow and fast channels differ in shape: {slow_ch.shape} vs {fast_ch.shape}")
    n = len(slow_ch)
    return [
        InputWindow(
            slow=slow_ch[start:start + length],
            fast=fast_ch[start:start + length],
            label=label,
            origin=(sequence_id, start),
        )
        for start in range(0, window_count(n, length, stride) * stride, stride)
    ]


@dataclass
class PreparedSequence:
    """Both transformed views of one velocity sequence plus its labels."""

    slow: np.ndarray
    fast: np.ndarray
    rate: float
    subject_id: str
    session_id: str
    eye: str = "unspecified"
    segment: int = 0

    def __len__(self):
        return len(self.slow)

    @property
    def sequence_id(self) -> str:
        return f"{self.subject_id}/{self.session_id}/{self.eye}/{self.segment}"

    @property
    def duration_s(self) -> float:
        return len(self) / self.rate

    def windows(self, length: int, stride: int, limit: Optional[int] = None) -> List[InputWindow]:
        """Windows over the first `limit` samples (all samples if unset)."""
        stop = len(self) if limit is None else min(limit, len(self))
        return windows(
            self.slow[:stop], self.fast[:stop], length, stride, label=self.subject_id, sequence_id=self.sequence_id
        )


def prepare_sequence(v: VelocitySequence, cfg: TransformConfig, stats: ZScoreStats) -> PreparedSequence:
    return PreparedSequence(
        slow=transform_slow(v, cfg),
        fast=transform_fast(v, cfg, stats),
        rate=v.rate,
        subject_id=v.subject_id,
        session_id=v.session_id,
        eye=v.eye,
        segment=v.segment,
    )
