import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from eyedentify.oculosim.identity import IdentityParams
from eyedentify.oculosim.segments import synth_fixation_segment, synth_saccade_segment
from eyedentify.preprocessing.recording import GazeRecording
from eyedentify.pydantic_models.models import SimConfig

logger = logging.getLogger(__name__)

MIN_FIXATION_MS = 50.0
# saccades are turned around before leaving this field of view (deg)
FIELD_OF_VIEW = 15.0


@dataclass
class Scanpath:
    """Noise-free gaze trajectory plus the segment bookkeeping of its generation."""

    x: np.ndarray
    y: np.ndarray
    phases: np.ndarray
    fixation_durations_ms: List[float] = field(default_factory=list)
    saccade_durations_ms: List[float] = field(default_factory=list)


def generate_scanpath(
    p: IdentityParams,
    cfg: SimConfig,
    rng: np.random.Generator,
    amplitude_range: Tuple[float, float] = (2.0, 8.0),
) -> Scanpath:
    total = int(round(cfg.duration_s * cfg.rate))
    xs, ys, phases = [], [], []
    fixations, saccades = [], []
    px, py = rng.uniform(-5.0, 5.0, size=2)
    produced = 0
    while produced < total:
        duration = max(MIN_FIXATION_MS, rng.normal(p.fixation_duration_mean_ms, p.fixation_duration_sd_ms))
        fix = synth_fixation_segment(p, duration, rng, rate=cfg.rate, t0_s=produced / cfg.rate, with_noise=False)
        xs.append(px + fix.x)
        ys.append(py + fix.y)
        phases.append(fix.phases)
        px, py = px + fix.x[-1], py + fix.y[-1]
        produced += len(fix)
        fixations.append(1000.0 * len(fix) / cfg.rate)

        amplitude = rng.uniform(*amplitude_range)
        direction = rng.uniform(0.0, 2 * np.pi)
        tx, ty = px + amplitude * np.cos(direction), py + amplitude * np.sin(direction)
        if abs(tx) > FIELD_OF_VIEW or abs(ty) > FIELD_OF_VIEW:
            direction += np.pi
        sac = synth_saccade_segment(p, amplitude, rng, rate=cfg.rate, direction=direction)
        xs.append(px + sac.x)
        ys.append(py + sac.y)
        phases.append(sac.phases)
        px, py = px + sac.x[-1], py + sac.y[-1]
        produced += len(sac)
        saccades.append(1000.0 * len(sac) / cfg.rate)

    return Scanpath(
        x=np.concatenate(xs)[:total],
        y=np.concatenate(ys)[:total],
        phases=np.concatenate(phases)[:total],
        fixation_durations_ms=fixations,
        saccade_durations_ms=saccades,
    )


def _measure(p: IdentityParams, path: Scanpath, cfg: SimConfig, rng: np.random.Generator, eye: str, subject_id: str, session_id: str) -> GazeRecording:
    n = len(path.x)
    noise = rng.normal(0.0, p.noise_sd, size=(2, n)) if p.noise_sd > 0 else np.zeros((2, n))
    return GazeRecording(
        t=np.arange(n) * 1000.0 / cfg.rate,
        x=path.x + noise[0],
        y=path.y + noise[1],
        rate=cfg.rate,
        eye=eye,
        subject_id=subject_id,
        session_id=session_id,
        phases=path.phases,
    )


def simulate_scanpath(
    p: IdentityParams,
    cfg: SimConfig,
    rng: np.random.Generator,
    subject_id: str = "unknown",
    session_id: str = "0",
    amplitude_range: Tuple[float, float] = (2.0, 8.0),
    eye: str = "unspecified",
) -> GazeRecording:
    """Alternate fixations and saccades until `cfg.duration_s` is filled."""
    path = generate_scanpath(p, cfg, rng, amplitude_range)
    return _measure(p, path, cfg, rng, eye, subject_id, session_id)


def simulate_binocular(
    p: IdentityParams,
    cfg: SimConfig,
    rng: np.random.Generator,
    subject_id: str = "unknown",
    session_id: str = "0",
    amplitude_range: Tuple[float, float] = (2.0, 8.0),
) -> Tuple[GazeRecording, GazeRecording]:
    """Both eyes follow one conjugate scanpath; measurement noise is drawn per eye."""
    path = generate_scanpath(p, cfg, rng, amplitude_range)
    left = _measure(p, path, cfg, rng, "left", subject_id, session_id)
    right = _measure(p, path, cfg, rng, "right", subject_id, session_id)
    return left, right
