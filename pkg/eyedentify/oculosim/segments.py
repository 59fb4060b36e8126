"""
Building blocks of a synthetic scanpath. Positions are offsets in degrees
from the gaze position at the start of the segment.
"""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from eyedentify.oculosim.identity import IdentityParams

FIXATION = 0
SACCADE = 1
MICROSACCADE = 2

SACCADE_MIN_MS = 30.0
SACCADE_MAX_MS = 80.0
# angular step of the drift direction random walk, per millisecond
DRIFT_TURN_SD = 0.02


@dataclass
class Segment:
    x: np.ndarray
    y: np.ndarray
    phases: np.ndarray
    microsaccade_onsets: list = field(default_factory=list)

    def __len__(self):
        return len(self.x)


def raised_cosine_displacement(samples: int, amplitude: float) -> np.ndarray:
    """
    Displacement after each of `samples` steps of a movement whose velocity is a
    raised cosine; the last value equals `amplitude` exactly.
    """
    if samples <= 0:
        return np.zeros(0)
    phase = np.arange(1, samples + 1) / samples
    out = amplitude * (phase - np.sin(2 * np.pi * phase) / (2 * np.pi))
    out[-1] = amplitude
    return out


def saccade_samples(p: IdentityParams, amplitude_deg: float, rate: float) -> int:
    duration_ms = p.saccade_duration_intercept_ms + p.saccade_duration_slope_ms_per_deg * amplitude_deg
    duration_ms = min(max(duration_ms, SACCADE_MIN_MS), SACCADE_MAX_MS)
    # stretch the movement if the main-sequence duration would exceed the peak velocity
    duration_ms = min(max(duration_ms, 2000.0 * amplitude_deg / p.saccade_peak_velocity), SACCADE_MAX_MS)
    return max(1, math.ceil(duration_ms * rate / 1000.0 - 1e-9))


def synth_saccade_segment(
    p: IdentityParams,
    amplitude_deg: float,
    rng: np.random.Generator,
    rate: float = 1000.0,
    direction: Optional[float] = None,
) -> Segment:
    if amplitude_deg <= 0:
        empty = np.zeros(0)
        return Segment(empty, empty.copy(), np.zeros(0, dtype=np.int8))
    if direction is None:
        direction = rng.uniform(0.0, 2 * np.pi)
    samples = saccade_samples(p, amplitude_deg, rate)
    peak = 2.0 * amplitude_deg * rate / samples
    if peak > p.saccade_peak_velocity * (1 + 1e-9):
        raise ValueError(
            f"amplitude {amplitude_deg} deg needs a peak velocity of {peak:.1f} deg/s, "
            f"above the identity's bound of {p.saccade_peak_velocity:.1f} deg/s"
        )
    disp = raised_cosine_displacement(samples, amplitude_deg)
    return Segment(
        x=disp * np.cos(direction),
        y=disp * np.sin(direction),
        phases=np.full(samples, SACCADE, dtype=np.int8),
    )


def synth_fixation_segment(
    p: IdentityParams,
    duration_ms: float,
    rng: np.random.Generator,
    rate: float = 1000.0,
    t0_s: float = 0.0,
    with_noise: bool = True,
) -> Segment:
    """
    Drift random walk at `p.drift_speed`, a sinusoidal tremor, microsaccades
    with raised-cosine velocity profiles and (optionally) white measurement noise.
    `t0_s` keeps the tremor phase continuous across consecutive fixations.
    """
    if duration_ms <= 0:
        raise ValueError(f"fixation duration must be positive, got {duration_ms}")
    n = max(1, int(round(duration_ms * rate / 1000.0)))

    # drift: constant speed, slowly turning direction
    turn_sd = DRIFT_TURN_SD * math.sqrt(1000.0 / rate)
    heading = rng.uniform(0.0, 2 * np.pi) + np.cumsum(rng.normal(0.0, turn_sd, n))
    x = np.cumsum(p.drift_speed * np.cos(heading)) / rate
    y = np.cumsum(p.drift_speed * np.sin(heading)) / rate

    # tremor: position amplitude follows from the velocity amplitude
    t = t0_s + np.arange(n) / rate
    omega = 2 * np.pi * p.tremor_frequency
    tremor_amplitude = p.tremor_velocity_amplitude / omega
    x = x + tremor_amplitude * np.sin(omega * t)
    y = y + tremor_amplitude * np.cos(omega * t)

    phases = np.full(n, FIXATION, dtype=np.int8)
    onsets = []
    count = rng.poisson(p.microsaccade_rate * n / rate)
    if count:
        samples = max(1, int(round(p.microsaccade_duration_ms * rate / 1000.0)))
        amplitude = p.microsaccade_peak_velocity * samples / rate / 2.0
        free_from = 0
        for onset in np.sort(rng.integers(0, n, size=count)):
            direction = rng.uniform(0.0, 2 * np.pi)
            if onset < free_from or onset + samples > n:
                continue
            disp = raised_cosine_displacement(samples, amplitude)
            step = np.concatenate([disp, np.full(n - onset - samples, amplitude)])
            x[onset:] += step * np.cos(direction)
            y[onset:] += step * np.sin(direction)
            phases[onset:onset + samples] = MICROSACCADE
            onsets.append(int(onset))
            free_from = onset + samples

    if with_noise and p.noise_sd > 0:
        x = x + rng.normal(0.0, p.noise_sd, n)
        y = y + rng.normal(0.0, p.noise_sd, n)
    return Segment(x=x, y=y, phases=phases, microsaccade_onsets=onsets)
