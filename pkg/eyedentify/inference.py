import logging
from typing import Dict, List, Optional, Sequence

import numpy as np

from eyedentify.errors import EnrollmentError
from eyedentify.evaluation.classification import DurationAccuracy, accuracy_vs_duration, pair_binocular
from eyedentify.evaluation.identification import (
    EnrollmentTemplate,
    MatchTrace,
    enroll,
    first_acceptance_time,
    match_score,
)
from eyedentify.models.checkpoint import load_checkpoint, save_checkpoint
from eyedentify.models.model_manager import STAGES, EmbeddingVector, ModelBundle, embed
from eyedentify.models.training import train_bundle
from eyedentify.oculosim.dataset import DatasetEntry
from eyedentify.preprocessing.recording import GazeRecording, to_velocities
from eyedentify.preprocessing.transforms import InputWindow, PreparedSequence, fit_zscore, prepare_sequence
from eyedentify.pydantic_models.models import RunConfig
from eyedentify.utils.get_resource import get_resource
from eyedentify.utils.timer import Timer

logger = logging.getLogger(__name__)


def recordings_of(
    entries: Sequence[DatasetEntry],
    sessions: Optional[Sequence[str]] = None,
    subjects: Optional[Sequence[str]] = None,
) -> List[GazeRecording]:
    return [
        rec
        for e in entries
        if (sessions is None or e.session_id in sessions) and (subjects is None or e.subject_id in subjects)
        for rec in e.recordings
    ]


def group_by_subject(sequences: Sequence[PreparedSequence]) -> Dict[str, List[PreparedSequence]]:
    grouped: Dict[str, List[PreparedSequence]] = {}
    for seq in sequences:
        grouped.setdefault(seq.subject_id, []).append(seq)
    return grouped


class DeepEyedentification:
    """
    A trained (or partially trained) model together with the preprocessing it
    was trained with. Recordings go in; class probabilities, embeddings,
    templates and match traces come out.
    """

    def __init__(self, checkpoint: Optional[str] = None, bundle: Optional[ModelBundle] = None, device: str = "cpu"):
        if (checkpoint is None) == (bundle is None):
            raise ValueError("pass either a checkpoint path or a model bundle")
        self.timer = Timer()
        if checkpoint is not None:
            bundle = load_checkpoint(get_resource(checkpoint), device=device)
            self.timer("Load checkpoint")
        self.bundle = bundle
        self.training_log: Optional[dict] = None
        # wall-clock ms per step of the last `train` call
        self.timings: Dict[str, float] = {}

    @classmethod
    def train(
        cls,
        cfg: RunConfig,
        entries: Sequence[DatasetEntry],
        stages: Sequence[str] = STAGES,
        init_checkpoint: Optional[str] = None,
        progress: bool = True,
        device: str = "cpu",
        log_path: Optional[str] = None,
    ) -> "DeepEyedentification":
        """
        Fit z-scores and run the requested training stages on the training
        sessions of `entries`. With `init_checkpoint`, training resumes from
        that bundle and reuses its z-scores and class labels.
        """
        timer = Timer()
        recordings = recordings_of(entries, cfg.data.train_sessions, cfg.data.train_subjects)
        if not recordings:
            raise ValueError("no training recordings (check data.train_sessions and data.train_subjects)")
        velocities = [to_velocities(rec) for rec in recordings]

        if init_checkpoint is not None:
            bundle = load_checkpoint(get_resource(init_checkpoint), device=device)
        else:
            stats = fit_zscore(velocities, cfg.transform)
            labels = sorted({v.subject_id for v in velocities})
            bundle = ModelBundle.from_run_config(cfg, labels, zscore=stats, device=device)
        timer("Prepare model")

        model = cls(bundle=bundle)
        windows = [
            w
            for seq in model.prepare(recordings)
            for w in seq.windows(bundle.window_length, cfg.windows.train_stride)
        ]
        logger.info(f"Training on {len(windows)} windows of {bundle.class_count} identities")
        log = train_bundle(bundle, windows, cfg.schedule, stages=stages, progress=progress, log_path=log_path, timer=timer)
        model.training_log = log
        model.timings = timer.get_times()
        return model

    def save(self, path: str) -> str:
        return save_checkpoint(self.bundle, path)

    @property
    def checkpoint_digest(self) -> Optional[str]:
        return self.bundle.checkpoint_digest

    def prepare(self, recordings: Sequence[GazeRecording]) -> List[PreparedSequence]:
        """Velocities and both input transforms for every recording."""
        if self.bundle.zscore is None:
            raise ValueError("model has no z-score statistics; it was never fitted on training data")
        return [prepare_sequence(to_velocities(rec), self.bundle.transform, self.bundle.zscore) for rec in recordings]

    def windows(self, recordings: Sequence[GazeRecording], stride: int) -> List[InputWindow]:
        return [w for seq in self.prepare(recordings) for w in seq.windows(self.bundle.window_length, stride)]

    def classify(self, windows: Sequence[InputWindow], branch: str = "joint") -> np.ndarray:
        return self.bundle.predict_proba(windows, branch=branch)

    def embed(self, window: InputWindow) -> EmbeddingVector:
        return embed(self.bundle, window)

    def accuracy_vs_duration(
        self,
        recordings: Sequence[GazeRecording],
        durations: Sequence[float],
        stride: int,
        branch: str = "joint",
        binocular: bool = False,
    ) -> List[DurationAccuracy]:
        sequences = self.prepare(recordings)
        if binocular:
            sequences = pair_binocular(sequences)
        return accuracy_vs_duration(self.bundle, sequences, durations, stride, branch=branch, binocular=binocular)

    def enroll(self, recordings: Sequence[GazeRecording], stride: int = 1000, user_id: Optional[str] = None) -> EnrollmentTemplate:
        if not recordings:
            raise EnrollmentError("no enrollment recordings")
        return enroll(self.bundle, self.prepare(recordings), stride, user_id=user_id)

    def match(self, template: EnrollmentTemplate, recording: GazeRecording, stride: int = 250) -> MatchTrace:
        (seq,) = self.prepare([recording])
        return match_score(template, seq.windows(self.bundle.window_length, stride), self.bundle, rate=seq.rate)

    def identify(
        self, templates: Sequence[EnrollmentTemplate], recording: GazeRecording, threshold: float, stride: int = 250
    ) -> Dict[str, Optional[float]]:
        """Time at which each template is first accepted for `recording` (None if never)."""
        return {t.user_id: first_acceptance_time(self.match(t, recording, stride), threshold) for t in templates}
