import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from eyedentify.errors import EvaluationError, ShapeError
from eyedentify.models.model_manager import ModelBundle
from eyedentify.preprocessing.transforms import PreparedSequence, window_count

logger = logging.getLogger(__name__)

BinocularPair = Tuple[PreparedSequence, PreparedSequence]


@dataclass
class DurationAccuracy:
    duration_s: float
    accuracy: float
    stderr: float
    sequences: int

    def to_row(self) -> dict:
        return {
            "duration_s": self.duration_s,
            "accuracy": self.accuracy,
            "stderr": self.stderr,
            "sequences": self.sequences,
        }


def binocular_fuse(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Average the softmax outputs of the two eyes."""
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    if left.shape != right.shape:
        raise ShapeError(f"left and right probabilities differ in shape: {left.shape} vs {right.shape}")
    return (left + right) / 2.0


def _window_probs(bundle: ModelBundle, seq: PreparedSequence, stride: int, branch: str) -> np.ndarray:
    return bundle.predict_proba(seq.windows(bundle.window_length, stride), branch=branch)


def accuracy_vs_duration(
    bundle: ModelBundle,
    sequences: Sequence[Union[PreparedSequence, BinocularPair]],
    durations: Sequence[float],
    eval_stride: int = 250,
    branch: str = "joint",
    binocular: bool = False,
) -> List[DurationAccuracy]:
    """
    Accuracy after averaging the softmax outputs of every window that lies
    within the first d seconds of a sequence, for each duration d.

    With `binocular`, `sequences` holds (left, right) pairs of the same
    session and each window's outputs are the mean over both eyes.
    """
    label_index = {label: i for i, label in enumerate(bundle.class_labels)}
    length = bundle.window_length

    # (sequence id, rate, samples, window probabilities, label index)
    prepared: List[Tuple[str, float, int, np.ndarray, int]] = []
    for item in sequences:
        if binocular:
            if not (isinstance(item, tuple) and len(item) == 2):
                raise EvaluationError("binocular evaluation needs (left, right) sequence pairs")
            left, right = item
            n = min(len(left), len(right))
            p_left = _window_probs(bundle, left, eval_stride, branch)
            p_right = _window_probs(bundle, right, eval_stride, branch)
            count = min(len(p_left), len(p_right))
            probs = binocular_fuse(p_left[:count], p_right[:count])
            seq = left
        else:
            seq = item
            n = len(seq)
            probs = _window_probs(bundle, seq, eval_stride, branch)
        if seq.subject_id not in label_index:
            raise EvaluationError(f"sequence {seq.sequence_id} is labeled '{seq.subject_id}', not a training identity")
        prepared.append((seq.sequence_id, seq.rate, n, probs, label_index[seq.subject_id]))

    results = []
    for d in durations:
        hits = []
        for sequence_id, rate, n, probs, label in prepared:
            samples = int(round(d * rate))
            if samples < length:
                raise EvaluationError(f"duration {d} s is shorter than one window ({length} samples at {rate} Hz)")
            # n velocities span n + 1 gaze samples
            if n + 1 < samples:
                logger.warning(f"Excluding {sequence_id} from the {d} s point: only {(n + 1) / rate:.2f} s long")
                continue
            count = window_count(min(n, samples), length, eval_stride)
            hits.append(float(np.argmax(probs[:count].mean(axis=0)) == label))
        if not hits:
            raise EvaluationError(f"no test sequence is at least {d} s long")
        stderr = float(stats.sem(hits)) if len(hits) > 1 else float("nan")
        results.append(DurationAccuracy(duration_s=float(d), accuracy=float(np.mean(hits)), stderr=stderr, sequences=len(hits)))
        logger.info(f"{d:g} s: accuracy {results[-1].accuracy:.4f} over {len(hits)} sequence(s)")
    return results


def pair_binocular(sequences: Sequence[PreparedSequence]) -> List[BinocularPair]:
    """Match left and right sequences of the same subject, session and segment."""
    by_key: Dict[tuple, Dict[str, PreparedSequence]] = {}
    for seq in sequences:
        by_key.setdefault((seq.subject_id, seq.session_id, seq.segment), {})[seq.eye] = seq
    pairs = [(eyes["left"], eyes["right"]) for _, eyes in sorted(by_key.items()) if {"left", "right"} <= set(eyes)]
    if not pairs:
        raise EvaluationError("binocular evaluation needs left and right recordings, found monocular data only")
    return pairs
