"""
Similarity and ROC metrics.

A score is accepted at threshold `th` when it is strictly greater than `th`.
The sweep runs over -inf and every distinct observed score, so the curve
starts at (fpr 1, tpr 1) and ends at (fpr 0, tpr 0).
"""
from dataclasses import dataclass
from typing import List, Literal, Sequence, Tuple, Union

import numpy as np

from eyedentify.errors import EvaluationError, UndefinedSimilarityError
from eyedentify.models.model_manager import EmbeddingVector

Setting = Literal["confusion", "impostor", "verification"]
Vector = Union[EmbeddingVector, np.ndarray, Sequence[float]]


def _values(v: Vector) -> np.ndarray:
    return v.values if isinstance(v, EmbeddingVector) else np.asarray(v, dtype=np.float64)


def cosine(u: Vector, v: Vector) -> float:
    a, b = _values(u), _values(v)
    if a.shape != b.shape:
        raise ValueError(f"vectors differ in length: {a.shape} vs {b.shape}")
    norm_a = u.norm if isinstance(u, EmbeddingVector) else float(np.linalg.norm(a))
    norm_b = v.norm if isinstance(v, EmbeddingVector) else float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise UndefinedSimilarityError("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))


def unit_rows(matrix: np.ndarray) -> np.ndarray:
    """Rows scaled to unit length; zero rows raise UndefinedSimilarityError."""
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if (norms == 0).any():
        raise UndefinedSimilarityError("cosine similarity of a zero vector is undefined")
    return matrix / norms


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities [len(a), len(b)]."""
    return np.clip(unit_rows(a) @ unit_rows(b).T, -1.0, 1.0)


@dataclass
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    setting: Setting = "verification"
    genuine_count: int = 0
    impostor_count: int = 0

    @property
    def points(self) -> List[Tuple[float, float, float]]:
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()))

    @property
    def fnr(self) -> np.ndarray:
        return 1.0 - self.tpr


def _accepted(sorted_scores: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    return len(sorted_scores) - np.searchsorted(sorted_scores, thresholds, side="right")


def roc(genuine: Sequence[float], impostor: Sequence[float], setting: Setting = "verification") -> RocCurve:
    genuine = np.sort(np.asarray(genuine, dtype=np.float64))
    impostor = np.sort(np.asarray(impostor, dtype=np.float64))
    if len(genuine) == 0 or len(impostor) == 0:
        raise EvaluationError(
            f"ROC needs genuine and impostor scores, got {len(genuine)} genuine and {len(impostor)} impostor"
        )
    if not (np.isfinite(genuine).all() and np.isfinite(impostor).all()):
        raise EvaluationError("scores must be finite")
    thresholds = np.concatenate([[-np.inf], np.unique(np.concatenate([genuine, impostor]))])
    return RocCurve(
        thresholds=thresholds,
        fpr=_accepted(impostor, thresholds) / len(impostor),
        tpr=_accepted(genuine, thresholds) / len(genuine),
        setting=setting,
        genuine_count=len(genuine),
        impostor_count=len(impostor),
    )


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the curve."""
    # points run from fpr 1 down to fpr 0
    fpr, tpr = curve.fpr[::-1], curve.tpr[::-1]
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))


def eer(curve: RocCurve) -> float:
    """Error rate where fpr = fnr, interpolated linearly between the bracketing points."""
    fpr, fnr = curve.fpr, curve.fnr
    gap = fpr - fnr
    i = int(np.argmax(gap <= 0))
    if gap[i] == 0 or i == 0:
        return float((fpr[i] + fnr[i]) / 2.0)
    alpha = gap[i - 1] / (gap[i - 1] - gap[i])
    fpr_at = fpr[i - 1] + alpha * (fpr[i] - fpr[i - 1])
    fnr_at = fnr[i - 1] + alpha * (fnr[i] - fnr[i - 1])
    return float((fpr_at + fnr_at) / 2.0)


def threshold_at_fpr(curve: RocCurve, target_fpr: float) -> float:
    """Lowest threshold of the sweep whose false-positive rate does not exceed `target_fpr`."""
    if not 0.0 <= target_fpr <= 1.0:
        raise ValueError(f"target false-positive rate must lie in [0, 1], got {target_fpr}")
    return float(curve.thresholds[int(np.argmax(curve.fpr <= target_fpr))])
