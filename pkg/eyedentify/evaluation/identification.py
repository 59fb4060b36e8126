"""
Enrollment, template matching and the open-set identification and
verification protocols.

A user is identified once the cosine similarity between an observed window
and any window of the enrollment sequence exceeds the recognition threshold.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from eyedentify.errors import EnrollmentError, EvaluationError, ProtocolError, TemplateMismatchError
from eyedentify.evaluation.metrics import RocCurve, auc, cosine_matrix, eer, roc, threshold_at_fpr
from eyedentify.models.model_manager import EmbeddingVector, ModelBundle
from eyedentify.preprocessing.transforms import InputWindow, PreparedSequence
from eyedentify.pydantic_models.models import ProtocolSpec, WindowConfig
from eyedentify.utils.seeding import substream

logger = logging.getLogger(__name__)

# rng substream of the identity resampling
_RESAMPLE_KEY = 21


@dataclass
class EnrollmentTemplate:
    user_id: str
    embeddings: np.ndarray
    checkpoint_digest: Optional[str] = None

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2 or len(self.embeddings) == 0:
            raise EnrollmentError(f"template of '{self.user_id}' needs at least one embedding")

    def __len__(self):
        return len(self.embeddings)

    @property
    def window_embeddings(self) -> List[EmbeddingVector]:
        return [EmbeddingVector(e) for e in self.embeddings]


@dataclass
class MatchTrace:
    """Per-window best similarity to a template and its running maximum."""

    starts: np.ndarray
    scores: np.ndarray
    running_max: np.ndarray
    window_length: int
    rate: float

    @property
    def end_times(self) -> np.ndarray:
        return (self.starts + self.window_length) / self.rate


@dataclass
class ObservedEmbeddings:
    """Embeddings of the windows of one observed (test) sequence."""

    user_id: str
    embeddings: np.ndarray
    starts: np.ndarray
    rate: float


def enroll(
    bundle: ModelBundle,
    sequences: Sequence[PreparedSequence],
    stride: int = 1000,
    user_id: Optional[str] = None,
) -> EnrollmentTemplate:
    """Embed every window of the user's enrollment sequences at `stride`."""
    windows = [w for seq in sequences for w in seq.windows(bundle.window_length, stride)]
    if user_id is None:
        ids = sorted({seq.subject_id for seq in sequences})
        if len(ids) != 1:
            raise EnrollmentError(f"enrollment sequences must belong to one user, got {ids}")
        user_id = ids[0]
    if not windows:
        raise EnrollmentError(f"sequences of '{user_id}' are shorter than one window ({bundle.window_length} samples)")
    template = EnrollmentTemplate(user_id, bundle.embed_windows(windows), bundle.checkpoint_digest)
    logger.info(f"Enrolled '{user_id}' with {len(template)} window embedding(s)")
    return template


def match_embeddings(
    template: EnrollmentTemplate,
    embeddings: np.ndarray,
    starts: Optional[Sequence[int]] = None,
    window_length: int = 1000,
    rate: float = 1000.0,
) -> MatchTrace:
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if len(embeddings):
        scores = cosine_matrix(embeddings, template.embeddings).max(axis=1)
    else:
        scores = np.empty(0)
    starts = np.arange(len(scores)) * window_length if starts is None else np.asarray(starts, dtype=np.int64)
    return MatchTrace(
        starts=starts,
        scores=scores,
        running_max=np.maximum.accumulate(scores) if len(scores) else scores,
        window_length=window_length,
        rate=rate,
    )


def match_score(
    template: EnrollmentTemplate,
    test_windows: Sequence[InputWindow],
    bundle: ModelBundle,
    rate: float = 1000.0,
) -> MatchTrace:
    return match_embeddings(
        template,
        bundle.embed_windows(test_windows),
        starts=[w.start for w in test_windows],
        window_length=bundle.window_length,
        rate=rate,
    )


def first_acceptance_time(trace: MatchTrace, threshold: float) -> Optional[float]:
    accepted = np.nonzero(trace.running_max > threshold)[0]
    return float(trace.end_times[accepted[0]]) if len(accepted) else None


def time_to_identification(
    bundle: ModelBundle,
    template: EnrollmentTemplate,
    stream: PreparedSequence,
    threshold: float,
    stride: int = 250,
) -> Optional[float]:
    """Seconds until the end of the first window whose running max exceeds `threshold`; None if never."""
    windows = stream.windows(bundle.window_length, stride)
    return first_acceptance_time(match_score(template, windows, bundle, rate=stream.rate), threshold)


@dataclass
class ProtocolSplit:
    train: List[str]
    enrolled: List[str]
    impostors: List[str]


def resample_protocol(
    identities: Sequence[str],
    spec: Union[ProtocolSpec, Tuple[int, int, int]],
    rng: Union[np.random.Generator, int],
) -> ProtocolSplit:
    """Draw disjoint training, enrolled and impostor identity sets."""
    counts = (
        (spec.train_identities, spec.enrolled_identities, spec.impostor_identities)
        if isinstance(spec, ProtocolSpec)
        else tuple(spec)
    )
    n_train, n_enrolled, n_impostors = counts
    pool = sorted(set(identities))
    if sum(counts) > len(pool):
        raise ProtocolError(
            f"split {n_train}/{n_enrolled}/{n_impostors} needs {sum(counts)} identities, only {len(pool)} available"
        )
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    order = [pool[i] for i in rng.permutation(len(pool))]
    return ProtocolSplit(
        train=sorted(order[:n_train]),
        enrolled=sorted(order[n_train:n_train + n_enrolled]),
        impostors=sorted(order[n_train + n_enrolled:sum(counts)]),
    )


def observe(bundle: ModelBundle, sequences: Sequence[PreparedSequence], stride: int) -> ObservedEmbeddings:
    """Embed the longest of a user's test sequences."""
    seq = max(sequences, key=len)
    windows = seq.windows(bundle.window_length, stride)
    return ObservedEmbeddings(
        user_id=seq.subject_id,
        embeddings=bundle.embed_windows(windows) if windows else np.empty((0, bundle.embedding_size)),
        starts=np.array([w.start for w in windows], dtype=np.int64),
        rate=seq.rate,
    )


def _windows_within(observed: ObservedEmbeddings, duration_s: float, window_length: int) -> int:
    return int(np.sum(observed.starts + window_length <= int(round(duration_s * observed.rate))))


def identification_scores(
    similarities: Dict[Tuple[str, str], np.ndarray],
    counts: Dict[str, int],
    enrolled: Sequence[str],
    impostors: Sequence[str],
) -> Dict[str, List[float]]:
    """
    Decision statistics of every (observed user, template) pair.

    `similarities[(user, template_user)]` holds the per-window best similarity
    of the user's observed windows to that template, `counts[user]` how many of
    those windows lie within the evaluated duration.
    """
    out = {"genuine": [], "confusion": [], "impostor": []}
    for user in enrolled:
        if counts[user] == 0:
            continue
        for owner in enrolled:
            score = float(similarities[(user, owner)][:counts[user]].max())
            out["genuine" if owner == user else "confusion"].append(score)
    for user in impostors:
        if counts[user] == 0:
            continue
        for owner in enrolled:
            out["impostor"].append(float(similarities[(user, owner)][:counts[user]].max()))
    return out


@dataclass
class ProtocolReport:
    iterations: List[dict] = field(default_factory=list)
    summary: List[dict] = field(default_factory=list)
    curves: Dict[Tuple[str, float], RocCurve] = field(default_factory=dict)
    time_to_identification: List[dict] = field(default_factory=list)


def _mean_sem(values: Sequence[float]) -> Tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    return float(values.mean()), float(stats.sem(values)) if len(values) > 1 else float("nan")


def run_protocol(
    bundle: ModelBundle,
    enroll_sequences: Dict[str, List[PreparedSequence]],
    test_sequences: Dict[str, List[PreparedSequence]],
    spec: ProtocolSpec,
    windows: WindowConfig,
    seed: int = 0,
    verification: bool = False,
) -> ProtocolReport:
    """
    Repeatedly split the identities unseen in training into enrolled users
    and impostors and measure ROC, AUC and EER per duration.

    In verification mode a single user is enrolled per iteration and the
    impostor matches form the negative class.
    """
    training = set(bundle.class_labels)
    pool = sorted((set(enroll_sequences) & set(test_sequences)) - training)
    excluded = sorted((set(enroll_sequences) | set(test_sequences)) & training)
    if excluded:
        logger.info(f"Leaving out {len(excluded)} training identities from the protocol")
    n_enrolled = 1 if verification else spec.enrolled_identities
    if n_enrolled + spec.impostor_identities > len(pool):
        raise ProtocolError(
            f"protocol needs {n_enrolled} enrolled and {spec.impostor_identities} impostor identities "
            f"outside the training set, only {len(pool)} available"
        )

    templates = {u: enroll(bundle, enroll_sequences[u], windows.enroll_stride, user_id=u) for u in pool}
    observed = {u: observe(bundle, test_sequences[u], windows.eval_stride) for u in pool}
    similarities = {
        (u, t): match_embeddings(templates[t], observed[u].embeddings).scores for u in pool for t in pool
    }

    durations = []
    for d in spec.durations:
        counts = {u: _windows_within(observed[u], d, bundle.window_length) for u in pool}
        if any(counts.values()):
            durations.append((d, counts))
        else:
            logger.warning(f"Skipping the {d} s point: no observed sequence is that long")
    if not durations:
        raise EvaluationError("no protocol duration fits the observed sequences")

    settings = ("verification",) if verification else ("confusion", "impostor")
    negatives_of = {"verification": "impostor", "confusion": "confusion", "impostor": "impostor"}
    rng = substream(seed, _RESAMPLE_KEY)
    report = ProtocolReport()
    pooled = {(s, d): ([], []) for s in settings for d, _ in durations}
    split_per_iteration = []

    for iteration in range(spec.iterations):
        split = resample_protocol(pool, (0, n_enrolled, spec.impostor_identities), rng)
        split_per_iteration.append(split)
        for d, counts in durations:
            scores = identification_scores(similarities, counts, split.enrolled, split.impostors)
            for setting in settings:
                genuine, negative = scores["genuine"], scores[negatives_of[setting]]
                pooled[(setting, d)][0].extend(genuine)
                pooled[(setting, d)][1].extend(negative)
                if not genuine or not negative:
                    continue
                curve = roc(genuine, negative, setting=setting)
                report.iterations.append({
                    "iteration": iteration,
                    "setting": setting,
                    "duration_s": d,
                    "auc": auc(curve),
                    "eer": eer(curve),
                })

    for setting in settings:
        for d, _ in durations:
            rows = [r for r in report.iterations if r["setting"] == setting and r["duration_s"] == d]
            if not rows:
                continue
            auc_mean, auc_sem = _mean_sem([r["auc"] for r in rows])
            eer_mean, eer_sem = _mean_sem([r["eer"] for r in rows])
            report.summary.append({
                "setting": setting,
                "duration_s": d,
                "iterations": len(rows),
                "auc_mean": auc_mean,
                "auc_stderr": auc_sem,
                "eer_mean": eer_mean,
                "eer_stderr": eer_sem,
            })
            genuine, negative = pooled[(setting, d)]
            report.curves[(setting, d)] = roc(genuine, negative, setting=setting)
            logger.info(f"{setting} @ {d:g} s: AUC {auc_mean:.4f} ± {auc_sem:.4f}, EER {eer_mean:.4f} ± {eer_sem:.4f}")

    # threshold per setting from the pooled curve at the longest duration
    longest = durations[-1][0]
    for setting in settings:
        curve = report.curves.get((setting, longest))
        if curve is None:
            continue
        threshold = threshold_at_fpr(curve, spec.target_fpr)
        times = []
        attempts = 0
        for split in split_per_iteration:
            for user in split.enrolled:
                attempts += 1
                trace = match_embeddings(
                    templates[user], observed[user].embeddings, observed[user].starts, bundle.window_length, observed[user].rate
                )
                t = first_acceptance_time(trace, threshold)
                if t is not None:
                    times.append(t)
        mean_t, sem_t = _mean_sem(times) if times else (float("nan"), float("nan"))
        report.time_to_identification.append({
            "setting": setting,
            "target_fpr": spec.target_fpr,
            "threshold": threshold,
            "identified": len(times),
            "attempts": attempts,
            "mean_time_s": mean_t,
            "stderr_time_s": sem_t,
        })
    return report


def run_identification(bundle, enroll_sequences, test_sequences, spec, windows, seed: int = 0) -> ProtocolReport:
    return run_protocol(bundle, enroll_sequences, test_sequences, spec, windows, seed=seed, verification=False)


def run_verification(bundle, enroll_sequences, test_sequences, spec, windows, seed: int = 0) -> ProtocolReport:
    return run_protocol(bundle, enroll_sequences, test_sequences, spec, windows, seed=seed, verification=True)


def save_template(path: str, template: EnrollmentTemplate) -> str:
    with open(path, "wb") as f:
        np.savez(
            f,
            user_id=np.array(template.user_id),
            embeddings=template.embeddings,
            checkpoint_digest=np.array(template.checkpoint_digest or ""),
        )
    return path


def load_template(path: str, expected_digest: Optional[str] = None) -> EnrollmentTemplate:
    """
    Raises:
        TemplateMismatchError: the template was enrolled with another checkpoint.
    """
    with np.load(path, allow_pickle=False) as data:
        template = EnrollmentTemplate(
            user_id=str(data["user_id"]),
            embeddings=data["embeddings"],
            checkpoint_digest=str(data["checkpoint_digest"]) or None,
        )
    if expected_digest is not None and template.checkpoint_digest != expected_digest:
        raise TemplateMismatchError(
            f"template {path} was enrolled with checkpoint {template.checkpoint_digest}, not {expected_digest}"
        )
    return template
