import os
from typing import Dict, Iterable, List, Sequence

import numpy as np

from eyedentify.evaluation.classification import DurationAccuracy
from eyedentify.evaluation.identification import MatchTrace, ProtocolReport
from eyedentify.evaluation.metrics import RocCurve
from eyedentify.utils.save_results import embeddings_rows, save_table

DURATION_COLUMNS = ["duration_s", "accuracy", "stderr", "sequences"]
ROC_COLUMNS = ["threshold", "fpr", "tpr"]
ITERATION_COLUMNS = ["iteration", "setting", "duration_s", "auc", "eer"]
SUMMARY_COLUMNS = ["setting", "duration_s", "iterations", "auc_mean", "auc_stderr", "eer_mean", "eer_stderr"]
TTI_COLUMNS = ["setting", "target_fpr", "threshold", "identified", "attempts", "mean_time_s", "stderr_time_s"]
TRACE_COLUMNS = ["user_id", "template_id", "window_start", "end_s", "score", "running_max"]


def write_duration_accuracy(path: str, results: Sequence[DurationAccuracy]) -> str:
    return save_table(path, [r.to_row() for r in results], DURATION_COLUMNS)


def write_roc(path: str, curve: RocCurve) -> str:
    # the -inf start point is written as the lowest score minus one
    thresholds = curve.thresholds.copy()
    if len(thresholds) > 1 and np.isneginf(thresholds[0]):
        thresholds[0] = thresholds[1] - 1.0
    rows = [{"threshold": t, "fpr": f, "tpr": p} for t, f, p in zip(thresholds, curve.fpr, curve.tpr)]
    return save_table(path, rows, ROC_COLUMNS)


def write_protocol_report(out_dir: str, report: ProtocolReport, prefix: str) -> Dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "iterations": save_table(os.path.join(out_dir, f"{prefix}_iterations.csv"), report.iterations, ITERATION_COLUMNS),
        "summary": save_table(os.path.join(out_dir, f"{prefix}_summary.csv"), report.summary, SUMMARY_COLUMNS),
        "time_to_identification": save_table(
            os.path.join(out_dir, f"{prefix}_time_to_identification.csv"), report.time_to_identification, TTI_COLUMNS
        ),
    }
    for (setting, duration), curve in report.curves.items():
        paths[f"roc_{setting}_{duration:g}"] = write_roc(
            os.path.join(out_dir, f"{prefix}_roc_{setting}_{duration:g}s.csv"), curve
        )
    return paths


def trace_rows(user_id: str, template_id: str, trace: MatchTrace) -> List[dict]:
    return [
        {
            "user_id": user_id,
            "template_id": template_id,
            "window_start": int(s),
            "end_s": float(e),
            "score": float(v),
            "running_max": float(m),
        }
        for s, e, v, m in zip(trace.starts, trace.end_times, trace.scores, trace.running_max)
    ]


def write_traces(path: str, rows: Iterable[dict]) -> str:
    return save_table(path, list(rows), TRACE_COLUMNS)


def write_embeddings(path: str, per_user: Sequence[tuple]) -> str:
    """`per_user` holds (user_id, window starts, [n, dim] embeddings) triples."""
    rows = [row for user_id, starts, embeddings in per_user for row in embeddings_rows(user_id, starts, embeddings)]
    dim = per_user[0][2].shape[1] if per_user else 0
    return save_table(path, rows, ["user_id", "window_start"] + [f"e{i}" for i in range(dim)])
