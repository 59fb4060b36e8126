import json
import logging
import os
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


def _ensure_dir(path: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)


def save_table(path: str, rows: Sequence[Mapping], columns: Sequence[str], float_format: str = "%.10g"):
    """Write result rows to a CSV file. Infinite values are rejected; NaN is written as an empty cell."""
    frame = pd.DataFrame(list(rows), columns=list(columns))
    numeric = frame.select_dtypes(include=[np.number])
    if np.isinf(numeric.to_numpy(dtype=np.float64, na_value=0.0)).any():
        raise ValueError(f"Refusing to write infinite values to {path}")
    _ensure_dir(path)
    try:
        frame.to_csv(path, index=False, float_format=float_format, lineterminator="\n")
    except OSError as e:
        raise OSError(f"Cannot write table to `{path}`: {e}") from e
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def save_json(path: str, payload, sort_keys: bool = True):
    _ensure_dir(path)
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=sort_keys)
            f.write("\n")
    except OSError as e:
        raise OSError(f"Cannot write JSON to `{path}`: {e}") from e
    return path


def load_json(path: str):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def embeddings_rows(user_id: str, starts: Iterable[int], embeddings: np.ndarray):
    for start, vector in zip(starts, embeddings):
        row = {"user_id": user_id, "window_start": int(start)}
        row.update({f"e{i}": float(v) for i, v in enumerate(vector)})
        yield row
