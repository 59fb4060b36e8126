import logging
import time
from contextlib import contextmanager
from typing import Dict

logger = logging.getLogger(__name__)


class Timer:
    """
    Wall-clock durations of named steps in milliseconds.

    `timer("step")` closes a lap since the previous call (or reset);
    `with timer.stage("step"):` times a block. Repeated names accumulate.
    The durations are written to `timings.json` next to training outputs and
    never into checkpoints or training logs, which stay reproducible.
    """

    def __init__(self):
        self.reset()

    def reset(self):
        self.previous_time = time.perf_counter()
        self.times: Dict[str, float] = {}

    def _record(self, description: str, elapsed_ms: float) -> float:
        self.times[description] = self.times.get(description, 0.0) + elapsed_ms
        logger.info(f"{description} time: {elapsed_ms:.1f} ms")
        return elapsed_ms

    def __call__(self, description: str) -> float:
        new_time = time.perf_counter()
        elapsed = self._record(description, 1000 * (new_time - self.previous_time))
        self.previous_time = new_time
        return elapsed

    @contextmanager
    def stage(self, description: str):
        start = time.perf_counter()
        try:
            yield self
        finally:
            self._record(description, 1000 * (time.perf_counter() - start))
            self.previous_time = time.perf_counter()

    def get_times(self) -> Dict[str, float]:
        return dict(self.times)
