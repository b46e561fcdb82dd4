"""Wall-clock accounting of pipeline steps."""

import time
from collections import defaultdict
from contextlib import contextmanager


class StepTimer:
    """Accumulates monotonic wall time per named step.

    >>> t = StepTimer()
    >>> with t("svd"):
    ...     pass
    >>> sorted(t.times)
    ['svd']
    """

    def __init__(self):
        self.times = defaultdict(float)

    @contextmanager
    def __call__(self, step):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.times[step] += time.perf_counter() - start

    def total(self):
        return sum(self.times.values())

    def as_dict(self):
        return dict(self.times)


class _NullTimer:
    @contextmanager
    def __call__(self, step):
        yield


NULL_TIMER = _NullTimer()
