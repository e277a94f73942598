"""Box-plot summaries of per-run metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class SummaryStats:
    count: int
    min: float
    q1: float
    median: float
    q3: float
    max: float

    def __post_init__(self):
        if self.count <= 0:
            raise ValueError("summary of an empty sample")
        if not self.min <= self.q1 <= self.median <= self.q3 <= self.max:
            raise ValueError("quartiles out of order")

    @classmethod
    def of(cls, values):
        """Summary of the finite entries of ``values``; None entries skipped."""
        v = np.asarray([x for x in values if x is not None], dtype=float)
        v = v[np.isfinite(v)]
        if v.size == 0:
            raise ValueError("summary of an empty sample")
        q1, med, q3 = np.percentile(v, [25, 50, 75])
        return cls(int(v.size), float(v.min()), float(q1), float(med), float(q3), float(v.max()))

    def to_dict(self):
        return asdict(self)


def summarize(metrics: dict):
    """name -> SummaryStats dict, skipping metrics with no finite values."""
    out = {}
    for name, values in metrics.items():
        try:
            out[name] = SummaryStats.of(values).to_dict()
        except ValueError:
            out[name] = None
    return out
