from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from typing import Union

import numpy as np

from ..errors import DataError
from ..types import FloatArray, RecordSet

DEFAULT_EDGES = (0.5, 1.0, 2.5, 5.0, 10.0)


@dataclass(frozen=True)
class DistributionReport:
    n: int
    mean: float
    variance: float
    edges: tuple[float, ...]
    histogram: tuple[int, ...]  # counts in [0,e0), [e0,e1), ..., [e_last, inf)
    tail_fractions: tuple[float, ...]  # fraction of labels above each edge

    def summary_lines(self) -> list[str]:
        lines = [f"records: {self.n}", f"mean: {self.mean:.3f}", f"variance: {self.variance:.3f}"]
        for e, frac in zip(self.edges, self.tail_fractions):
            lines.append(f"> {e:g}: {100.0 * frac:.2f}%  (< {e:g}: {100.0 * (1 - frac):.2f}%)")
        return lines


def distribution_report(
    data: Union[RecordSet, FloatArray, Sequence[float]],
    bucket_edges: Sequence[float] = DEFAULT_EDGES,
) -> DistributionReport:
    """Mean, population variance, histogram and tail fractions of the QoS labels."""
    values = data.value if isinstance(data, RecordSet) else np.asarray(data, dtype=np.float64)
    if len(values) == 0:
        raise DataError("distribution report needs at least one record")
    edges = tuple(sorted(float(e) for e in bucket_edges))
    bucket = np.searchsorted(np.asarray(edges), values, side="right")
    hist = np.bincount(bucket, minlength=len(edges) + 1)
    tails = tuple(float(np.mean(values > e)) for e in edges)
    return DistributionReport(
        n=len(values),
        mean=float(np.mean(values)),
        variance=float(np.var(values)),
        edges=edges,
        histogram=tuple(int(c) for c in hist),
        tail_fractions=tails,
    )
