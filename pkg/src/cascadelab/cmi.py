"""Composite Cascade Match Index: direction alignment and pooled z-scoring.

Error-type measures (M1-M7) and the two KL divergences (M8, M10) are negated
so that larger always means better, then each metric is z-scored across the
whole batch — all models pooled together, which is what makes the scores
comparable between models. The index is the mean of a row's valid z-scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import METRIC_NAMES, N_METRICS, MetricVector

# M9 is already a similarity; everything else is an error or divergence.
_NEGATE = np.array([True] * 8 + [False, True])

POPULARITY = slice(0, 3)
GROWTH = slice(3, 7)
ADOPTERS = slice(7, 10)


@dataclass
class CmiRow:
    hashtag: str
    model: str
    run: int
    z: np.ndarray
    valid: np.ndarray
    cmi: float
    popularity: float
    growth: float
    adopters: float


@dataclass
class CmiBatch:
    rows: list[CmiRow]
    dropped: list[str]  # metrics invalid across the entire batch

    def mean_cmi(self, model: str | None = None) -> float:
        vals = [r.cmi for r in self.rows if model is None or r.model == model]
        return float(np.mean(vals))


def _group_mean(z, valid, sl) -> float:
    v = valid[sl]
    return float(z[sl][v].mean()) if v.any() else float("nan")


def compose_cmi(vectors: list[MetricVector], *, per_hashtag: bool = False) -> CmiBatch:
    """Pooled z-scores and composite index for a labelled batch of metric vectors.

    Pooling is corpus-level by default; ``per_hashtag=True`` standardizes
    within each hashtag's slice instead. Population standard deviation is
    used, so the pooled z variance is exactly 1; zero-variance metric columns
    yield z = 0 for every row.
    """
    if not vectors:
        raise ValueError("empty metric batch")
    values = np.array([mv.values for mv in vectors])
    valid = np.array([mv.valid for mv in vectors])
    aligned = np.where(_NEGATE[None, :], -values, values)

    z = np.zeros_like(aligned)
    if per_hashtag:
        groups = {}
        for i, mv in enumerate(vectors):
            groups.setdefault(mv.hashtag, []).append(i)
        group_rows = list(groups.values())
    else:
        group_rows = [list(range(len(vectors)))]

    for rows in group_rows:
        rows = np.asarray(rows)
        for k in range(N_METRICS):
            ok = rows[valid[rows, k]]
            if len(ok) == 0:
                continue
            col = aligned[ok, k]
            sd = col.std()  # population SD: pooled z variance is exactly 1
            # identical columns can carry an O(eps) std from mean rounding;
            # they must still standardize to exactly zero
            if sd <= 1e-12 * max(1.0, float(np.abs(col).max())):
                z[ok, k] = 0.0
            else:
                z[ok, k] = (col - col.mean()) / sd

    dropped = [METRIC_NAMES[k] for k in range(N_METRICS) if not valid[:, k].any()]

    out = []
    for i, mv in enumerate(vectors):
        v = valid[i]
        cmi = float(z[i][v].mean()) if v.any() else float("nan")
        out.append(CmiRow(
            hashtag=mv.hashtag, model=mv.model, run=mv.run,
            z=z[i], valid=v, cmi=cmi,
            popularity=_group_mean(z[i], v, POPULARITY),
            growth=_group_mean(z[i], v, GROWTH),
            adopters=_group_mean(z[i], v, ADOPTERS),
        ))
    return CmiBatch(rows=out, dropped=dropped)
