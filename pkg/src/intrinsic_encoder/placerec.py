"""Sequence-based place recognition over latent maps or raw images.

The evaluator builds a query x reference dissimilarity matrix, applies the
local column-wise contrast enhancement of sequence-matching localizers,
sums scores along frame-synchronized diagonals, and reports the fraction
of queries matched within an index tolerance. Histogram equalization is
provided for visualizing latent maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, DataError, ShapeError

SIGMA_FLOOR = 1e-9
DEFAULT_WINDOW = 10


@dataclass
class DifferenceMatrix:
    """Query x reference dissimilarities; `enhanced` marks contrast-normalized values."""

    values: np.ndarray
    enhanced: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class MatchResult:
    """Best reference per query under a fixed sequence length."""

    indices: np.ndarray  # (Q,) best reference index per query
    scores: np.ndarray   # (Q,) the matched sequence score
    seq_length: int


def _flatten_set(reps) -> np.ndarray:
    arr = np.asarray(reps, dtype=np.float64)
    if arr.ndim < 2:
        raise ShapeError(f"need a stack of representations, got shape {arr.shape}")
    return arr.reshape(arr.shape[0], -1)


def difference_matrix(query_reps, ref_reps) -> DifferenceMatrix:
    """D[i, j] = mean absolute difference between query i and reference j."""
    q = _flatten_set(query_reps)
    r = _flatten_set(ref_reps)
    if q.shape[1] != r.shape[1]:
        raise ShapeError(
            f"query and reference representations differ in size: {q.shape[1]} vs {r.shape[1]}"
        )
    out = np.empty((q.shape[0], r.shape[0]), dtype=np.float64)
    for i in range(q.shape[0]):  # row-chunked to bound memory
        out[i] = np.abs(r - q[i]).mean(axis=1)
    return DifferenceMatrix(values=out, enhanced=False)


def contrast_enhance(matrix: DifferenceMatrix | np.ndarray,
                     window: int = DEFAULT_WINDOW) -> DifferenceMatrix:
    """Column-wise local standardization over a vertical window of half-width `window`."""
    if window < 1:
        raise ConfigError(f"window must be >= 1, got {window}")
    d = matrix.values if isinstance(matrix, DifferenceMatrix) else np.asarray(matrix, np.float64)
    q = d.shape[0]
    out = np.empty_like(d, dtype=np.float64)
    for i in range(q):
        lo, hi = max(0, i - window), min(q, i + window + 1)
        block = d[lo:hi]
        mu = block.mean(axis=0)
        sigma = np.sqrt(((block - mu) ** 2).mean(axis=0))
        out[i] = (d[i] - mu) / np.maximum(sigma, SIGMA_FLOOR)
    return DifferenceMatrix(values=out, enhanced=True)


def sequence_match(matrix: DifferenceMatrix | np.ndarray, seq_length: int = 1,
                   velocities: tuple[float, ...] = (1.0,)) -> MatchResult:
    """Best reference per query by averaging along aligned trajectories.

    score(i, j) averages D[i - t, j - round(v * t)] over the available past
    (queries or references with short history use the truncated prefix, so
    every query gets a score). The default single velocity 1.0 matches
    frame-synchronized footage; pass a sweep for unsynchronized data.
    """
    if seq_length < 1:
        raise ConfigError(f"seq_length must be >= 1, got {seq_length}")
    if not velocities:
        raise ConfigError("need at least one trajectory velocity")
    d = matrix.values if isinstance(matrix, DifferenceMatrix) else np.asarray(matrix, np.float64)
    if d.ndim != 2 or d.shape[0] == 0 or d.shape[1] == 0:
        raise DataError(f"difference matrix is empty: shape {d.shape}")
    nq, nr = d.shape
    best = np.full((nq, nr), np.inf)
    for v in velocities:
        sums = np.zeros((nq, nr))
        counts = np.zeros((nq, nr))
        for t in range(seq_length):
            dj = int(round(v * t))
            if t >= nq or dj >= nr:
                break
            # D[i - t, j - dj] contributes to (i, j) for i >= t, j >= dj
            sums[t:, dj:] += d[: nq - t, : nr - dj]
            counts[t:, dj:] += 1.0
        best = np.minimum(best, sums / counts)
    indices = best.argmin(axis=1)
    scores = best[np.arange(nq), indices]
    return MatchResult(indices=indices, scores=scores, seq_length=seq_length)


def accuracy(result: MatchResult, truth, max_distance: int = 1) -> float:
    """Fraction of queries whose match lies within `max_distance` of the truth index."""
    n = len(result.indices)
    truth_arr = np.empty(n, dtype=np.int64)
    if isinstance(truth, dict):
        for i in range(n):
            if i not in truth:
                raise DataError(f"no ground-truth reference for query {i}")
            truth_arr[i] = truth[i]
    else:
        truth_seq = np.asarray(truth)
        if truth_seq.shape[0] < n:
            raise DataError(
                f"ground truth covers {truth_seq.shape[0]} queries, need {n}"
            )
        truth_arr = truth_seq[:n].astype(np.int64)
    return float(np.mean(np.abs(result.indices - truth_arr) <= max_distance))


def histogram_equalize(rep) -> np.ndarray:
    """Per-channel empirical-CDF remap to uint8; constant channels become mid-gray."""
    arr = np.asarray(rep, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[None]
    if arr.ndim != 3:
        raise ShapeError(f"expected (C, H, W) or (H, W), got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise DataError("representation contains non-finite values")
    channels = []
    for c in range(arr.shape[0]):
        flat = arr[c].ravel()
        if flat.max() == flat.min() or flat.size == 1:
            channels.append(np.full(arr.shape[1:], 128, dtype=np.uint8))
            continue
        ranks = rankdata(flat, method="average") - 1.0
        levels = np.round(255.0 * ranks / (flat.size - 1.0))
        channels.append(levels.reshape(arr.shape[1:]).astype(np.uint8))
    out = np.stack(channels, axis=-1)  # (H, W, C)
    return out[..., 0] if squeeze else out


def evaluate_retrieval(query_reps, ref_reps, seq_lengths=(1, 4), max_distance: int = 1,
                       window: int = DEFAULT_WINDOW, velocities=(1.0,),
                       truth=None) -> list[dict]:
    """Full pipeline for one query/reference pair; one metrics row per sequence length.

    Ground truth defaults to the identity map (frame index == place index).
    Row keys `len` and `dis` match the emitted metric-file columns.
    """
    d = difference_matrix(query_reps, ref_reps)
    enhanced = contrast_enhance(d, window=window)
    nq = d.values.shape[0]
    if truth is None:
        truth = np.arange(nq)
    rows = []
    for seq_length in seq_lengths:
        result = sequence_match(enhanced, seq_length=seq_length, velocities=tuple(velocities))
        rows.append({
            "len": int(seq_length),
            "dis": int(max_distance),
            "accuracy": accuracy(result, truth, max_distance=max_distance),
            "num_queries": int(nq),
        })
    return rows
