"""DTW between silent and vocal feature sequences, and path -> duration conversion.

Indices in :class:`AlignmentPath` are 0-based (i over the silent sequence,
j over the vocal/target sequence).
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist


class AlignmentError(ValueError):
    pass


@dataclass
class AlignmentPath:
    pairs: np.ndarray  # (K, 2) int, rows (i, j)
    total_cost: float

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)

    def __len__(self):
        return len(self.pairs)

    def validate(self, N, M):
        p = self.pairs
        if len(p) == 0:
            raise AlignmentError("empty path")
        if tuple(p[0]) != (0, 0) or tuple(p[-1]) != (N - 1, M - 1):
            raise AlignmentError(f"path must run from (0, 0) to ({N - 1}, {M - 1})")
        steps = np.diff(p, axis=0)
        if np.any((steps < 0) | (steps > 1)) or np.any(steps.sum(axis=1) == 0):
            raise AlignmentError("path steps must be (1,0), (0,1) or (1,1)")


def _as_frames(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] == 0:
        raise AlignmentError(f"expected a non-empty (T, D) sequence, got shape {a.shape}")
    return a


def distance_matrix(a, b):
    """Pairwise Euclidean distances between rows of ``a`` and ``b``."""
    a, b = _as_frames(a), _as_frames(b)
    if a.shape[1] != b.shape[1]:
        raise AlignmentError(f"feature width mismatch: {a.shape[1]} vs {b.shape[1]}")
    return cdist(a, b)


def accumulate(cost):
    """Accumulated-cost table for the step set {(1,0), (0,1), (1,1)}."""
    N, M = cost.shape
    D = np.empty((N, M))
    D[0] = np.cumsum(cost[0])
    for i in range(1, N):
        prev = D[i - 1]
        # diagonal / vertical predecessors are known for the whole row
        best = np.empty(M)
        best[0] = prev[0]
        best[1:] = np.minimum(prev[:-1], prev[1:])
        row = cost[i] + best
        # horizontal predecessors are sequential within the row
        c = cost[i]
        for j in range(1, M):
            h = row[j - 1] + c[j]
            if h < row[j]:
                row[j] = h
        D[i] = row
    return D


def backtrack(D):
    """Recover the path from (N-1, M-1); ties prefer diagonal, then (i, j-1), then (i-1, j)."""
    i, j = D.shape[0] - 1, D.shape[1] - 1
    pairs = [(i, j)]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag, horiz, vert = D[i - 1, j - 1], D[i, j - 1], D[i - 1, j]
            if diag <= horiz and diag <= vert:
                i, j = i - 1, j - 1
            elif horiz <= vert:
                j -= 1
            else:
                i -= 1
        pairs.append((i, j))
    return np.array(pairs[::-1], dtype=np.int64)


def dtw_from_cost(cost) -> AlignmentPath:
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or 0 in cost.shape:
        raise AlignmentError("cost matrix must be non-empty 2-D")
    D = accumulate(cost)
    return AlignmentPath(backtrack(D), float(D[-1, -1]))


def dtw_basic(X, x) -> AlignmentPath:
    """Align silent features ``X`` (N frames) to vocal features ``x`` (M frames)."""
    return dtw_from_cost(distance_matrix(X, x))


def dtw_refined(X, x, mel_pred, mel_target, lambda_align) -> AlignmentPath:
    """DTW on EMG distance plus ``lambda_align`` times predicted-vs-target mel distance.

    ``mel_pred`` is the N-frame model output with the length regulator
    bypassed; ``mel_target`` holds the M target frames.
    """
    X, x = _as_frames(X), _as_frames(x)
    mel_pred, mel_target = _as_frames(mel_pred), _as_frames(mel_target)
    if len(mel_pred) != len(X):
        raise AlignmentError(f"predicted mel has {len(mel_pred)} frames, EMG has {len(X)}")
    if len(mel_target) != len(x):
        raise AlignmentError(f"target mel has {len(mel_target)} frames, vocal EMG has {len(x)}")
    if lambda_align < 0:
        raise AlignmentError("lambda_align must be non-negative")
    cost = distance_matrix(X, x)
    if lambda_align:
        cost = cost + lambda_align * distance_matrix(mel_pred, mel_target)
    return dtw_from_cost(cost)


def path_to_targets(path: AlignmentPath, M):
    """A[j] = largest source index paired with target frame j."""
    A = np.full(M, -1, dtype=np.int64)
    np.maximum.at(A, path.pairs[:, 1], path.pairs[:, 0])
    return A


def path_to_durations(path: AlignmentPath, N, M):
    """Durations d[i] = number of target frames whose aligned source frame is i."""
    path.validate(N, M)
    A = path_to_targets(path, M)
    d = np.bincount(A, minlength=N)
    assert d.sum() == M
    return d


def durations_from_targets(A, N):
    A = np.asarray(A, dtype=np.int64)
    if np.any(A < 0) or np.any(A >= N):
        raise AlignmentError("target map index out of range")
    return np.bincount(A, minlength=N)
