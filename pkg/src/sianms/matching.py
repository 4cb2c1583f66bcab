"""Cross-camera detection matching on embedding distances.

For each adjacent camera pair, a distance matrix over same-class detections
is solved with the Hungarian algorithm; assignments above the acceptance
threshold tau are dropped afterwards.  Detections matched under an earlier
adjacency entry are excluded from later ones, so each detection joins at
most one pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scene import CameraRig, Detection2D


class MissingEmbedding(ValueError):
    """A detection offered to the matcher carries no embedding."""


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Pairwise embedding distances between two detection lists.

    masked marks class-incompatible pairs; their distance entries are
    meaningless and never selected.
    """

    rows: tuple[Detection2D, ...]
    cols: tuple[Detection2D, ...]
    distances: np.ndarray
    masked: np.ndarray


@dataclass(frozen=True, eq=False)
class MatchedPair:
    a: Detection2D
    b: Detection2D
    distance: float


@dataclass(eq=False)
class MatchResult:
    pairs: list[MatchedPair]
    unmatched: list[Detection2D]


def build_distance_matrix(dets_a, dets_b) -> DistanceMatrix:
    """Euclidean embedding distances, with cross-class entries masked."""
    for det in list(dets_a) + list(dets_b):
        if det.embedding is None:
            raise MissingEmbedding(
                f"detection in camera {det.camera_id!r} has no embedding"
            )
    n, m = len(dets_a), len(dets_b)
    distances = np.zeros((n, m))
    masked = np.zeros((n, m), dtype=bool)
    for i, da in enumerate(dets_a):
        for j, db in enumerate(dets_b):
            if da.class_id != db.class_id:
                masked[i, j] = True
            else:
                if len(da.embedding) != len(db.embedding):
                    raise MissingEmbedding("embedding dimensions differ")
                distances[i, j] = float(np.linalg.norm(da.embedding - db.embedding))
    return DistanceMatrix(tuple(dets_a), tuple(dets_b), distances, masked)


def _solve_square(cost: np.ndarray) -> list[int]:
    """Hungarian algorithm with row/column potentials, O(n^3).

    cost is square.  Returns match[j] = row assigned to column j (0-based,
    full assignment).  Arrays are 1-indexed internally with a virtual 0
    column driving the augmenting search.
    """
    n = cost.shape[0]
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)  # p[j]: row (1-based) currently matched to column j
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [math.inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = math.inf
            j1 = 0
            row = cost[i0 - 1]
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    return [p[j] - 1 for j in range(1, n + 1)]


def hungarian(costs, masked=None) -> list[tuple[int, int]]:
    """Minimum-cost assignment over a (possibly rectangular) cost matrix.

    masked entries are never selected; rectangular inputs are padded square.
    Both cases use a padding cost strictly greater than any achievable real
    total, so the solver first maximizes the number of real assignments and
    then minimizes their summed cost.  Only real assignments are returned,
    as (row, col) pairs sorted by row; rows/columns landing on padding or
    masked cells are left unmatched.
    """
    costs = np.asarray(costs, dtype=float)
    if costs.size == 0:
        return []
    if costs.ndim != 2:
        raise ValueError("cost matrix must be 2-dimensional")
    n_rows, n_cols = costs.shape
    if masked is None:
        masked = np.zeros((n_rows, n_cols), dtype=bool)
    else:
        masked = np.asarray(masked, dtype=bool)
        if masked.shape != costs.shape:
            raise ValueError("mask shape must match cost shape")
    real = costs[~masked]
    if real.size and not np.all(np.isfinite(real)):
        raise ValueError("unmasked costs must be finite")
    big = 2.0 * float(np.sum(np.abs(real))) + 1.0 if real.size else 1.0
    n = max(n_rows, n_cols)
    padded = np.full((n, n), big)
    padded[:n_rows, :n_cols] = np.where(masked, big, costs)
    match = _solve_square(padded)
    pairs = []
    for j, i in enumerate(match):
        if i < n_rows and j < n_cols and not masked[i, j]:
            pairs.append((i, j))
    return sorted(pairs)


def match_adjacent(rig: CameraRig, detections, tau: float) -> MatchResult:
    """Match detections across every adjacent camera pair of the rig.

    Adjacency entries are processed in rig order; Hungarian assignments with
    distance > tau are dropped, and accepted detections are excluded from
    later entries.  Returns accepted pairs plus all detections that ended up
    in none.
    """
    if not tau > 0.0:
        raise ValueError("tau must be positive")
    by_camera: dict[str, list[Detection2D]] = {}
    for det in detections:
        by_camera.setdefault(det.camera_id, []).append(det)
    taken: set[Detection2D] = set()
    pairs: list[MatchedPair] = []
    for cam_a, cam_b in rig.adjacency:
        dets_a = [d for d in by_camera.get(cam_a, []) if d not in taken]
        dets_b = [d for d in by_camera.get(cam_b, []) if d not in taken]
        if not dets_a or not dets_b:
            continue
        dm = build_distance_matrix(dets_a, dets_b)
        for i, j in hungarian(dm.distances, dm.masked):
            distance = float(dm.distances[i, j])
            if distance > tau:
                continue
            pairs.append(MatchedPair(dets_a[i], dets_b[j], distance))
            taken.add(dets_a[i])
            taken.add(dets_b[j])
    unmatched = [d for d in detections if d not in taken]
    return MatchResult(pairs=pairs, unmatched=unmatched)
