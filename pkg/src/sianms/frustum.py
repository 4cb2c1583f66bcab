"""Frustum point filtering and coherence-checked frustum merging.

A frustum is the set of LiDAR points whose projection falls inside one 2D
detection's bbox.  Two frustums from a matched cross-camera detection pair
are merged only when they share at least one point (exact coordinate
identity); sharing none is treated as evidence the match was spurious.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scene import (
    DEPTH_EPSILON,
    BBox2D,
    CameraModel,
    Detection2D,
    extent_midpoint,
    extent_width,
    angular_extent,
    project_points,
    wrap_angle,
)


class EmptyFrustum(ValueError):
    """No cloud point projects inside the bbox at positive depth."""


class MergeRejected(Exception):
    """The two frustums share no point, so the merge is refused.

    Not a failure: callers keep working with the unmerged frustums.
    """


class DegenerateExtent(ValueError):
    """A combined angular interval spans half the circle or more."""


@dataclass(frozen=True, eq=False)
class Frustum:
    """Points selected by one or two detections plus their viewing geometry.

    extent is the (theta_min, theta_max) azimuth interval the frustum
    subtends; central_axis its circular midpoint, in (-pi, pi].
    """

    points: np.ndarray
    extent: tuple[float, float]
    central_axis: float
    sources: tuple[Detection2D, ...] = ()

    def __post_init__(self):
        if len(self.sources) > 2:
            raise ValueError("a frustum traces back to at most two detections")
        if not -math.pi < self.central_axis <= math.pi:
            raise ValueError("central_axis must be normalized to (-pi, pi]")

    def __len__(self):
        return len(self.points)


def filter_frustum(
    cam: CameraModel,
    bbox: BBox2D,
    cloud: np.ndarray,
    source: Detection2D | None = None,
) -> Frustum:
    """Select cloud points projecting inside bbox (edges inclusive).

    Points at depth <= DEPTH_EPSILON are excluded.  Raises EmptyFrustum when
    nothing survives.
    """
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    uv, _, valid = project_points(cam, pts, DEPTH_EPSILON)
    inside = (
        valid
        & (uv[:, 0] >= bbox.x_min)
        & (uv[:, 0] <= bbox.x_max)
        & (uv[:, 1] >= bbox.y_min)
        & (uv[:, 1] <= bbox.y_max)
    )
    if not np.any(inside):
        raise EmptyFrustum(f"no points inside bbox in camera {cam.id!r}")
    extent = angular_extent(cam, bbox)
    sources = (source,) if source is not None else ()
    return Frustum(
        points=pts[inside],
        extent=extent,
        central_axis=extent_midpoint(extent),
        sources=sources,
    )


def _combined_hull(extent_a, extent_b) -> tuple[float, float]:
    """Smallest angular interval covering both extents, as (start, width).

    Raises DegenerateExtent when that interval spans >= pi.
    """
    width_a = extent_width(extent_a)
    width_b = extent_width(extent_b)
    span_ab = float(np.mod(extent_b[0] - extent_a[0], 2.0 * np.pi))
    span_ba = float(np.mod(extent_a[0] - extent_b[0], 2.0 * np.pi))
    cand_a = max(width_a, span_ab + width_b)
    cand_b = max(width_b, span_ba + width_a)
    if cand_a <= cand_b:
        start, width = extent_a[0], cand_a
    else:
        start, width = extent_b[0], cand_b
    if width >= math.pi:
        raise DegenerateExtent(f"combined extent spans {width!r} rad (>= pi)")
    return start, width


def central_axis_of_pair(extent_a, extent_b) -> float:
    """Circular mean of the two outermost angles across both extents."""
    start, width = _combined_hull(extent_a, extent_b)
    end = start + width
    # width < pi, so the two boundary directions are never antipodal.
    return wrap_angle(
        math.atan2(
            math.sin(start) + math.sin(end), math.cos(start) + math.cos(end)
        )
    )


def merge_frustums(a: Frustum, b: Frustum) -> Frustum:
    """Union of two frustums, accepted only when they share a point exactly.

    The merged point set keeps one copy of each coordinate triple, ordered by
    first appearance in a then b.  Raises MergeRejected when the frustums
    are disjoint; the caller decides how to proceed.
    """
    seen_a = {tuple(row) for row in a.points}
    rows_b = [tuple(row) for row in b.points]
    if not any(row in seen_a for row in rows_b):
        raise MergeRejected("frustums share no point")
    merged = []
    seen = set()
    for row in (tuple(r) for r in a.points):
        if row not in seen:
            seen.add(row)
            merged.append(row)
    for row in rows_b:
        if row not in seen:
            seen.add(row)
            merged.append(row)
    start, width = _combined_hull(a.extent, b.extent)
    extent = (wrap_angle(start), wrap_angle(start + width))
    return Frustum(
        points=np.array(merged, dtype=float).reshape(-1, 3),
        extent=extent,
        central_axis=central_axis_of_pair(a.extent, b.extent),
        sources=a.sources + b.sources,
    )
