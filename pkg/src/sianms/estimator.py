"""Deterministic 3D box fitting from frustum points.

The fitter is a geometric stand-in for a learned amodal box network: a
median-range gate rejects background points the image bbox frustum sweeps up
(there is no occlusion reasoning upstream), yaw comes from the ground-plane
principal axis disambiguated toward the frustum's viewing direction, the
center is the midpoint of the gated extents per axis, and dimensions are the
observed extents floored by a per-class prior and capped at twice it.

Two robustness choices matter. Centers use mid-extent rather than the raw
centroid: points are sampled on the surface visible from the sensor, which
skews a centroid toward the sensor, while the extent midpoint stays unbiased
whenever the surface spans the object. Planar extents come from symmetric
quantiles rather than min/max: stray ground points behind the object that
slip through the range gate would otherwise drag a min/max midpoint by
meters, while a few-percent trim removes them and barely moves clean
surface extents (the prior floor absorbs the shrink). Vertical extents stay
min/max because ground points share the objects' ground plane and cannot
be vertical outliers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .frustum import Frustum
from .scene import Box3D, wrap_angle
from .synthgen import CLASS_DIMS


class TooFewPoints(ValueError):
    """The frustum holds fewer points than the configured minimum."""


@dataclass(frozen=True)
class EstimatorConfig:
    """Box fitting parameters.

    dim_priors: per-class (l, w, h) used as dimension floor (and 2x cap).
    yaw_mode: 'pca' or 'frustum-axis'.
    min_points: frustums below this size raise TooFewPoints.
    range_gate_m: half-width floor of the median-range gate.
    extent_quantile: symmetric trim fraction for planar extents.
    """

    dim_priors: dict = field(default_factory=lambda: dict(CLASS_DIMS))
    yaw_mode: str = "pca"
    min_points: int = 5
    range_gate_m: float = 3.0
    extent_quantile: float = 0.04

    def __post_init__(self):
        if self.yaw_mode not in ("pca", "frustum-axis"):
            raise ValueError("yaw_mode must be 'pca' or 'frustum-axis'")
        if self.min_points < 1:
            raise ValueError("min_points must be >= 1")
        if not 0.0 <= self.extent_quantile < 0.5:
            raise ValueError("extent_quantile must be in [0, 0.5)")


def _span_coverage(values: np.ndarray, full_span: float) -> float:
    """Fraction of full_span covered by the central 90% of values, capped at 1."""
    if full_span <= 1e-9:
        return 1.0
    span = float(np.quantile(values, 0.95) - np.quantile(values, 0.05))
    return min(span / full_span, 1.0)


_AZ_BINS = 8


def _bin_coverage(values: np.ndarray, full_span: float) -> float:
    """Fraction of full_span bins holding at least 4% of the values.

    Occupied-bin counting instead of a quantile span: several disjoint
    bystander clusters inside one window would fake a wide span, but they
    still leave most bins empty.
    """
    if full_span <= 1e-9:
        return 1.0
    counts, _ = np.histogram(values, bins=_AZ_BINS, range=(0.0, full_span))
    threshold = max(1, math.ceil(0.04 * len(values)))
    return float(np.count_nonzero(counts >= threshold)) / _AZ_BINS


def _range_gate(
    points: np.ndarray,
    half_width: float,
    extent: tuple[float, float],
    prior_h: float,
) -> np.ndarray:
    """Keep the range cluster that best explains the detection.

    The frustum cone sweeps up bystanders: ground points, upper slices of
    nearer objects, and whole objects farther out. The detected object is
    the one the bbox was drawn around, so its points should fill the bbox:
    nearly the whole azimuth extent and roughly the class height. Stage 1
    slides a window of width 2*half_width over the sorted ground ranges and
    scores each window by point count times azimuth coverage of the frustum
    extent times vertical coverage of the height prior; flat ground scores
    near zero vertically, leaked slices score low on one of the coverages.
    Stage 2 re-centers on the median range of the winning window and keeps
    all points within half_width of it.
    """
    ranges = np.hypot(points[:, 0], points[:, 1])
    rel_az = np.mod(np.arctan2(points[:, 1], points[:, 0]) - extent[0], 2.0 * math.pi)
    az_width = (extent[1] - extent[0]) % (2.0 * math.pi)
    order = np.argsort(ranges, kind="stable")
    sorted_r = ranges[order]
    width = 2.0 * half_width
    ends = np.searchsorted(sorted_r, sorted_r + width, side="right")
    stride = max(1, len(sorted_r) // 96)
    best_score, best_start = -1.0, 0
    for start in range(0, len(sorted_r), stride):
        members = order[start : ends[start]]
        score = (
            len(members)
            * _bin_coverage(rel_az[members], az_width)
            * _span_coverage(points[members, 2], prior_h)
        )
        if score > best_score:
            best_score, best_start = score, start
    in_window = (ranges >= sorted_r[best_start]) & (
        ranges <= sorted_r[best_start] + width
    )
    median = float(np.median(ranges[in_window]))
    return points[np.abs(ranges - median) <= half_width]


def _principal_axis_angle(xy: np.ndarray) -> float:
    """Orientation of the dominant scatter direction, in (-pi/2, pi/2]."""
    centered = xy - xy.mean(axis=0)
    sxx = float(np.mean(centered[:, 0] ** 2))
    syy = float(np.mean(centered[:, 1] ** 2))
    sxy = float(np.mean(centered[:, 0] * centered[:, 1]))
    angle = 0.5 * math.atan2(2.0 * sxy, sxx - syy)
    if angle <= -math.pi / 2.0:
        angle += math.pi
    elif angle > math.pi / 2.0:
        angle -= math.pi
    return angle


def _disambiguate(line_angle: float, reference: float) -> float:
    """Pick line_angle or its pi-flip so the result lies within
    (-pi/2, pi/2] of the reference direction."""
    diff = wrap_angle(line_angle - reference)
    if -math.pi / 2.0 < diff <= math.pi / 2.0:
        return wrap_angle(line_angle)
    return wrap_angle(line_angle + math.pi)


def _trimmed_extent(values: np.ndarray, quantile: float) -> tuple[float, float]:
    lo = float(np.quantile(values, quantile))
    hi = float(np.quantile(values, 1.0 - quantile))
    return lo, hi


def estimate_box(frustum: Frustum, class_id: str, cfg: EstimatorConfig) -> Box3D:
    """Fit an oriented box to a frustum's points.

    Deterministic and invariant to point order.  Raises TooFewPoints when
    the frustum holds fewer than cfg.min_points points, KeyError when the
    class has no dimension prior.
    """
    prior = cfg.dim_priors[class_id]
    points = np.asarray(frustum.points, dtype=float).reshape(-1, 3)
    if len(points) < cfg.min_points:
        raise TooFewPoints(f"{len(points)} points < min_points {cfg.min_points}")
    gate = max(cfg.range_gate_m, 0.75 * math.hypot(prior[0], prior[1]))
    gated = _range_gate(points, gate, frustum.extent, prior[2])
    if len(gated) < cfg.min_points:
        gated = points
    if cfg.yaw_mode == "frustum-axis":
        yaw = frustum.central_axis
    else:
        line = _principal_axis_angle(gated[:, :2])
        yaw = _disambiguate(line, frustum.central_axis)
    cos_y, sin_y = math.cos(yaw), math.sin(yaw)
    along = gated[:, 0] * cos_y + gated[:, 1] * sin_y
    across = -gated[:, 0] * sin_y + gated[:, 1] * cos_y
    lo_along, hi_along = _trimmed_extent(along, cfg.extent_quantile)
    lo_across, hi_across = _trimmed_extent(across, cfg.extent_quantile)
    center_along = 0.5 * (lo_along + hi_along)
    center_across = 0.5 * (lo_across + hi_across)
    x = center_along * cos_y - center_across * sin_y
    y = center_along * sin_y + center_across * cos_y
    z = 0.5 * (gated[:, 2].min() + gated[:, 2].max())
    dims = []
    for extent, prior_dim in zip(
        (hi_along - lo_along, hi_across - lo_across,
         gated[:, 2].max() - gated[:, 2].min()),
        prior,
    ):
        dims.append(min(max(float(extent), prior_dim), 2.0 * prior_dim))
    return Box3D(x=float(x), y=float(y), z=float(z), l=dims[0], w=dims[1], h=dims[2], theta=yaw)
