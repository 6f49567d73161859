# See the NOTICE file distributed with this work for additional information
# regarding copyright ownership.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Planar closed-curve primitives.

A ``ClosedCurve`` is a periodic polyline: node N-1 connects back to node 0.
Lengths, areas and distances are those of the polyline. Differential
quantities (tangent, curvature, the H² seminorm) come from the periodic cubic
spline through the nodes, parametrised by cumulative chord length.

Examples:
    >>> circle = ClosedCurve.circle(1.0, 256)
    >>> round(length(circle), 3)
    6.283
"""

from functools import cached_property
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.interpolate import CubicSpline
from scipy.spatial import ConvexHull, cKDTree
from scipy.spatial.distance import pdist

from .exceptions import GeometryError
from .quadrature import panel_points

FloatArray = NDArray[np.float64]

MIN_NODES = 16
NEWTON_STEPS = 30
_NEIGHBOURS = 8
_CHUNK = 4096


def _as_float_array(values, name: str) -> FloatArray:
    """Convert input to contiguous float64 with basic validation."""
    arr = np.asarray(values, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise GeometryError(f"{name} contains non-finite values")
    return np.ascontiguousarray(arr)


class ClosedCurve:
    """Periodic polyline with cached arclength data and spline interpolant.

    Args:
        nodes: Array of shape (N, 2); node N-1 connects to node 0.

    Raises:
        GeometryError: If N < 16, coordinates are not finite, the curve has zero
            length or two consecutive nodes coincide.
    """

    def __init__(self, nodes) -> None:
        arr = _as_float_array(nodes, "nodes")
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise GeometryError(f"nodes must have shape (N, 2), got {arr.shape}")
        if arr.shape[0] < MIN_NODES:
            raise GeometryError(f"a curve needs at least {MIN_NODES} nodes, got {arr.shape[0]}")
        segments = np.roll(arr, -1, axis=0) - arr
        seg_len = np.hypot(segments[:, 0], segments[:, 1])
        extent = float(np.ptp(arr, axis=0).max())
        if not extent > 0.0:
            raise GeometryError("degenerate curve: zero length")
        repeated = np.flatnonzero(seg_len <= 1e-13 * extent)
        if repeated.size:
            raise GeometryError(
                f"degenerate curve: node {repeated[0]} repeats node {(repeated[0] + 1) % arr.shape[0]}"
            )
        arr.setflags(write=False)
        seg_len.setflags(write=False)
        self._nodes = arr
        self._segment_lengths = seg_len

    def __len__(self) -> int:
        return self._nodes.shape[0]

    def __repr__(self) -> str:
        return f"ClosedCurve(n={len(self)}, length={self.length:.6g})"

    @property
    def nodes(self) -> FloatArray:
        """Read-only (N, 2) node array."""
        return self._nodes

    @property
    def segment_lengths(self) -> FloatArray:
        """Length of segment i, joining node i to node i+1."""
        return self._segment_lengths

    @cached_property
    def parameter(self) -> FloatArray:
        """Cumulative chord length at nodes 0..N, the last entry being the length."""
        return np.concatenate(([0.0], np.cumsum(self._segment_lengths)))

    @property
    def length(self) -> float:
        """Polyline length."""
        return float(self.parameter[-1])

    @cached_property
    def spline(self) -> CubicSpline:
        """Periodic cubic spline through the nodes in the chord-length parameter."""
        closed = np.vstack([self._nodes, self._nodes[:1]])
        return CubicSpline(self.parameter, closed, bc_type="periodic")

    @cached_property
    def spline_length(self) -> float:
        """Arclength of the spline interpolant."""
        sigma, weights = panel_points(self.parameter[:-1], self.parameter[1:])
        speed = np.linalg.norm(self.spline(sigma, 1), axis=-1)
        return float(np.sum(speed * weights))

    @cached_property
    def spline_area(self) -> float:
        """Signed area enclosed by the spline interpolant, ½∮ (x y' - y x') dτ."""
        sigma, weights = panel_points(self.parameter[:-1], self.parameter[1:])
        z = self.spline(sigma)
        dz = self.spline(sigma, 1)
        return 0.5 * float(np.sum((z[..., 0] * dz[..., 1] - z[..., 1] * dz[..., 0]) * weights))

    @cached_property
    def tangents(self) -> FloatArray:
        """Unit spline tangents at the nodes."""
        d1 = self.spline(self.parameter[:-1], 1)
        return d1 / np.linalg.norm(d1, axis=1)[:, None]

    @property
    def normals(self) -> FloatArray:
        """N = T^⊥, pointing inwards for a positively oriented curve."""
        t = self.tangents
        return np.column_stack([-t[:, 1], t[:, 0]])

    @cached_property
    def tree(self) -> cKDTree:
        """KD-tree of the nodes."""
        return cKDTree(self._nodes)

    @cached_property
    def bounding_box(self) -> Tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax)."""
        lo = self._nodes.min(axis=0)
        hi = self._nodes.max(axis=0)
        return float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])

    @classmethod
    def from_function(cls, fn: Callable[[FloatArray], FloatArray], n: int) -> "ClosedCurve":
        """Sample a 2π-periodic parametrisation at n equally spaced parameter values."""
        t = 2.0 * np.pi * np.arange(n) / n
        return cls(np.asarray(fn(t), dtype=np.float64))

    @classmethod
    def circle(cls, radius: float, n: int, center: Sequence[float] = (0.0, 0.0)) -> "ClosedCurve":
        """Counterclockwise circle with equally spaced nodes, node 0 at angle 0."""
        cx, cy = center
        return cls.from_function(
            lambda t: np.column_stack([cx + radius * np.cos(t), cy + radius * np.sin(t)]), n
        )

    @classmethod
    def ellipse(
        cls,
        a: float,
        b: float,
        n: int,
        center: Sequence[float] = (0.0, 0.0),
        angle: float = 0.0,
    ) -> "ClosedCurve":
        """Counterclockwise ellipse with semi-axes a, b sampled uniformly in the angle parameter."""
        cx, cy = center
        rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        return cls.from_function(
            lambda t: np.column_stack([a * np.cos(t), b * np.sin(t)]) @ rot.T + np.array([cx, cy]),
            n,
        )

    @classmethod
    def polygon(cls, corners: Sequence[Sequence[float]], per_side: int) -> "ClosedCurve":
        """Polyline through the corners with each side split into ``per_side`` equal segments."""
        corners = _as_float_array(corners, "corners")
        nxt = np.roll(corners, -1, axis=0)
        frac = np.arange(per_side) / per_side
        nodes = corners[:, None, :] + frac[None, :, None] * (nxt - corners)[:, None, :]
        return cls(nodes.reshape(-1, 2))


def transform(curve: ClosedCurve, fn: Callable[[FloatArray], FloatArray]) -> ClosedCurve:
    """Apply a point map to every node."""
    return ClosedCurve(fn(np.array(curve.nodes)))


def scale(curve: ClosedCurve, factor: float) -> ClosedCurve:
    """Dilate about the origin."""
    return ClosedCurve(factor * curve.nodes)


def translate(curve: ClosedCurve, shift: Sequence[float]) -> ClosedCurve:
    """Translate every node."""
    return ClosedCurve(curve.nodes + np.asarray(shift, dtype=np.float64))


def reversed_curve(curve: ClosedCurve) -> ClosedCurve:
    """Same image, opposite orientation, node 0 kept."""
    return ClosedCurve(np.roll(curve.nodes[::-1], 1, axis=0))


# ---------------------------------------------------------------- arclength


def resample_arclength(curve: ClosedCurve, n_target: int) -> ClosedCurve:
    """Resample at equal arclength spacing along the spline interpolant.

    Node 0 of the result is node 0 of the input.

    Args:
        curve: Curve to resample.
        n_target: Number of output nodes.

    Returns:
        New curve with ``n_target`` nodes.

    Raises:
        GeometryError: If ``n_target`` is below the minimal node count.
    """
    if n_target < MIN_NODES:
        raise GeometryError(f"n_target must be >= {MIN_NODES}, got {n_target}")
    knots = curve.parameter
    spline = curve.spline
    start, end = knots[:-1], knots[1:]
    sigma, weights = panel_points(start, end)
    interval_length = np.sum(np.linalg.norm(spline(sigma, 1), axis=-1) * weights, axis=1)
    cumulative = np.concatenate(([0.0], np.cumsum(interval_length)))
    total = cumulative[-1]

    goal = total * np.arange(n_target) / n_target
    idx = np.clip(np.searchsorted(cumulative, goal, side="right") - 1, 0, len(start) - 1)
    tau = start[idx] + (goal - cumulative[idx]) / interval_length[idx] * (end[idx] - start[idx])
    for _ in range(NEWTON_STEPS):
        pts, w = panel_points(start[idx], tau)
        partial = np.sum(np.linalg.norm(spline(pts, 1), axis=-1) * w, axis=1)
        partial = np.where(tau >= start[idx], partial, -partial)
        speed = np.linalg.norm(spline(tau, 1), axis=-1)
        step = (cumulative[idx] + partial - goal) / speed
        tau = tau - step
        if np.max(np.abs(step)) <= 1e-15 * total:
            break
    return ClosedCurve(spline(tau))


def is_quasi_uniform(curve: ClosedCurve, low: float = 0.5, high: float = 2.0) -> bool:
    """True when every segment length lies in [low, high] x (length / N)."""
    mean = curve.length / len(curve)
    seg = curve.segment_lengths
    return bool(np.all(seg >= low * mean) and np.all(seg <= high * mean))


def integrate_along(curve: ClosedCurve, values: FloatArray) -> float:
    """∮ f ds for nodal samples f, through the periodic spline of f."""
    values = np.asarray(values, dtype=np.float64)
    closed = np.concatenate([values, values[:1]])
    fspline = CubicSpline(curve.parameter, closed, bc_type="periodic")
    sigma, weights = panel_points(curve.parameter[:-1], curve.parameter[1:])
    speed = np.linalg.norm(curve.spline(sigma, 1), axis=-1)
    return float(np.sum(fspline(sigma) * speed * weights))


# ---------------------------------------------------------------- measurements


def length(curve: ClosedCurve) -> float:
    """Sum of segment lengths."""
    return curve.length


def signed_area(curve: ClosedCurve) -> float:
    """Shoelace area, positive for counterclockwise curves."""
    x = curve.nodes[:, 0]
    y = curve.nodes[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def curvature_profile(curve: ClosedCurve) -> FloatArray:
    """Signed curvature κ = ∂_s²z · N at every node, from the spline."""
    sigma = curve.parameter[:-1]
    d1 = curve.spline(sigma, 1)
    d2 = curve.spline(sigma, 2)
    cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    return cross / np.linalg.norm(d1, axis=1) ** 3


def h2_seminorm_sq(curve: ClosedCurve) -> float:
    """‖γ‖²_{Ḣ²} = ∮ κ² ds, integrated panelwise on the spline."""
    sigma, weights = panel_points(curve.parameter[:-1], curve.parameter[1:])
    d1 = curve.spline(sigma, 1)
    d2 = curve.spline(sigma, 2)
    speed = np.linalg.norm(d1, axis=-1)
    cross = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
    kappa = cross / speed**3
    return float(np.sum(kappa**2 * speed * weights))


def length_upper_bound(curve: ClosedCurve) -> float:
    """diam² · ‖γ‖²_{Ḣ²}, an upper bound on the length of a closed H² curve."""
    return diameter(curve) ** 2 * h2_seminorm_sq(curve)


def diameter(curve: ClosedCurve) -> float:
    """Largest distance between two nodes."""
    pts = curve.nodes
    try:
        pts = pts[ConvexHull(pts).vertices]
    except Exception:  # pylint: disable=broad-except
        # collinear input has no 2-D hull; fall through to every node
        pass
    return float(pdist(pts).max())


def centroid(curve: ClosedCurve) -> FloatArray:
    """Area centroid of the polygon (node mean for zero-area polygons)."""
    x, y = curve.nodes[:, 0], curve.nodes[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    if abs(area) <= 1e-300:
        return curve.nodes.mean(axis=0)
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * area)


# ---------------------------------------------------------------- distances


def _point_segment_distance(p: FloatArray, a: FloatArray, b: FloatArray) -> FloatArray:
    ab = b - a
    denom = np.einsum("...i,...i->...", ab, ab)
    t = np.clip(np.einsum("...i,...i->...", p - a, ab) / denom, 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1)


def _brute_distances(points: FloatArray, curve: ClosedCurve) -> FloatArray:
    a = curve.nodes
    b = np.roll(a, -1, axis=0)
    out = np.empty(points.shape[0])
    chunk = max(1, _CHUNK * 64 // len(curve))
    for begin in range(0, points.shape[0], chunk):
        block = points[begin : begin + chunk, None, :]
        out[begin : begin + chunk] = _point_segment_distance(block, a[None], b[None]).min(axis=1)
    return out


def distances_to_curve(points, curve: ClosedCurve) -> FloatArray:
    """Distance from each point to the polyline.

    Candidate segments come from the nearest nodes; a point whose k-th nearest
    node is too close to certify the candidate falls back to an exhaustive scan,
    so the result is exact.

    Args:
        points: Array of shape (P, 2).
        curve: Target polyline.

    Returns:
        Array of shape (P,).
    """
    points = np.atleast_2d(_as_float_array(points, "points"))
    n = len(curve)
    k = min(_NEIGHBOURS, n)
    node_dist, idx = curve.tree.query(points, k=k)
    a = curve.nodes
    b = np.roll(a, -1, axis=0)
    seg = np.concatenate([idx, (idx - 1) % n], axis=1)
    cand = _point_segment_distance(points[:, None, :], a[seg], b[seg]).min(axis=1)
    if k == n:
        return cand
    h_max = float(curve.segment_lengths.max())
    uncertain = node_dist[:, -1] ** 2 - 0.25 * h_max**2 < cand**2
    if np.any(uncertain):
        cand[uncertain] = _brute_distances(points[uncertain], curve)
    return cand


def dist_point_curve(x, curve: ClosedCurve) -> float:
    """Distance from a point to the polyline; 0 iff the point lies on it."""
    return float(distances_to_curve(np.asarray(x, dtype=np.float64)[None, :], curve)[0])


def dist_curve_curve(c1: ClosedCurve, c2: ClosedCurve) -> float:
    """Distance between two polyline images; 0 iff they touch or cross.

    Between disjoint segments the minimum is attained at an endpoint, so node to
    polyline distances in both directions are exact once crossings are excluded.
    """
    if curves_cross(c1, c2):
        return 0.0
    d12 = distances_to_curve(c1.nodes, c2).min()
    d21 = distances_to_curve(c2.nodes, c1).min()
    return float(min(d12, d21))


# ---------------------------------------------------------------- topology


def winding_numbers(points, curve: ClosedCurve) -> NDArray[np.int64]:
    """Winding number of the curve around each point (crossing rule)."""
    points = np.atleast_2d(_as_float_array(points, "points"))
    a = curve.nodes
    b = np.roll(a, -1, axis=0)
    out = np.empty(points.shape[0], dtype=np.int64)
    chunk = max(1, _CHUNK * 64 // len(curve))
    for begin in range(0, points.shape[0], chunk):
        px = points[begin : begin + chunk, 0:1]
        py = points[begin : begin + chunk, 1:2]
        is_left = (b[:, 0] - a[:, 0]) * (py - a[:, 1]) - (px - a[:, 0]) * (b[:, 1] - a[:, 1])
        upward = (a[:, 1] <= py) & (b[:, 1] > py) & (is_left > 0)
        downward = (a[:, 1] > py) & (b[:, 1] <= py) & (is_left < 0)
        out[begin : begin + chunk] = upward.sum(axis=1) - downward.sum(axis=1)
    return out


def winding_number(x, curve: ClosedCurve, boundary_tol: float = 1e-12) -> Optional[int]:
    """Winding number of the curve around x.

    Returns:
        The winding count, or ``None`` when x lies on the polyline (within
        ``boundary_tol`` times the curve length); the caller decides what a
        boundary point means.
    """
    x = np.asarray(x, dtype=np.float64)
    if dist_point_curve(x, curve) <= boundary_tol * curve.length:
        return None
    return int(winding_numbers(x[None, :], curve)[0])


def _cross(u: FloatArray, v: FloatArray) -> FloatArray:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _segments_intersect(p1, p2, q1, q2) -> NDArray[np.bool_]:
    """Closed-segment intersection test, touching included."""
    d1 = _cross(q2 - q1, p1 - q1)
    d2 = _cross(q2 - q1, p2 - q1)
    d3 = _cross(p2 - p1, q1 - p1)
    d4 = _cross(p2 - p1, q2 - p1)
    straddle = (d1 * d2 <= 0.0) & (d3 * d4 <= 0.0)
    collinear = (d1 == 0.0) & (d2 == 0.0)
    overlap = (
        (np.minimum(p1[..., 0], p2[..., 0]) <= np.maximum(q1[..., 0], q2[..., 0]))
        & (np.minimum(q1[..., 0], q2[..., 0]) <= np.maximum(p1[..., 0], p2[..., 0]))
        & (np.minimum(p1[..., 1], p2[..., 1]) <= np.maximum(q1[..., 1], q2[..., 1]))
        & (np.minimum(q1[..., 1], q2[..., 1]) <= np.maximum(p1[..., 1], p2[..., 1]))
    )
    return np.where(collinear, overlap, straddle)


def _sweep_pairs(lo_a, hi_a, lo_b, same: bool) -> Tuple[NDArray[np.int64], NDArray[np.int64]]:
    """Index pairs (i, j) whose x-ranges overlap because lo_b[j] falls in [lo_a[i], hi_a[i]]."""
    order = np.argsort(lo_b, kind="stable")
    xs = lo_b[order]
    first = np.searchsorted(xs, lo_a, side="left")
    last = np.searchsorted(xs, hi_a, side="right")
    counts = np.maximum(last - first, 0)
    i = np.repeat(np.arange(lo_a.size), counts)
    offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    j = order[np.repeat(first, counts) + offsets]
    if same:
        keep = i != j
        i, j = i[keep], j[keep]
    return i, j


def _crossing_pairs(a1, b1, a2, b2, same: bool) -> Tuple[NDArray[np.int64], NDArray[np.int64]]:
    lo1 = np.minimum(a1, b1)
    hi1 = np.maximum(a1, b1)
    lo2 = np.minimum(a2, b2)
    hi2 = np.maximum(a2, b2)
    i1, j1 = _sweep_pairs(lo1[:, 0], hi1[:, 0], lo2[:, 0], same)
    j2, i2 = _sweep_pairs(lo2[:, 0], hi2[:, 0], lo1[:, 0], same)
    i = np.concatenate([i1, i2])
    j = np.concatenate([j1, j2])
    keep = (lo1[i, 1] <= hi2[j, 1]) & (lo2[j, 1] <= hi1[i, 1])
    return i[keep], j[keep]


def is_simple(curve: ClosedCurve) -> Tuple[bool, Optional[Tuple[int, int]]]:
    """Check that no two non-adjacent segments meet.

    Adjacent segments may only share their common node; a segment folding back
    onto its neighbour counts as an intersection.

    Returns:
        ``(True, None)`` for a simple curve, otherwise ``(False, (i, j))`` with the
        lexicographically first offending segment pair, i < j.
    """
    a = curve.nodes
    b = np.roll(a, -1, axis=0)
    n = len(curve)
    d = b - a
    fold = (_cross(d, np.roll(d, -1, axis=0)) == 0.0) & (
        np.einsum("ij,ij->i", d, np.roll(d, -1, axis=0)) < 0.0
    )
    bad = [(int(k), int((k + 1) % n)) for k in np.flatnonzero(fold)]

    i, j = _crossing_pairs(a, b, a, b, same=True)
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    keep = (hi - lo != 1) & ~((lo == 0) & (hi == n - 1))
    lo, hi = lo[keep], hi[keep]
    hits = _segments_intersect(a[lo], b[lo], a[hi], b[hi])
    bad.extend(zip(lo[hits].tolist(), hi[hits].tolist()))
    if not bad:
        return True, None
    return False, tuple(sorted(tuple(sorted(p)) for p in bad)[0])


def curves_cross(c1: ClosedCurve, c2: ClosedCurve) -> bool:
    """True when some segment of c1 meets some segment of c2."""
    x1lo, x1hi, y1lo, y1hi = c1.bounding_box
    x2lo, x2hi, y2lo, y2hi = c2.bounding_box
    if x1hi < x2lo or x2hi < x1lo or y1hi < y2lo or y2hi < y1lo:
        return False
    a1 = c1.nodes
    b1 = np.roll(a1, -1, axis=0)
    a2 = c2.nodes
    b2 = np.roll(a2, -1, axis=0)
    i, j = _crossing_pairs(a1, b1, a2, b2, same=False)
    return bool(np.any(_segments_intersect(a1[i], b1[i], a2[j], b2[j])))
