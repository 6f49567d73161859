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

"""Panel quadrature of kernel contour integrals along closed curves.

Every integral handled here has the form

    I(x) = ∮ G(x - z(σ)) ⊗ z'(σ) dσ

where ``z`` is the periodic spline of a curve in its chord-length parameter
and ``G`` is a kernel returning a scalar, vector or matrix per displacement.
Panels far from the target use a fixed Gauss-Legendre rule. Panels close to
the target are split at the closest point and integrated on dyadic graded
meshes; when the target sits on the curve the innermost panel uses a
Gauss-Jacobi rule carrying the |σ - σ*|^(-β) endpoint singularity.
"""

from functools import lru_cache
from typing import Callable, Optional, Tuple

import numpy as np
from loguru import logger
from numpy.typing import NDArray
from scipy.special import roots_jacobi

from .exceptions import QuadratureError

FloatArray = NDArray[np.float64]
KernelFn = Callable[[FloatArray], FloatArray]

GAUSS_ORDER = 8
NEAR_FACTOR = 3.0
MIN_DEPTH = 2
ON_CURVE_RTOL = 1e-12
# keeps (targets x panels x points) work arrays at a few tens of MB
_CHUNK_BUDGET = 1 << 17


@lru_cache(maxsize=None)
def gauss_legendre(order: int = GAUSS_ORDER) -> Tuple[FloatArray, FloatArray]:
    """Gauss-Legendre nodes and weights on [-1, 1]."""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


@lru_cache(maxsize=None)
def gauss_jacobi(order: int, beta: float) -> Tuple[FloatArray, FloatArray]:
    """Gauss-Jacobi nodes and weights for the weight (1 + t)^beta on [-1, 1]."""
    nodes, weights = roots_jacobi(order, 0.0, beta)
    nodes = np.asarray(nodes, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def panel_points(
    start: FloatArray, end: FloatArray, order: int = GAUSS_ORDER
) -> Tuple[FloatArray, FloatArray]:
    """Map the Gauss-Legendre rule onto a batch of intervals.

    Args:
        start: Left ends, any shape.
        end: Right ends, same shape as ``start``.
        order: Number of points per interval.

    Returns:
        Points and positive weights, both of shape ``start.shape + (order,)``.
    """
    nodes, weights = gauss_legendre(order)
    half = 0.5 * (np.asarray(end) - np.asarray(start))
    mid = 0.5 * (np.asarray(end) + np.asarray(start))
    points = mid[..., None] + half[..., None] * nodes
    return points, np.abs(half)[..., None] * weights


def _norm(values: FloatArray) -> FloatArray:
    flat = values.reshape(values.shape[0], -1)
    return np.sqrt(np.einsum("ij,ij->i", flat, flat))


class CurveQuadrature:
    """Cached Gauss-Legendre panels of one closed curve.

    Args:
        curve: A ``ClosedCurve``; only its ``spline`` and ``parameter`` are used.
        subdivisions: Number of equal panels per knot interval.
        order: Gauss-Legendre points per panel.
    """

    def __init__(self, curve, subdivisions: int = 1, order: int = GAUSS_ORDER) -> None:
        knots = curve.parameter
        fractions = np.arange(subdivisions + 1) / subdivisions
        steps = np.diff(knots)
        bounds = knots[:-1, None] + steps[:, None] * fractions[None, :]
        self.spline = curve.spline
        self.order = order
        self.panel_start = bounds[:, :-1].ravel()
        self.panel_end = bounds[:, 1:].ravel()
        self.panel_end[-1] = knots[-1]

        sigma, weights = panel_points(self.panel_start, self.panel_end, order)
        self.points = self.spline(sigma)
        self.dz = self.spline(sigma, 1) * weights[..., None]
        self.panel_length = np.linalg.norm(self.dz, axis=-1).sum(axis=1)
        self.midpoints = self.spline(0.5 * (self.panel_start + self.panel_end))
        self.chord_start = self.spline(self.panel_start)
        self.chord_end = self.spline(self.panel_end)

    @property
    def n_panels(self) -> int:
        """Number of panels."""
        return self.panel_start.shape[0]

    def integrate(
        self,
        targets: FloatArray,
        kernel: KernelFn,
        value_shape: Tuple[int, ...] = (),
        *,
        singular_exponent: Optional[float] = None,
        tol: float = 1e-8,
        max_depth: int = 24,
    ) -> FloatArray:
        """Integrate ``kernel(x - z) dz`` along the curve for every target.

        Args:
            targets: Points of shape (P, 2).
            kernel: Vectorised kernel mapping (..., 2) displacements to ``(...,) + value_shape``.
            value_shape: Shape of one kernel value.
            singular_exponent: Exponent β of the on-curve |s|^(-β) singularity of
                ``kernel``; ``None`` when the kernel is bounded near the target.
            tol: Relative increment that stops graded refinement.
            max_depth: Maximal number of dyadic refinements.

        Returns:
            Array of shape ``(P,) + value_shape + (2,)``; the last axis indexes dz.

        Raises:
            QuadratureError: If graded refinement does not converge.
        """
        targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        result = np.zeros((targets.shape[0],) + value_shape + (2,))
        chunk = max(1, _CHUNK_BUDGET // (self.n_panels * self.order))
        for begin in range(0, targets.shape[0], chunk):
            block = targets[begin : begin + chunk]
            result[begin : begin + chunk] = self._integrate_block(
                block, kernel, value_shape, singular_exponent, tol, max_depth
            )
        return result

    def _integrate_block(self, targets, kernel, value_shape, singular_exponent, tol, max_depth):
        distance = np.linalg.norm(targets[:, None, :] - self.midpoints[None, :, :], axis=-1)
        near = distance < NEAR_FACTOR * self.panel_length[None, :]

        diff = targets[:, None, None, :] - self.points[None, :, :, :]
        # placeholder displacement keeps singular kernels finite on near pairs
        diff[near] = 1.0
        values = kernel(diff)
        values[near] = 0.0
        value_axes = "".join("abcd"[: len(value_shape)])
        far = np.einsum(f"tpq{value_axes},pqk->t{value_axes}k", values, self.dz)

        target_index, panel_index = np.nonzero(near)
        if target_index.size:
            near_values = self._graded(
                targets, target_index, panel_index, kernel, value_shape,
                singular_exponent, tol, max_depth,
            )
            np.add.at(far, target_index, near_values)
        return far

    def _graded(self, targets, target_index, panel_index, kernel, value_shape,
                singular_exponent, tol, max_depth):
        # closest point on the panel chord, mapped back to the spline parameter
        x = targets[target_index]
        a = self.chord_start[panel_index]
        b = self.chord_end[panel_index]
        chord = b - a
        frac = np.einsum("ij,ij->i", x - a, chord) / np.einsum("ij,ij->i", chord, chord)
        frac = np.clip(frac, 0.0, 1.0)
        start = self.panel_start[panel_index]
        end = self.panel_end[panel_index]
        origin = start + frac * (end - start)
        gap = np.linalg.norm(x - self.spline(origin), axis=-1)
        on_curve = gap <= ON_CURVE_RTOL * self.panel_length[panel_index]
        if singular_exponent is None:
            on_curve[:] = False

        # one graded side towards the left end, one towards the right end
        side_target = np.concatenate([target_index, target_index])
        side_pair = np.concatenate([np.arange(target_index.size)] * 2)
        side_origin = np.concatenate([origin, origin])
        side_length = np.concatenate([start - origin, end - origin])
        side_singular = np.concatenate([on_curve, on_curve])
        keep = np.abs(side_length) > 1e-14 * np.abs(np.concatenate([end - start] * 2))
        side_target = side_target[keep]
        side_pair = side_pair[keep]
        side_origin = side_origin[keep]
        side_length = side_length[keep]
        side_singular = side_singular[keep]

        totals = self._refine(
            targets[side_target], side_origin, side_length, side_singular,
            kernel, value_shape, singular_exponent, tol, max_depth,
        )
        out = np.zeros((target_index.size,) + value_shape + (2,))
        np.add.at(out, side_pair, totals)
        return out

    def _segment(self, x, origin, length, lo, hi, kernel):
        """Gauss-Legendre integral over the fractions [lo, hi] of each graded side."""
        sigma, weights = panel_points(origin + lo * length, origin + hi * length, self.order)
        disp = x[:, None, :] - self.spline(sigma)
        dz = self.spline(sigma, 1) * weights[..., None]
        return np.einsum("tq...,tqk->t...k", kernel(disp), dz)

    def _singular_segment(self, x, origin, length, hi, kernel, beta):
        """Gauss-Jacobi integral over [0, hi] of each side carrying |σ - σ*|^(-β)."""
        nodes, weights = gauss_jacobi(self.order, -beta)
        span = np.abs(length) * hi
        s = 0.5 * span[:, None] * (nodes + 1.0)
        sigma = origin[:, None] + np.sign(length)[:, None] * s
        disp = x[:, None, :] - self.spline(sigma)
        scale = (0.5 * span) ** (1.0 - beta)
        dz = self.spline(sigma, 1) * (weights * s**beta)[..., None] * scale[:, None, None]
        return np.einsum("tq...,tqk->t...k", kernel(disp), dz)

    def _inner(self, x, origin, length, singular, hi, kernel, beta, tail):
        out = np.empty((x.shape[0],) + tail)
        regular = ~singular
        if regular.any():
            out[regular] = self._segment(
                x[regular], origin[regular], length[regular], 0.0, hi, kernel
            )
        if singular.any():
            out[singular] = self._singular_segment(
                x[singular], origin[singular], length[singular], hi, kernel, beta
            )
        return out

    def _refine(self, x, origin, length, singular, kernel, value_shape, beta, tol, max_depth):
        tail = value_shape + (2,)
        inner = self._inner(x, origin, length, singular, 1.0, kernel, beta, tail)
        outer = np.zeros_like(inner)
        active = np.arange(x.shape[0])
        increment = np.zeros(x.shape[0])
        depth = 0
        for depth in range(1, max_depth + 1):
            if active.size == 0:
                break
            hi = 0.5 ** (depth - 1)
            lo = 0.5 * hi
            xa, oa, la, sa = x[active], origin[active], length[active], singular[active]
            new_outer = self._segment(xa, oa, la, lo, hi, kernel)
            new_inner = self._inner(xa, oa, la, sa, lo, kernel, beta, tail)
            change = new_outer + new_inner - inner[active]
            outer[active] += new_outer
            inner[active] = new_inner
            total = _norm(outer[active] + inner[active])
            increment[active] = _norm(change) / np.where(total > 0.0, total, 1.0)
            if depth >= MIN_DEPTH:
                active = active[increment[active] > tol]
        if active.size:
            worst = float(increment[active].max())
            raise QuadratureError(
                f"graded refinement left {active.size} panel sides unconverged",
                achieved_tolerance=worst,
                depth=depth,
            )
        logger.trace("graded refinement converged for {} panel sides", x.shape[0])
        return outer + inner
