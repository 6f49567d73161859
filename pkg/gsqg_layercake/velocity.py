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

"""Velocity induced by a layer cake.

Boundary form, exact by Green's theorem for every ε ≥ 0:

    u(x) = -Σ_j μ_j ∮ K_ε(x - z_j) dz_j,

with derivatives Du[i, j] = -Σ μ ∮ ∂_j K_ε dz_i and
D²u[i, j, k] = -Σ μ ∮ ∂_j∂_k K_ε dz_i (ε > 0 only).

Area form, used as an independent check of the boundary form:

    u_ε(x) = ∫ ∇^⊥K_ε(x - y) θ(y) dy,

evaluated by a midpoint rule on a uniform grid; its derivatives use the
difference forms ∫ D^n(∇^⊥K_ε)(x - y)(θ(y) - θ(x)) dy.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger
from numpy.typing import NDArray
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from . import geometry
from .exceptions import GridResolutionError
from .kernel import (
    MollifierParam,
    eval_D_gradperp_K,
    eval_D2_gradperp_K,
    eval_grad_K,
    eval_gradperp_K,
    eval_hessian_K,
    eval_K,
)
from .layercake import LayerCake, theta_values
from .quadrature import CurveQuadrature, panel_points

FloatArray = NDArray[np.float64]

THREADS_ENV = "GSQG_THREADS"
_BLOCK = 2048
_BOX_PANELS = 64


def resolve_threads(threads: Optional[int] = None) -> int:
    """Worker count: explicit value, else ``GSQG_THREADS``, 0 meaning one per CPU."""
    if threads is None:
        raw = os.environ.get(THREADS_ENV, "0")
        try:
            threads = int(raw)
        except ValueError:
            logger.warning("ignoring non-integer {}={!r}", THREADS_ENV, raw)
            threads = 0
    if threads <= 0:
        threads = os.cpu_count() or 1
    return threads


@dataclass(frozen=True)
class LinearField:
    """Synthetic velocity u(x) = b + A x added to the induced one."""

    b: Tuple[float, float] = (0.0, 0.0)
    A: Tuple[Tuple[float, float], Tuple[float, float]] = ((0.0, 0.0), (0.0, 0.0))

    def __call__(self, x: FloatArray) -> FloatArray:
        return np.asarray(self.b) + np.asarray(x) @ np.asarray(self.A).T

    @property
    def matrix(self) -> FloatArray:
        return np.asarray(self.A, dtype=np.float64)

    @classmethod
    def strain(cls, rate: float) -> "LinearField":
        """Pure strain compressing along x and stretching along y."""
        return cls(A=((-rate, 0.0), (0.0, rate)))


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid for the area forms.

    Attributes:
        h: Cell size, at most ε/4.
        bbox: (xmin, xmax, ymin, ymax); ``None`` covers the cake with a margin.
        supersample: Sub-cells per axis in cells cut by a curve.
    """

    h: float
    bbox: Optional[Tuple[float, float, float, float]] = None
    supersample: int = 4


@dataclass(frozen=True)
class CurveDerivatives:
    """Derivative data at the nodes of one curve.

    ``du_n_n`` and ``d2u_tt_n`` are ``None`` without mollification.
    """

    u: FloatArray
    ds_u_t: FloatArray
    ds_u_n: FloatArray
    du_n_n: Optional[FloatArray]
    d2u_tt_n: Optional[FloatArray]


class VelocityField:
    """Velocity of a layer cake with its quadrature settings.

    Args:
        cake: Source of the velocity.
        mollifier: Kernel mollification.
        tol: Relative increment stopping graded refinement.
        max_depth: Largest number of dyadic refinements.
        threads: Worker threads for target fan-out, see :func:`resolve_threads`.
        external: Optional synthetic linear field added to the induced velocity.
        self_induced: Include the velocity induced by the cake.
    """

    def __init__(
        self,
        cake: LayerCake,
        mollifier: MollifierParam = MollifierParam(),
        tol: float = 1e-8,
        max_depth: int = 24,
        threads: Optional[int] = None,
        external: Optional[LinearField] = None,
        self_induced: bool = True,
    ) -> None:
        if not tol > 0.0:
            raise ValueError(f"tol must be positive, got {tol}")
        if max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {max_depth}")
        self.cake = cake
        self.mollifier = mollifier
        self.tol = tol
        self.max_depth = max_depth
        self.threads = resolve_threads(threads)
        self.external = external
        self.self_induced = self_induced
        self._area_cache: Dict[GridSpec, Tuple[FloatArray, FloatArray, Tuple[float, ...]]] = {}

    def with_cake(self, cake: LayerCake) -> "VelocityField":
        """Same settings, another cake."""
        return VelocityField(
            cake, self.mollifier, self.tol, self.max_depth, self.threads,
            self.external, self.self_induced,
        )

    @property
    def p(self):
        return self.cake.alpha

    @cached_property
    def quadratures(self) -> List[CurveQuadrature]:
        """Panel data per curve; mollified kernels get panels shorter than ε/4."""
        out = []
        for curve in self.cake.curves:
            subdivisions = 1
            if self.mollifier.active:
                widest = float(curve.segment_lengths.max())
                subdivisions = max(1, int(np.ceil(4.0 * widest / self.mollifier.epsilon)))
            out.append(CurveQuadrature(curve, subdivisions))
        return out

    def _fan_out(self, fn: Callable[[FloatArray], FloatArray], targets: FloatArray) -> FloatArray:
        if self.threads == 1 or targets.shape[0] <= _BLOCK:
            return fn(targets)
        blocks = [targets[i : i + _BLOCK] for i in range(0, targets.shape[0], _BLOCK)]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return np.concatenate(list(pool.map(fn, blocks)))

    def _contour(self, targets: FloatArray, order: int) -> FloatArray:
        """-Σ μ ∮ D^order K_ε(x - z) ⊗ dz, last axis indexing dz."""
        p, m = self.p, self.mollifier
        kernels = {
            0: (lambda d: eval_K(d, p, m), ()),
            1: (lambda d: eval_grad_K(d, p, m), (2,)),
            2: (lambda d: eval_hessian_K(d, p, m), (2, 2)),
        }
        kernel, shape = kernels[order]
        singular = 2.0 * p.alpha if (order == 0 and not m.active) else None
        quads = self.quadratures

        def evaluate(block: FloatArray) -> FloatArray:
            total = np.zeros((block.shape[0],) + shape + (2,))
            for comp, quad in zip(self.cake, quads):
                total -= comp.weight * quad.integrate(
                    block, kernel, shape, singular_exponent=singular,
                    tol=self.tol, max_depth=self.max_depth,
                )
            return total

        return self._fan_out(evaluate, targets)

    def velocity(self, targets) -> FloatArray:
        """u at points of shape (P, 2), boundary form plus the external field."""
        targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        out = np.zeros_like(targets)
        if self.self_induced and len(self.cake):
            out += self._contour(targets, 0)
        if self.external is not None:
            out += self.external(targets)
        return out

    def gradient(self, targets) -> FloatArray:
        """Du at points, shape (P, 2, 2) with [i, j] = ∂_j u_i."""
        self._require_mollifier()
        targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        out = np.zeros((targets.shape[0], 2, 2))
        if self.self_induced and len(self.cake):
            out += np.swapaxes(self._contour(targets, 1), 1, 2)
        if self.external is not None:
            out += self.external.matrix
        return out

    def hessian(self, targets) -> FloatArray:
        """D²u at points, shape (P, 2, 2, 2) with [i, j, k] = ∂_j∂_k u_i."""
        self._require_mollifier()
        targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        if not (self.self_induced and len(self.cake)):
            return np.zeros((targets.shape[0], 2, 2, 2))
        return np.moveaxis(self._contour(targets, 2), 3, 1)

    def _require_mollifier(self) -> None:
        if not self.mollifier.active:
            raise GridResolutionError(
                "velocity derivatives need a mollified kernel (epsilon > 0)"
            )

    # ------------------------------------------------------------ area forms

    def default_grid(self, h: Optional[float] = None) -> GridSpec:
        """Grid with spacing ε/4 unless ``h`` is given."""
        self._require_mollifier()
        return GridSpec(h if h is not None else 0.25 * self.mollifier.epsilon)

    def area_samples(self, grid: GridSpec) -> Tuple[FloatArray, FloatArray, Tuple[float, ...]]:
        """Quadrature points, weights θ(y)·area and the covered rectangle.

        Raises:
            GridResolutionError: If ε = 0 or h > ε/4.
        """
        self._require_mollifier()
        eps = self.mollifier.epsilon
        if grid.h > 0.25 * eps * (1.0 + 1e-12):
            raise GridResolutionError(f"grid spacing {grid.h:g} exceeds epsilon/4 = {eps / 4:g}")
        if grid in self._area_cache:
            return self._area_cache[grid]

        if grid.bbox is None:
            xmin, xmax, ymin, ymax = self.cake.bounding_box()
            pad = 2.0 * eps + 4.0 * grid.h
            box = (xmin - pad, xmax + pad, ymin - pad, ymax + pad)
        else:
            box = tuple(float(v) for v in grid.bbox)
        nx = max(1, int(np.ceil((box[1] - box[0]) / grid.h)))
        ny = max(1, int(np.ceil((box[3] - box[2]) / grid.h)))
        box = (box[0], box[0] + nx * grid.h, box[2], box[2] + ny * grid.h)
        cx = box[0] + (np.arange(nx) + 0.5) * grid.h
        cy = box[2] + (np.arange(ny) + 0.5) * grid.h
        gx, gy = np.meshgrid(cx, cy)
        centres = np.column_stack([gx.ravel(), gy.ravel()])

        if len(self.cake):
            near = np.zeros(centres.shape[0], dtype=bool)
            for curve in self.cake.curves:
                near |= geometry.distances_to_curve(centres, curve) < grid.h * np.sqrt(0.5)
        else:
            near = np.zeros(centres.shape[0], dtype=bool)
        s = grid.supersample
        offsets = ((np.arange(s) + 0.5) / s - 0.5) * grid.h
        ox, oy = np.meshgrid(offsets, offsets)
        sub = (centres[near][:, None, :] + np.column_stack([ox.ravel(), oy.ravel()])[None]).reshape(-1, 2)
        points = np.vstack([centres[~near], sub])
        cell = np.concatenate(
            [np.full((~near).sum(), grid.h**2), np.full(sub.shape[0], grid.h**2 / s**2)]
        )
        weights = theta_values(self.cake, points) * cell
        keep = weights != 0.0
        result = (points[keep], weights[keep], box)
        logger.debug(
            "area grid {}x{} (h={:g}): {} supersampled cells, {} weighted points",
            nx, ny, grid.h, int(near.sum()), int(keep.sum()),
        )
        self._area_cache[grid] = result
        return result

    def _box_boundary(self, box: Tuple[float, ...]) -> Tuple[FloatArray, FloatArray, FloatArray]:
        """Gauss points, weights and outward normals on the rectangle boundary."""
        xmin, xmax, ymin, ymax = box
        corners = np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]])
        normals = np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        fractions = np.linspace(0.0, 1.0, _BOX_PANELS + 1)
        t, w = panel_points(fractions[:-1], fractions[1:])
        t, w = t.ravel(), w.ravel()
        pts, wts, nrm = [], [], []
        for k in range(4):
            a, b = corners[k], corners[(k + 1) % 4]
            pts.append(a + t[:, None] * (b - a))
            wts.append(w * np.linalg.norm(b - a))
            nrm.append(np.repeat(normals[k][None], t.size, axis=0))
        return np.vstack(pts), np.concatenate(wts), np.vstack(nrm)

    def exterior_integral(self, x: FloatArray, box, order: int) -> FloatArray:
        """∫ over the outside of ``box`` of D^order(∇^⊥K_ε)(x - y) dy, order 1 or 2."""
        p, m = self.p, self.mollifier
        pts, wts, nrm = self._box_boundary(box)
        disp = x[None, :] - pts
        if order == 1:
            g = eval_gradperp_K(disp, p, m)
            return np.einsum("qi,qj,q->ij", g, nrm, wts)
        dg = eval_D_gradperp_K(disp, p, m)
        return np.einsum("qik,qj,q->ijk", dg, nrm, wts)


# ---------------------------------------------------------------- operations


def u_boundary(vf: VelocityField, x) -> FloatArray:
    """u(x) by the boundary integral, valid on and off the curves.

    Raises:
        QuadratureError: If graded refinement does not converge.
    """
    return vf.velocity(np.asarray(x, dtype=np.float64)[None, :])[0]


def u_eps_area(vf: VelocityField, x, grid_spec: Optional[GridSpec] = None) -> FloatArray:
    """u_ε(x) = ∫ ∇^⊥K_ε(x - y) θ(y) dy by the midpoint rule.

    Raises:
        GridResolutionError: If ε = 0 or the grid is coarser than ε/4.
    """
    grid = grid_spec or vf.default_grid()
    points, weights, _ = vf.area_samples(grid)
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(2)
    for i in range(0, points.shape[0], 65536):
        disp = x[None, :] - points[i : i + 65536]
        out += eval_gradperp_K(disp, vf.p, vf.mollifier).T @ weights[i : i + 65536]
    if vf.external is not None:
        out += vf.external(x[None, :])[0]
    return out


def _difference_form(vf: VelocityField, x: FloatArray, grid: GridSpec, order: int) -> FloatArray:
    points, weights, box = vf.area_samples(grid)
    cell = weights.copy()
    theta_x = float(theta_values(vf.cake, x[None, :])[0])
    kernel = eval_D_gradperp_K if order == 1 else eval_D2_gradperp_K
    if theta_x == 0.0:
        disp = x[None, :] - points
        return np.tensordot(cell, kernel(disp, vf.p, vf.mollifier), axes=(0, 0))

    # θ(y) - θ(x) on the whole grid, including cells where θ vanishes
    h = grid.h
    xmin, xmax, ymin, ymax = box
    nx = int(round((xmax - xmin) / h))
    ny = int(round((ymax - ymin) / h))
    gx, gy = np.meshgrid(xmin + (np.arange(nx) + 0.5) * h, ymin + (np.arange(ny) + 0.5) * h)
    centres = np.column_stack([gx.ravel(), gy.ravel()])
    total = np.tensordot(cell, kernel(x[None, :] - points, vf.p, vf.mollifier), axes=(0, 0))
    for i in range(0, centres.shape[0], 65536):
        disp = x[None, :] - centres[i : i + 65536]
        total -= theta_x * h**2 * kernel(disp, vf.p, vf.mollifier).sum(axis=0)
    return total - theta_x * vf.exterior_integral(x, box, order)


def grad_u_mollified(vf: VelocityField, x, grid_spec: Optional[GridSpec] = None) -> FloatArray:
    """D u_ε(x) as a 2x2 matrix [i, j] = ∂_j u_i.

    Without ``grid_spec`` the boundary form is used; with it, the area
    difference form ∫ D(∇^⊥K_ε)(x - y)(θ(y) - θ(x)) dy.
    """
    x = np.asarray(x, dtype=np.float64)
    if grid_spec is None:
        return vf.gradient(x[None, :])[0]
    out = _difference_form(vf, x, grid_spec, 1)
    if vf.external is not None:
        out = out + vf.external.matrix
    return out


def d2u_mollified(
    vf: VelocityField, x, h1, h2, grid_spec: Optional[GridSpec] = None
) -> FloatArray:
    """D²u_ε(x)(h1, h2); boundary form without ``grid_spec``, area difference form with it."""
    x = np.asarray(x, dtype=np.float64)
    if grid_spec is None:
        tensor = vf.hessian(x[None, :])[0]
    else:
        tensor = _difference_form(vf, x, grid_spec, 2)
    return np.einsum("ijk,j,k->i", tensor, np.asarray(h1, float), np.asarray(h2, float))


def velocity_at_nodes(
    vf: VelocityField, source: str = "boundary", grid_h: Optional[float] = None
) -> List[FloatArray]:
    """u at every node of every curve, one array per curve.

    Args:
        vf: Velocity field.
        source: ``"boundary"`` for the contour integral, ``"area"`` for the
            midpoint rule on the default grid.
        grid_h: Area grid spacing, ε/4 when ``None``.
    """
    curves = vf.cake.curves
    if not curves:
        return []
    nodes = np.vstack([c.nodes for c in curves])
    if source == "area":
        grid = vf.default_grid(grid_h)
        flat = np.array([u_eps_area(vf, x, grid) for x in nodes])
    elif source == "boundary":
        flat = vf.velocity(nodes)
    else:
        raise ValueError(f"unknown velocity source {source!r}")
    return np.split(flat, np.cumsum([len(c) for c in curves])[:-1])


def du_along_curve(
    vf: VelocityField, curve_index: int, velocities: Optional[FloatArray] = None
) -> CurveDerivatives:
    """∂_s u·T, ∂_s u·N and, when mollified, Du(N)·N and D²u(T,T)·N at the nodes.

    ∂_s u comes from the periodic spline of the nodal velocities in the curve's
    chord-length parameter.
    """
    curve = vf.cake[curve_index].curve
    u = vf.velocity(curve.nodes) if velocities is None else np.asarray(velocities)
    closed = np.vstack([u, u[:1]])
    du = CubicSpline(curve.parameter, closed, bc_type="periodic")(curve.parameter[:-1], 1)
    speed = np.linalg.norm(curve.spline(curve.parameter[:-1], 1), axis=1)
    ds_u = du / speed[:, None]
    t, n = curve.tangents, curve.normals
    ds_u_t = np.einsum("ij,ij->i", ds_u, t)
    ds_u_n = np.einsum("ij,ij->i", ds_u, n)
    if not vf.mollifier.active:
        return CurveDerivatives(u, ds_u_t, ds_u_n, None, None)
    grad = vf.gradient(curve.nodes)
    hess = vf.hessian(curve.nodes)
    du_n_n = np.einsum("pij,pj,pi->p", grad, n, n)
    d2u_tt_n = np.einsum("pijk,pj,pk,pi->p", hess, t, t, n)
    return CurveDerivatives(u, ds_u_t, ds_u_n, du_n_n, d2u_tt_n)


def h2_rate(vf: VelocityField, curve_index: int) -> float:
    """d/dt ∮ κ² ds = ∮ κ² [2 Du(N)·N - 3 ∂_s u·T] ds + 2 ∮ κ D²u(T,T)·N ds."""
    curve = vf.cake[curve_index].curve
    deriv = du_along_curve(vf, curve_index)
    if deriv.du_n_n is None:
        raise GridResolutionError("the curvature rate needs a mollified kernel (epsilon > 0)")
    kappa = geometry.curvature_profile(curve)
    integrand = kappa**2 * (2.0 * deriv.du_n_n - 3.0 * deriv.ds_u_t) + 2.0 * kappa * deriv.d2u_tt_n
    return geometry.integrate_along(curve, integrand)


def length_rate(
    vf: VelocityField,
    curve_index: int,
    rule: str = "segment",
    velocities: Optional[FloatArray] = None,
) -> float:
    """dℓ/dt = ∮ ∂_s u·T ds.

    ``rule="segment"`` differentiates the polyline length exactly,
    Σ_i T_i·(u_{i+1} - u_i) with T_i the unit chord; ``rule="spline"``
    integrates ∂_s u·T along the spline.
    """
    curve = vf.cake[curve_index].curve
    u = vf.velocity(curve.nodes) if velocities is None else np.asarray(velocities)
    if rule == "segment":
        chords = np.roll(curve.nodes, -1, axis=0) - curve.nodes
        unit = chords / curve.segment_lengths[:, None]
        return float(np.sum(unit * (np.roll(u, -1, axis=0) - u)))
    if rule == "spline":
        return geometry.integrate_along(curve, du_along_curve(vf, curve_index, u).ds_u_t)
    raise ValueError(f"unknown length-rate rule {rule!r}")


def lipschitz_estimate(
    vf: VelocityField,
    velocities: Optional[List[FloatArray]] = None,
    random_pairs: int = 1000,
    seed: int = 0,
) -> float:
    """Largest difference quotient |u(x) - u(y)| / |x - y| over node pairs.

    Pairs are every node with its 8 nearest nodes (over all curves) plus
    ``random_pairs`` seeded random pairs.
    """
    curves = vf.cake.curves
    if not curves:
        return 0.0
    if velocities is None:
        velocities = velocity_at_nodes(vf)
    nodes = np.vstack([c.nodes for c in curves])
    u = np.vstack(velocities)
    k = min(9, nodes.shape[0])
    _, idx = cKDTree(nodes).query(nodes, k=k)
    first = np.repeat(np.arange(nodes.shape[0]), k - 1)
    second = idx[:, 1:].ravel()
    rng = np.random.default_rng(seed)
    first = np.concatenate([first, rng.integers(0, nodes.shape[0], random_pairs)])
    second = np.concatenate([second, rng.integers(0, nodes.shape[0], random_pairs)])
    gap = np.linalg.norm(nodes[first] - nodes[second], axis=1)
    keep = gap > 0.0
    quotient = np.linalg.norm(u[first] - u[second], axis=1)[keep] / gap[keep]
    return float(quotient.max()) if quotient.size else 0.0


def max_speed(vf: VelocityField, velocities: Optional[List[FloatArray]] = None) -> float:
    """sup |u| over the nodes."""
    if velocities is None:
        velocities = velocity_at_nodes(vf)
    if not velocities:
        return 0.0
    return float(np.max(np.linalg.norm(np.vstack(velocities), axis=1)))
