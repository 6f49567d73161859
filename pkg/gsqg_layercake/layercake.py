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

"""Discrete layer-cake representations and their regularity functionals.

A ``LayerCake`` is a finite list of weighted simple closed curves. The scalar
it represents is θ(x) = Σ_j μ_j 1[x inside curve j]. The functionals are

* L^η = sup_x Σ_j |μ_j| / (d(x, curve_j) + η)^{2α},
* R^η = max_j ℓ_j^{1/2} Σ_{k≠j} |μ_k| / (ℓ_k^{1/2} (Δ_jk + η)^{2α}),
* Q = max_j ℓ_j ‖z_j‖²_{Ḣ²}, Λ = Σ_j |μ_j| ℓ_j and Σ = min_j area_j.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from numpy.typing import NDArray

from . import geometry
from .contours import GridSamples, densify, drop_repeats, extract_loops, signed_area_of
from .exceptions import GeometryError, ProfileError
from .geometry import ClosedCurve
from .kernel import AlphaParam

FloatArray = NDArray[np.float64]

BACKGROUND_GRID = 24


@dataclass(frozen=True)
class LevelComponent:
    """One boundary curve with its signed weight.

    Attributes:
        label: Identifier of the level, e.g. ``"0.25"`` or ``"0.5/1"`` for the
            second component of level 0.5.
        weight: Atom μ_j of the discretised measure, nonzero.
        curve: Boundary of the level set.
    """

    label: str
    weight: float
    curve: ClosedCurve

    def __post_init__(self) -> None:
        if not (np.isfinite(self.weight) and self.weight != 0.0):
            raise GeometryError(f"component {self.label}: weight must be finite and nonzero")


@dataclass(frozen=True)
class ThetaSample:
    """Value of θ at a point.

    ``one_sided`` holds the (inside, outside) limits when the point lies on
    some curve, in which case ``value`` is their mean.
    """

    value: float
    on_boundary: bool = False
    one_sided: Optional[Tuple[float, float]] = None


class LayerCake:
    """Immutable family of weighted, positively oriented simple closed curves.

    Args:
        components: Level components.
        alpha: Kernel parameters carried with the cake.
        validate: Check simplicity and orientation of every curve.

    Raises:
        GeometryError: If a curve is self-intersecting or negatively oriented.
    """

    def __init__(
        self,
        components: Sequence[LevelComponent],
        alpha: AlphaParam,
        validate: bool = True,
    ) -> None:
        self._components: Tuple[LevelComponent, ...] = tuple(components)
        self.alpha = alpha
        if validate:
            for comp in self._components:
                area = geometry.signed_area(comp.curve)
                if area <= 0.0:
                    raise GeometryError(
                        f"component {comp.label}: curve is not positively oriented (area {area:.3e})"
                    )
                simple, pair = geometry.is_simple(comp.curve)
                if not simple:
                    raise GeometryError(f"component {comp.label}: segments {pair} intersect")

    def __len__(self) -> int:
        return len(self._components)

    def __iter__(self) -> Iterator[LevelComponent]:
        return iter(self._components)

    def __getitem__(self, index: int) -> LevelComponent:
        return self._components[index]

    def __repr__(self) -> str:
        return f"LayerCake(components={len(self)}, alpha={self.alpha.alpha})"

    @property
    def components(self) -> Tuple[LevelComponent, ...]:
        return self._components

    @property
    def curves(self) -> List[ClosedCurve]:
        return [c.curve for c in self._components]

    @cached_property
    def weights(self) -> FloatArray:
        out = np.array([c.weight for c in self._components], dtype=np.float64)
        out.setflags(write=False)
        return out

    @property
    def labels(self) -> List[str]:
        return [c.label for c in self._components]

    @cached_property
    def lengths(self) -> FloatArray:
        return np.array([c.curve.length for c in self._components], dtype=np.float64)

    @cached_property
    def areas(self) -> FloatArray:
        return np.array([geometry.signed_area(c.curve) for c in self._components])

    @cached_property
    def h2_seminorms(self) -> FloatArray:
        return np.array([geometry.h2_seminorm_sq(c.curve) for c in self._components])

    @cached_property
    def node_count(self) -> int:
        """Total number of nodes over all curves."""
        return int(sum(len(c.curve) for c in self._components))

    @cached_property
    def pairwise_distances(self) -> FloatArray:
        """Symmetric matrix of Δ(curve_j, curve_k), with +inf on the diagonal."""
        m = len(self)
        out = np.full((m, m), np.inf)
        curves = self.curves
        for j in range(m):
            for k in range(j + 1, m):
                out[j, k] = out[k, j] = geometry.dist_curve_curve(curves[j], curves[k])
        return out

    def bounding_box(self, margin: float = 0.0) -> Tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) of all nodes, padded by ``margin`` times the extent."""
        if not self._components:
            return -1.0, 1.0, -1.0, 1.0
        nodes = np.vstack([c.curve.nodes for c in self._components])
        lo = nodes.min(axis=0)
        hi = nodes.max(axis=0)
        pad = margin * float(np.max(hi - lo))
        return lo[0] - pad, hi[0] + pad, lo[1] - pad, hi[1] + pad

    def with_curves(self, curves: Sequence[ClosedCurve], validate: bool = True) -> "LayerCake":
        """Same labels and weights, new curves."""
        if len(curves) != len(self):
            raise GeometryError(f"expected {len(self)} curves, got {len(curves)}")
        comps = [
            LevelComponent(c.label, c.weight, curve) for c, curve in zip(self._components, curves)
        ]
        return LayerCake(comps, self.alpha, validate=validate)


# ---------------------------------------------------------------- radial profiles


@dataclass(frozen=True)
class RadialProfile:
    """A radially decreasing bump θ(x) = value(|x|) with an analytic inverse.

    Attributes:
        name: Preset name.
        value: θ as a function of the radius.
        inverse: Radius of the level set {θ = λ} for 0 < λ < sup θ.
        sup: Maximum of θ, attained at the origin.
        params: Parameters the profile was built with.
    """

    name: str
    value: Callable[[FloatArray], FloatArray]
    inverse: Callable[[FloatArray], FloatArray]
    sup: float = 1.0
    params: Dict[str, float] = field(default_factory=dict)


def _positive(name: str, value: float) -> float:
    if not (np.isfinite(value) and value > 0.0):
        raise ProfileError(f"profile parameter {name} must be positive, got {value}")
    return float(value)


def bump_pow_inner(beta: float = 1.0) -> RadialProfile:
    """[1 - |x|^β]_+."""
    beta = _positive("beta", beta)
    return RadialProfile(
        "bump-pow-inner",
        lambda r: np.clip(1.0 - np.asarray(r) ** beta, 0.0, None),
        lambda lam: (1.0 - np.asarray(lam)) ** (1.0 / beta),
        params={"beta": beta},
    )


def bump_pow_outer(beta: float = 1.0) -> RadialProfile:
    """[1 - |x|]_+^β."""
    beta = _positive("beta", beta)
    return RadialProfile(
        "bump-pow-outer",
        lambda r: np.clip(1.0 - np.asarray(r), 0.0, None) ** beta,
        lambda lam: 1.0 - np.asarray(lam) ** (1.0 / beta),
        params={"beta": beta},
    )


def gaussian(width: float = 0.3) -> RadialProfile:
    """exp(-|x|² / (2 w²))."""
    width = _positive("width", width)
    return RadialProfile(
        "gaussian",
        lambda r: np.exp(-0.5 * (np.asarray(r) / width) ** 2),
        lambda lam: width * np.sqrt(-2.0 * np.log(np.asarray(lam))),
        params={"width": width},
    )


RADIAL_PROFILES: Dict[str, Callable[..., RadialProfile]] = {
    "bump-pow-inner": bump_pow_inner,
    "bump-pow-outer": bump_pow_outer,
    "gaussian": gaussian,
}


def radial_profile(name: str, **params: float) -> RadialProfile:
    """Look up a radial profile preset by name."""
    try:
        builder = RADIAL_PROFILES[name]
    except KeyError as err:
        raise ProfileError(
            f"unknown radial profile {name!r}; known: {', '.join(sorted(RADIAL_PROFILES))}"
        ) from err
    return builder(**params)


def from_radial_profile(
    profile: RadialProfile,
    levels: int,
    nodes: int,
    p: AlphaParam,
    center: Sequence[float] = (0.0, 0.0),
    height: float = 1.0,
    radius: float = 1.0,
) -> LayerCake:
    """Layer-cake decomposition of ``height * profile(|x - center| / radius)``.

    Levels sit at the midpoints λ_j = (j - 1/2) sup θ / M; every circle gets the
    weight sup θ / M.

    Args:
        profile: Radial profile.
        levels: Number of circles M, at least 2.
        nodes: Nodes per circle.
        p: Kernel parameters.
        center: Bump centre.
        height: Vertical scale.
        radius: Horizontal scale.

    Raises:
        ProfileError: If M < 2 or some level has no positive finite radius.
    """
    if levels < 2:
        raise ProfileError(f"levels must be >= 2, got {levels}")
    top = height * profile.sup
    spacing = top / levels
    lam = (np.arange(1, levels + 1) - 0.5) / levels * profile.sup
    radii = radius * np.asarray(profile.inverse(lam), dtype=np.float64)
    bad = ~(np.isfinite(radii) & (radii > 0.0))
    if bad.any():
        raise ProfileError(
            f"profile {profile.name} is not invertible at level {lam[np.argmax(bad)]:.6g}"
        )
    comps = [
        LevelComponent(f"{height * l:.6g}", spacing, ClosedCurve.circle(r, nodes, center))
        for l, r in zip(lam, radii)
    ]
    logger.debug("radial profile {}: {} circles, radii {:.4g}..{:.4g}", profile.name, levels,
                 radii.min(), radii.max())
    return LayerCake(comps, p)


def cone_stack(
    p: AlphaParam, n_max: int, levels: int, nodes: int, amplitude: float = 1.0
) -> LayerCake:
    """a Σ_{n=1}^{n_max} 3^{1-2αn} [1 - 3^n |x - (2^{1-n}, 0)|]_+, each cone as ``levels`` circles."""
    if n_max < 1:
        raise ProfileError(f"n_max must be >= 1, got {n_max}")
    comps: List[LevelComponent] = []
    for n in range(1, n_max + 1):
        height = amplitude * 3.0 ** (1.0 - 2.0 * p.alpha * n)
        cone = from_radial_profile(
            bump_pow_outer(1.0), levels, nodes, p,
            center=(2.0 ** (1 - n), 0.0), height=height, radius=3.0**-n,
        )
        comps.extend(LevelComponent(f"cone{n}:{c.label}", c.weight, c.curve) for c in cone)
    return LayerCake(comps, p, validate=False)


# ---------------------------------------------------------------- scalar grids


def level_spacings(levels: Sequence[float]) -> Dict[float, float]:
    """Δλ of every level, taken from the sorted |λ| of its sign.

    Raises:
        ProfileError: If a level is zero or repeated.
    """
    if any(l == 0.0 for l in levels):
        raise ProfileError("level 0 has no finite-area level set")
    spacings: Dict[float, float] = {}
    for sign in (1.0, -1.0):
        mags = sorted(abs(l) for l in levels if l * sign > 0.0)
        if len(set(mags)) != len(mags):
            raise ProfileError(f"repeated level in {list(levels)}")
        if len(mags) == 1:
            spacings[sign * mags[0]] = 2.0 * mags[0]
        elif mags:
            steps = np.diff(mags)
            spacings[sign * mags[0]] = float(steps[0])
            for mag, step in zip(mags[1:], steps):
                spacings[sign * mag] = float(step)
    return spacings


def from_scalar_grid(
    samples: GridSamples,
    levels: Sequence[float],
    p: AlphaParam,
    spacing: Optional[float] = None,
    nodes: Optional[int] = 256,
) -> LayerCake:
    """Extract the boundaries of {θ > λ} (λ > 0) and {θ < λ} (λ < 0).

    With dμ = sgn(λ) dλ every curve of level λ gets weight sgn(λ) Δλ; holes
    become positively oriented curves of the opposite weight.

    Args:
        samples: Grid samples of θ.
        levels: Nonzero level values.
        p: Kernel parameters.
        spacing: Δλ for every level. By default each level gets the gap to the
            next smaller |λ| of the same sign; the smallest level gets the
            gap above it, and a lone level of its sign gets 2|λ|.
        nodes: Resample every curve to this many nodes; ``None`` keeps the raw
            marching-squares polyline.

    Raises:
        ContourError: If a level set reaches the grid boundary.
    """
    levels = [float(l) for l in levels]
    gaps = level_spacings(levels)
    comps: List[LevelComponent] = []
    for lam in levels:
        sign = 1.0 if lam > 0.0 else -1.0
        delta = spacing if spacing is not None else gaps[lam]
        oriented = GridSamples(sign * samples.values, samples.bbox)
        for index, loop in enumerate(extract_loops(oriented, abs(lam))):
            loop = drop_repeats(loop)
            weight = sign * delta
            if signed_area_of(loop) < 0.0:
                loop = loop[::-1]
                weight = -weight
            curve = ClosedCurve(densify(loop, geometry.MIN_NODES))
            if nodes is not None:
                curve = geometry.resample_arclength(curve, nodes)
            comps.append(LevelComponent(f"{lam:.6g}/{index}", weight, curve))
    logger.info("extracted {} curve(s) from {} level(s)", len(comps), len(levels))
    return LayerCake(comps, p)


# ---------------------------------------------------------------- evaluation


def theta_values(cake: LayerCake, points) -> FloatArray:
    """θ at many points; points on a curve count as outside it."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    out = np.zeros(points.shape[0])
    for comp in cake:
        out += comp.weight * (geometry.winding_numbers(points, comp.curve) != 0)
    return out


def evaluate_theta(cake: LayerCake, x) -> ThetaSample:
    """θ(x) = Σ_j μ_j [winding_number(x, curve_j) ≠ 0].

    A point on some curve is flagged and returned with both one-sided values.
    """
    inside = 0.0
    outside = 0.0
    hit = False
    for comp in cake:
        winding = geometry.winding_number(x, comp.curve)
        if winding is None:
            hit = True
            inside += comp.weight
        elif winding != 0:
            inside += comp.weight
            outside += comp.weight
    if hit:
        return ThetaSample(0.5 * (inside + outside), True, (inside, outside))
    return ThetaSample(inside)


def default_eta(cake: LayerCake) -> float:
    """min(Δλ^{1/(2α)}, ℓ_min / N) with Δλ the largest |μ_j|."""
    if not len(cake):
        return 1.0
    spacing = float(np.max(np.abs(cake.weights)))
    resolution = min(c.curve.length / len(c.curve) for c in cake)
    return min(spacing ** (1.0 / (2.0 * cake.alpha.alpha)), resolution)


@dataclass(frozen=True)
class SampleSpec:
    """Point set replacing sup_x in L^η.

    Attributes:
        offsets: Normal offsets in units of η, applied on both sides of each node.
        resolution_offset: Also offset by the mean node spacing ℓ/N.
        grid: Background grid points per axis.
        margin: Background grid padding, relative to the cake extent.
    """

    offsets: Tuple[float, ...] = (1.0, 2.0)
    resolution_offset: bool = True
    grid: int = BACKGROUND_GRID
    margin: float = 0.1


def sample_points(cake: LayerCake, eta: float, spec: SampleSpec = SampleSpec()) -> FloatArray:
    """Curve nodes, their normal offsets, a background grid and the curve centroids."""
    chunks = []
    for comp in cake:
        curve = comp.curve
        chunks.append(curve.nodes)
        steps = [k * eta for k in spec.offsets]
        if spec.resolution_offset:
            steps.append(curve.length / len(curve))
        for step in steps:
            chunks.append(curve.nodes + step * curve.normals)
            chunks.append(curve.nodes - step * curve.normals)
        chunks.append(geometry.centroid(curve)[None, :])
    xmin, xmax, ymin, ymax = cake.bounding_box(spec.margin)
    gx, gy = np.meshgrid(np.linspace(xmin, xmax, spec.grid), np.linspace(ymin, ymax, spec.grid))
    chunks.append(np.column_stack([gx.ravel(), gy.ravel()]))
    return np.vstack(chunks)


def l_eta_field(cake: LayerCake, points, eta: float) -> FloatArray:
    """Σ_j |μ_j| / (d(x, curve_j) + η)^{2α} at every point."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    a2 = 2.0 * cake.alpha.alpha
    out = np.zeros(points.shape[0])
    for comp in cake:
        dist = geometry.distances_to_curve(points, comp.curve)
        out += abs(comp.weight) / (dist + eta) ** a2
    return out


def diag_L_eta(
    cake: LayerCake, eta: Optional[float] = None, sample_spec: SampleSpec = SampleSpec()
) -> float:
    """L^η over the structured sample of :func:`sample_points`.

    Args:
        cake: Layer cake.
        eta: Smoothing length, positive; defaults to :func:`default_eta`.
        sample_spec: Sample construction.

    Returns:
        The largest sampled value; 0 for an empty cake.
    """
    if not len(cake):
        return 0.0
    eta = default_eta(cake) if eta is None else eta
    if not eta > 0.0:
        raise ValueError(f"eta must be positive, got {eta}")
    values = l_eta_field(cake, sample_points(cake, eta, sample_spec), eta)
    return float(values.max())


def diag_R_eta(cake: LayerCake, eta: float = 0.0) -> float:
    """R^η with the diagonal term dropped; +inf when distinct curves touch and η = 0."""
    m = len(cake)
    if m < 2:
        return 0.0
    dist = cake.pairwise_distances + eta
    if np.any(dist[~np.eye(m, dtype=bool)] <= 0.0):
        logger.warning("distinct curves touch with eta = 0: R is infinite")
        return float("inf")
    a2 = 2.0 * cake.alpha.alpha
    root = np.sqrt(cake.lengths)
    with np.errstate(divide="ignore"):
        terms = np.abs(cake.weights)[None, :] / (root[None, :] * dist**a2)
    np.fill_diagonal(terms, 0.0)
    return float(np.max(root * terms.sum(axis=1)))


def diag_Q(cake: LayerCake) -> float:
    """max_j ℓ_j ‖z_j‖²_{Ḣ²}; 0 for an empty cake."""
    if not len(cake):
        return 0.0
    return float(np.max(cake.lengths * cake.h2_seminorms))


def diag_Lambda_Sigma(cake: LayerCake) -> Tuple[float, float]:
    """(Λ, Σ) = (Σ_j |μ_j| ℓ_j, min_j area_j); Σ is +inf for an empty cake."""
    if not len(cake):
        return 0.0, float("inf")
    return float(np.sum(np.abs(cake.weights) * cake.lengths)), float(np.min(cake.areas))


def min_pairwise_delta(cake: LayerCake) -> float:
    """Smallest distance between two distinct curves; +inf below two curves."""
    if len(cake) < 2:
        return float("inf")
    return float(cake.pairwise_distances.min())


def h2_sup_bound(cake: LayerCake) -> float:
    """Q / (2 √π Σ^{1/2}), bounding every ‖z_j‖²_{Ḣ²} through ℓ_j ≥ 2 (π Σ)^{1/2}."""
    if not len(cake):
        return 0.0
    _, sigma = diag_Lambda_Sigma(cake)
    return diag_Q(cake) / (2.0 * np.sqrt(np.pi * sigma))


def theta_norms(cake: LayerCake) -> Tuple[float, float]:
    """(‖θ‖_{L¹}, ‖θ‖_{L^∞}).

    The L¹ value Σ|μ_j| area_j is exact for nested same-sign cakes and an upper
    bound otherwise; the L^∞ value is the largest |θ| over the points just
    inside and outside every curve.
    """
    if not len(cake):
        return 0.0, 0.0
    l1 = float(np.sum(np.abs(cake.weights) * cake.areas))
    points = []
    for curve in cake.curves:
        step = 0.25 * curve.length / len(curve)
        points.append(curve.nodes + step * curve.normals)
        points.append(curve.nodes - step * curve.normals)
    linf = float(np.max(np.abs(theta_values(cake, np.vstack(points)))))
    return l1, linf


def holder_bound_check(
    cake: LayerCake,
    eta: Optional[float] = None,
    pairs: int = 1000,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Worst ratio |θ(x) - θ(y)| / (L^η (|x - y| + 2η)^{2α}) over random pairs.

    A ratio at most 1 confirms the η-smoothed Hölder bound on the sample.
    """
    if not len(cake):
        return 0.0
    rng = np.random.default_rng(0) if rng is None else rng
    eta = default_eta(cake) if eta is None else eta
    l_eta = diag_L_eta(cake, eta)
    xmin, xmax, ymin, ymax = cake.bounding_box(0.2)
    lo = np.array([xmin, ymin])
    hi = np.array([xmax, ymax])
    x = lo + (hi - lo) * rng.random((pairs, 2))
    y = lo + (hi - lo) * rng.random((pairs, 2))
    gap = np.linalg.norm(x - y, axis=1)
    bound = l_eta * (gap + 2.0 * eta) ** (2.0 * cake.alpha.alpha)
    return float(np.max(np.abs(theta_values(cake, x) - theta_values(cake, y)) / bound))


def pushforward(cake: LayerCake, fn: Callable[[FloatArray], FloatArray]) -> LayerCake:
    """Apply a point map to every node, keeping labels and weights.

    Orientation-reversing maps are undone by reversing each image curve.
    """
    curves = []
    for curve in cake.curves:
        image = geometry.transform(curve, fn)
        if geometry.signed_area(image) < 0.0:
            image = geometry.reversed_curve(image)
        curves.append(image)
    return cake.with_curves(curves)


# ---------------------------------------------------------------- diagnostics record


@dataclass
class Diagnostics:
    """Snapshot of the regularity functionals of one cake.

    ``lipschitz_u_est`` is filled in by callers holding a velocity field.
    """

    L_eta: float
    R_eta: float
    Q: float
    Lambda: float
    Sigma: float
    min_pairwise_delta: float
    lengths: FloatArray
    areas: FloatArray
    h2_seminorms: FloatArray
    max_kappa: float
    h2_bound: float
    eta: float
    lipschitz_u_est: float = float("nan")

    @property
    def h2_max(self) -> float:
        return float(self.h2_seminorms.max()) if self.h2_seminorms.size else 0.0

    def as_record(self, labels: Sequence[str]) -> Dict[str, float]:
        """Flat mapping for one time-series row."""
        row = {
            "L_eta": self.L_eta,
            "R_eta": self.R_eta,
            "Q": self.Q,
            "Lambda": self.Lambda,
            "Sigma": self.Sigma,
            "min_delta": self.min_pairwise_delta,
            "lip_u": self.lipschitz_u_est,
            "max_kappa": self.max_kappa,
            "h2_max": self.h2_max,
            "h2_bound": self.h2_bound,
        }
        for label, ell, area in zip(labels, self.lengths, self.areas):
            row[f"length[{label}]"] = float(ell)
            row[f"area[{label}]"] = float(area)
        return row


def compute_diagnostics(
    cake: LayerCake,
    eta: Optional[float] = None,
    r_eta: float = 0.0,
    lipschitz: float = float("nan"),
) -> Diagnostics:
    """Evaluate every functional of ``cake``."""
    eta = default_eta(cake) if eta is None else eta
    lam, sigma = diag_Lambda_Sigma(cake)
    kappa = max((float(np.max(np.abs(geometry.curvature_profile(c)))) for c in cake.curves),
                default=0.0)
    return Diagnostics(
        L_eta=diag_L_eta(cake, eta),
        R_eta=diag_R_eta(cake, r_eta),
        Q=diag_Q(cake),
        Lambda=lam,
        Sigma=sigma,
        min_pairwise_delta=min_pairwise_delta(cake),
        lengths=np.array(cake.lengths),
        areas=np.array(cake.areas),
        h2_seminorms=np.array(cake.h2_seminorms),
        max_kappa=kappa,
        h2_bound=h2_sup_bound(cake),
        eta=eta,
        lipschitz_u_est=lipschitz,
    )
