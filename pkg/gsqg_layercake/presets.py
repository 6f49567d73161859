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

"""Named initial data for the command line.

Every builder takes the preset parameters table, the kernel parameters, the
number of levels M and the nodes per curve N, and returns a :class:`Preset`.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np
from loguru import logger

from .exceptions import ProfileError
from .geometry import ClosedCurve
from .kernel import AlphaParam
from .layercake import (
    LayerCake,
    LevelComponent,
    bump_pow_inner,
    bump_pow_outer,
    cone_stack,
    from_radial_profile,
    from_scalar_grid,
)
from .moduli import Modulus, power_modulus
from .storage import read_scalar_grid
from .velocity import LinearField


@dataclass
class Preset:
    """Initial cake plus what the drivers need to know about it.

    Attributes:
        name: Preset name.
        cake: Initial data.
        external_strain: Synthetic linear field for the stepper, if any.
        modulus: Modulus of continuity of θ, ``None`` for discontinuous data.
        params: Parameters with defaults filled in.
    """

    name: str
    cake: LayerCake
    external_strain: Optional[LinearField] = None
    modulus: Optional[Modulus] = None
    params: Dict[str, Any] = field(default_factory=dict)


Builder = Callable[[Mapping[str, Any], AlphaParam, int, int], Preset]


def _float(params: Mapping[str, Any], key: str, default: float) -> float:
    value = params.get(key, default)
    try:
        return float(value)
    except (TypeError, ValueError) as err:
        raise ProfileError(f"preset parameter {key} must be a number, got {value!r}") from err


def _floats(params: Mapping[str, Any], key: str, default: Sequence[float]) -> List[float]:
    value = params.get(key, default)
    if isinstance(value, (int, float)):
        value = [value]
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError) as err:
        raise ProfileError(f"preset parameter {key} must be a list of numbers") from err


def disk(params: Mapping[str, Any], p: AlphaParam, levels: int, nodes: int) -> Preset:
    """θ = μ 1_{|x - c| < r}."""
    radius = _float(params, "radius", 1.0)
    weight = _float(params, "weight", 1.0)
    center = _floats(params, "center", (0.0, 0.0))
    cake = LayerCake([LevelComponent("disk", weight, ClosedCurve.circle(radius, nodes, center))], p)
    return Preset("disk", cake, params={"radius": radius, "weight": weight, "center": center})


def circles(params: Mapping[str, Any], p: AlphaParam, levels: int, nodes: int) -> Preset:
    """Explicit circles: ``radii``, ``weights`` and ``centers`` (flattened x, y pairs)."""
    radii = _floats(params, "radii", (1.0,))
    weights = _floats(params, "weights", [1.0] * len(radii))
    flat = _floats(params, "centers", [0.0] * (2 * len(radii)))
    if not (len(weights) == len(radii) and len(flat) == 2 * len(radii)):
        raise ProfileError(
            f"circles preset needs matching radii ({len(radii)}), weights ({len(weights)}) "
            f"and centers ({len(flat)} values, two per circle)"
        )
    comps = [
        LevelComponent(f"circle{k}", w, ClosedCurve.circle(r, nodes, flat[2 * k: 2 * k + 2]))
        for k, (r, w) in enumerate(zip(radii, weights))
    ]
    return Preset("circles", LayerCake(comps, p),
                  params={"radii": radii, "weights": weights, "centers": flat})


def _bump(name: str, family, params: Mapping[str, Any], p: AlphaParam, levels: int,
          nodes: int) -> Preset:
    beta = _float(params, "beta", 1.0)
    height = _float(params, "height", 1.0)
    cake = from_radial_profile(family(beta), levels, nodes, p, height=height)
    # both families are Hölder of order min(β, 1) in the level variable
    return Preset(name, cake, modulus=power_modulus(min(beta, 1.0)),
                  params={"beta": beta, "height": height})


def bump_inner(params: Mapping[str, Any], p: AlphaParam, levels: int, nodes: int) -> Preset:
    """[1 - |x|^β]_+."""
    return _bump("bump-pow-inner", bump_pow_inner, params, p, levels, nodes)


def bump_outer(params: Mapping[str, Any], p: AlphaParam, levels: int, nodes: int) -> Preset:
    """[1 - |x|]_+^β."""
    return _bump("bump-pow-outer", bump_pow_outer, params, p, levels, nodes)


def cones(params: Mapping[str, Any], p: AlphaParam, levels: int, nodes: int) -> Preset:
    n_max = int(params.get("n_max", 4))
    amplitude = _float(params, "amplitude", 1.0)
    cake = cone_stack(p, n_max, levels, nodes, amplitude)
    return Preset("cone-stack", cake, modulus=power_modulus(2.0 * p.alpha),
                  params={"n_max": n_max, "amplitude": amplitude})


def ellipse(params: Mapping[str, Any], p: AlphaParam, levels: int, nodes: int) -> Preset:
    """Elliptical patch, the conservation benchmark."""
    a = _float(params, "a", 1.5)
    b = _float(params, "b", 0.75)
    angle = _float(params, "angle", 0.0)
    weight = _float(params, "weight", 1.0)
    curve = ClosedCurve.ellipse(a, b, nodes, angle=angle)
    cake = LayerCake([LevelComponent("ellipse", weight, curve)], p)
    return Preset("ellipse", cake, params={"a": a, "b": b, "angle": angle, "weight": weight})


def two_patch_approach(params: Mapping[str, Any], p: AlphaParam, levels: int,
                       nodes: int) -> Preset:
    """Opposite-signed disks ``gap`` apart on the x axis, pushed together by a strain.

    The strain u = rate (-x, y) compresses along the line of centres.
    """
    radius = _float(params, "radius", 1.0)
    gap = _float(params, "gap", 0.5)
    rate = _float(params, "strain", 2.0)
    offset = radius + 0.5 * gap
    comps = [
        LevelComponent("plus", 1.0, ClosedCurve.circle(radius, nodes, (-offset, 0.0))),
        LevelComponent("minus", -1.0, ClosedCurve.circle(radius, nodes, (offset, 0.0))),
    ]
    return Preset("two-patch-approach", LayerCake(comps, p), LinearField.strain(rate),
                  params={"radius": radius, "gap": gap, "strain": rate})


def grid_file(params: Mapping[str, Any], p: AlphaParam, levels: int, nodes: int) -> Preset:
    """External θ samples; ``path`` names the grid file, ``levels`` optionally lists λ.

    Without explicit levels, M midpoint levels are placed in (0, max θ) and M
    in (min θ, 0) when θ takes negative values.
    """
    if "path" not in params:
        raise ProfileError("grid-file preset needs a path parameter")
    samples = read_scalar_grid(params["path"])
    if "levels" in params:
        values = _floats(params, "levels", ())
    else:
        values = []
        top, bottom = float(samples.values.max()), float(samples.values.min())
        mid = (np.arange(1, levels + 1) - 0.5) / levels
        if top > 0.0:
            values.extend(mid * top)
        if bottom < 0.0:
            values.extend(mid * bottom)
    if not values:
        logger.warning(f"grid file {params['path']} has no nonzero samples: theta vanishes")
        return Preset("grid-file", LayerCake([], p), params={"path": str(params["path"]), "levels": []})
    cake = from_scalar_grid(samples, values, p, nodes=nodes)
    return Preset("grid-file", cake, params={"path": str(params["path"]), "levels": list(values)})


PRESETS: Dict[str, Builder] = {
    "disk": disk,
    "circles": circles,
    "bump-pow-inner": bump_inner,
    "bump-pow-outer": bump_outer,
    "cone-stack": cones,
    "ellipse": ellipse,
    "two-patch-approach": two_patch_approach,
    "grid-file": grid_file,
}


def build_preset(
    name: str, params: Mapping[str, Any], p: AlphaParam, levels: int, nodes: int
) -> Preset:
    """Build a named preset.

    Raises:
        ProfileError: For an unknown name or invalid parameters.
    """
    try:
        builder = PRESETS[name]
    except KeyError as err:
        raise ProfileError(f"unknown preset {name!r}; known: {', '.join(sorted(PRESETS))}") from err
    preset = builder(params, p, levels, nodes)
    logger.info("preset {}: {} curve(s), {} node(s)", name, len(preset.cake), preset.cake.node_count)
    return preset
