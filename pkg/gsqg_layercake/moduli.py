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

"""Improper one-dimensional integrals with divergence detection.

Used for the admissibility integral ∫_0^1 ρ(s) / s^{1+2α} ds of a modulus of
continuity and for the continuum L and R functionals of radial bumps.

Integrals ∫_0^1 f(s) ds singular at s = 0 are summed over the dyadic pieces
[2^{-k-1}, 2^{-k}]. Pieces decaying geometrically get the exact geometric
tail; pieces decaying like k^{-q} get the matching algebraic tail. A constant
or growing sequence of pieces, or algebraic decay with q ≤ 1, is divergent.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence

import numpy as np
from loguru import logger
from scipy.integrate import quad

from .exceptions import ProfileError
from .kernel import AlphaParam

MAX_PIECES = 200
# pieces below this fraction of the running sum end the summation
NEGLIGIBLE = 1e-17
GEOMETRIC_DRIFT = 1e-6
ALGEBRAIC_MIN_EXPONENT = 1.02


@dataclass(frozen=True)
class ImproperIntegral:
    """Value of an improper integral, or a divergence flag.

    Attributes:
        finite: False when the integral diverges.
        value: The integral, +inf when divergent.
        pieces: Dyadic partial integrals, nearest-to-singularity last.
        reason: How finiteness was decided.
    """

    finite: bool
    value: float
    pieces: List[float] = field(default_factory=list)
    reason: str = ""


def _piece(f: Callable[[float], float], lo: float, hi: float, points: Sequence[float]) -> float:
    inner = [p for p in points if lo < p < hi]
    value, _ = quad(f, lo, hi, points=inner or None, limit=200, epsabs=0.0, epsrel=1e-12)
    return float(value)


def dyadic_integral(
    f: Callable[[float], float], points: Sequence[float] = (), max_pieces: int = MAX_PIECES
) -> ImproperIntegral:
    """∫_0^1 f(s) ds for nonnegative f that may be singular at 0.

    Args:
        f: Integrand, nonnegative on (0, 1].
        points: Interior points where f is singular or kinked, passed to ``quad``.
        max_pieces: Number of dyadic pieces before the tail is classified.

    Returns:
        The integral with its finiteness decision.
    """
    pieces: List[float] = []
    total = 0.0
    for k in range(max_pieces):
        piece = _piece(f, 2.0 ** (-k - 1), 2.0**-k, points)
        pieces.append(piece)
        total += piece
        if k >= 4 and piece <= NEGLIGIBLE * total:
            return ImproperIntegral(True, total, pieces, "converged")

    last, prev, early = pieces[-1], pieces[-2], pieces[-21]
    ratio = last / prev if prev > 0.0 else np.inf
    early_ratio = pieces[-20] / early if early > 0.0 else np.inf
    if abs(ratio - early_ratio) < GEOMETRIC_DRIFT:
        if ratio >= 1.0 - 1e-9:
            return ImproperIntegral(False, np.inf, pieces, f"geometric pieces, ratio {ratio:.6f}")
        return ImproperIntegral(True, total + last * ratio / (1.0 - ratio), pieces, "geometric tail")

    # algebraic decay in t = -log2 s, piece k centred at t = k + 1/2
    t_last, t_prev = len(pieces) - 0.5, len(pieces) - 1.5
    q = np.log(prev / last) / np.log(t_last / t_prev) if last > 0.0 else np.inf
    if q <= ALGEBRAIC_MIN_EXPONENT:
        return ImproperIntegral(False, np.inf, pieces, f"algebraic pieces, exponent {q:.3f}")
    tail = last * t_last**q * (t_last + 0.5) ** (1.0 - q) / (q - 1.0)
    return ImproperIntegral(True, total + tail, pieces, f"algebraic tail, exponent {q:.3f}")


# ---------------------------------------------------------------- moduli


@dataclass(frozen=True)
class Modulus:
    """A modulus of continuity ρ on [0, 1] with ρ(0) = 0."""

    name: str
    rho: Callable[[np.ndarray], np.ndarray]
    params: Dict[str, float] = field(default_factory=dict)


def power_modulus(beta: float) -> Modulus:
    """ρ(s) = s^β."""
    return Modulus("power", lambda s: np.asarray(s, dtype=float) ** beta, {"beta": beta})


def log_modulus(alpha: float, p: float) -> Modulus:
    """ρ(s) = s^{2α} max{-ln s, 1}^{-p}."""
    return Modulus(
        "log",
        lambda s: np.asarray(s, dtype=float) ** (2.0 * alpha)
        * np.maximum(-np.log(np.asarray(s, dtype=float)), 1.0) ** (-p),
        {"p": p},
    )


def modulus_preset(name: str, p: AlphaParam, /, **params: float) -> Modulus:
    """Build a named modulus: ``power`` (beta) or ``log`` (p)."""
    if name == "power":
        return power_modulus(float(params.get("beta", 1.0)))
    if name == "log":
        return log_modulus(p.alpha, float(params.get("p", 2.0)))
    raise ProfileError(f"unknown modulus preset {name!r}; known: log, power")


def _check_monotone(rho: Modulus) -> None:
    s = np.logspace(-12.0, 0.0, 2000)
    values = np.asarray(rho.rho(s), dtype=float)
    if not np.all(np.isfinite(values)) or np.any(np.diff(values) < -1e-14 * np.abs(values[1:])):
        raise ProfileError(f"modulus {rho.name} {rho.params} is not increasing on (0, 1]")
    if not values[-1] > values[0]:
        raise ProfileError(f"modulus {rho.name} {rho.params} is not increasing on (0, 1]")


def modulus_admissibility(rho: Modulus, p: AlphaParam) -> ImproperIntegral:
    """∫_0^1 ρ(s) / s^{1+2α} ds, or a divergence flag.

    Raises:
        ProfileError: If ρ is not increasing on (0, 1].
    """
    _check_monotone(rho)
    a2 = 2.0 * p.alpha
    result = dyadic_integral(lambda s: float(rho.rho(s)) / s ** (1.0 + a2))
    logger.debug("modulus {} {}: finite={} value={:.6g} ({})",
                 rho.name, rho.params, result.finite, result.value, result.reason)
    return result


# ---------------------------------------------------------------- radial oracles


@dataclass(frozen=True)
class _LevelCircles:
    """Level circles of a radial bump, indexed by the distance u ∈ (0, 1] of the
    level from the critical level where the circles degenerate or pile up."""

    radius: Callable[[float], float]
    power: float

    def gap(self, u0: float, u: float) -> float:
        # both families have |r(u0) - r(u)| = |u0^{1/β} - u^{1/β}|
        return abs(u0**self.power - u**self.power)


def _level_circles(profile: str, beta: float) -> _LevelCircles:
    power = 1.0 / beta
    if profile == "inner":
        # [1 - |x|^β]_+: u = 1 - λ, circles shrink to the origin
        return _LevelCircles(lambda u: u**power, power)
    if profile == "outer":
        # [1 - |x|]_+^β: u = λ, circles pile up at the unit circle
        return _LevelCircles(lambda u: 1.0 - u**power, power)
    raise ProfileError(f"unknown radial profile family {profile!r}; known: inner, outer")


def radial_L_oracle(beta: float, alpha: float, profile: str = "inner") -> ImproperIntegral:
    """Continuum L = ∫ dλ / d(x*, level circle)^{2α} at the critical point x*.

    x* is the origin for ``inner`` ([1 - |x|^β]_+) and a point of the unit circle
    for ``outer`` ([1 - |x|]_+^β); in both cases the distance to the level
    circle at distance u from the critical level is u^{1/β}. Away from x* the
    integrand only has integrable |λ - λ*|^{-2α} singularities, so finiteness
    of L is decided at x*.
    """
    circles = _level_circles(profile, beta)
    a2 = 2.0 * alpha
    return dyadic_integral(lambda u: u ** (-a2 * circles.power))


def _r_at_level(circles: _LevelCircles, u0: float, a2: float) -> float:
    """ℓ(u0)^{1/2} ∫_0^1 du / (ℓ(u)^{1/2} |r(u0) - r(u)|^{2α}), ℓ = 2πr."""
    r0 = circles.radius(u0)

    def integrand(u: float) -> float:
        r = circles.radius(u)
        gap = circles.gap(u0, u)
        if gap == 0.0 or r <= 0.0:
            return 0.0
        return (r0 / r) ** 0.5 / gap**a2

    return dyadic_integral(integrand, points=[u0]).value


def radial_R_oracle(
    beta: float, alpha: float, profile: str = "inner", depth: int = 30
) -> ImproperIntegral:
    """Continuum R = sup_λ R(λ) for the level circles of a radial bump.

    R(λ) is integrated directly over the levels; the supremum is followed
    along u_k = 2^{-k} towards the critical level. Divergence shows up either
    as an infinite R(λ) or as R(λ_k) still growing at the end of the sequence.
    """
    circles = _level_circles(profile, beta)
    a2 = 2.0 * alpha
    values: List[float] = []
    for k in range(1, depth + 1):
        u0 = 2.0**-k
        value = _r_at_level(circles, u0, a2)
        values.append(value)
        if not np.isfinite(value):
            return ImproperIntegral(False, np.inf, values, f"R(λ) infinite at u = {u0:.3g}")
    if values[-1] > values[-2] * (1.0 + 1e-3):
        return ImproperIntegral(False, np.inf, values, "R(λ) unbounded towards the critical level")
    return ImproperIntegral(True, float(max(values)), values, "bounded")
