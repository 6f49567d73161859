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

"""The g-SQG kernel and its mollified family.

K(x) = -c_α / (2α |x|^{2α}) and K_ε(x) = χ(|x|/ε) K(x). The velocity kernel
is ∇^⊥K = J∇K with J the quarter turn [[0, -1], [1, 0]].

Every ``eval_*`` function accepts a single point or an array of shape
(..., 2) and returns the value per point, so the quadrature layer can pass
(targets x panels x nodes) displacement blocks in one call.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit, gamma

from .exceptions import KernelSingularityError

FloatArray = NDArray[np.float64]

QUARTER_TURN = np.array([[0.0, -1.0], [1.0, 0.0]])
QUARTER_TURN.setflags(write=False)

# the cutoff's derivatives are below double precision outside this band
_GLUE_BAND = (0.005, 0.995)


def default_c_alpha(alpha: float) -> float:
    """Riesz normalisation 2Γ(1+α) / (4^{1-α} π Γ(1-α)).

    With it, u = ∇^⊥K * θ equals -∇^⊥(-Δ)^{-1+α}θ. It tends to 1/(2π) as α → 0.
    """
    return float(2.0 * gamma(1.0 + alpha) / (4.0 ** (1.0 - alpha) * np.pi * gamma(1.0 - alpha)))


@dataclass(frozen=True)
class AlphaParam:
    """Kernel exponent α in (0, 1/2) and normalisation c_α > 0.

    ``c_alpha`` defaults to :func:`default_c_alpha`.
    """

    alpha: float
    c_alpha: Optional[float] = field(default=None)

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 0.5:
            raise ValueError(f"alpha must lie in (0, 1/2), got {self.alpha}")
        if self.c_alpha is None:
            object.__setattr__(self, "c_alpha", default_c_alpha(self.alpha))
        elif not (np.isfinite(self.c_alpha) and self.c_alpha > 0.0):
            raise ValueError(f"c_alpha must be positive, got {self.c_alpha}")


@dataclass(frozen=True)
class MollifierParam:
    """Mollification radius ε ≥ 0; ε = 0 means the plain kernel."""

    epsilon: float = 0.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.epsilon) and self.epsilon >= 0.0):
            raise ValueError(f"epsilon must be a non-negative number, got {self.epsilon}")

    @property
    def active(self) -> bool:
        """True when the kernel is mollified."""
        return self.epsilon > 0.0


def cutoff(s, order: int = 0) -> Tuple[FloatArray, ...]:
    """The cutoff χ and its first ``order`` derivatives, for s ≥ 0.

    χ(s) = 0 on [0, 1/2], 1 on [1, ∞), and on the glue interval the logistic of
    φ(u) = 1/(1-u) - 1/u with u = 2s - 1, which is the exp(-1/u) smoothstep.

    Args:
        s: Non-negative radii in units of ε.
        order: Highest derivative wanted, 0 to 3.

    Returns:
        Tuple (χ, χ', ..., χ^(order)) of arrays shaped like ``s``.
    """
    s = np.asarray(s, dtype=np.float64)
    u = 2.0 * s - 1.0
    inside = (u > 0.0) & (u < 1.0)
    uc = np.clip(u, 1e-3, 1.0 - 1e-3)
    phi = 1.0 / (1.0 - uc) - 1.0 / uc
    sig = expit(phi)
    chi = np.where(u >= 1.0, 1.0, np.where(inside, sig, 0.0))
    out = [chi]
    if order == 0:
        return tuple(out)

    band = (u > _GLUE_BAND[0]) & (u < _GLUE_BAND[1])
    ub = np.clip(u, *_GLUE_BAND)
    d1 = 1.0 / (1.0 - ub) ** 2 + 1.0 / ub**2
    d2 = 2.0 / (1.0 - ub) ** 3 - 2.0 / ub**3
    d3 = 6.0 / (1.0 - ub) ** 4 + 6.0 / ub**4
    sig = expit(1.0 / (1.0 - ub) - 1.0 / ub)
    s1 = sig * (1.0 - sig)
    s2 = s1 * (1.0 - 2.0 * sig)
    s3 = s1 * (1.0 - 6.0 * sig + 6.0 * sig**2)
    derivatives = (
        2.0 * s1 * d1,
        4.0 * (s2 * d1**2 + s1 * d2),
        8.0 * (s3 * d1**3 + 3.0 * s2 * d1 * d2 + s1 * d3),
    )
    for k in range(order):
        out.append(np.where(band, derivatives[k], 0.0))
    return tuple(out)


def _radius(x) -> Tuple[FloatArray, FloatArray]:
    x = np.asarray(x, dtype=np.float64)
    return x, np.sqrt(x[..., 0] ** 2 + x[..., 1] ** 2)


def _radial(r: FloatArray, p: AlphaParam, m: MollifierParam, order: int) -> Tuple[FloatArray, ...]:
    """F = χ(r/ε)k(r) and its radial derivatives up to ``order``.

    Raises:
        KernelSingularityError: If r = 0 somewhere and ε = 0.
    """
    a2 = 2.0 * p.alpha
    c = p.c_alpha
    if not m.active and np.any(r == 0.0):
        raise KernelSingularityError("kernel evaluated at x = 0 without mollification")
    rs = np.where(r > 0.0, r, 1.0)
    k = (
        -c / a2 * rs**-a2,
        c * rs ** (-1.0 - a2),
        -c * (1.0 + a2) * rs ** (-2.0 - a2),
        c * (1.0 + a2) * (2.0 + a2) * rs ** (-3.0 - a2),
    )
    if not m.active:
        return k[: order + 1]

    eps = m.epsilon
    chi = cutoff(r / eps, order)
    out = [chi[0] * k[0]]
    if order >= 1:
        out.append(chi[1] * k[0] / eps + chi[0] * k[1])
    if order >= 2:
        out.append(chi[2] * k[0] / eps**2 + 2.0 * chi[1] * k[1] / eps + chi[0] * k[2])
    if order >= 3:
        out.append(
            chi[3] * k[0] / eps**3
            + 3.0 * chi[2] * k[1] / eps**2
            + 3.0 * chi[1] * k[2] / eps
            + chi[0] * k[3]
        )
    dead = r <= 0.5 * eps
    return tuple(np.where(dead, 0.0, f) for f in out)


def _unit(x: FloatArray, r: FloatArray) -> FloatArray:
    return x / np.where(r > 0.0, r, 1.0)[..., None]


def eval_K(x, p: AlphaParam, m: MollifierParam = MollifierParam()) -> FloatArray:
    """K_ε(x) = χ(|x|/ε)·(-c_α / (2α|x|^{2α})).

    Raises:
        KernelSingularityError: If x = 0 and ε = 0.
    """
    _, r = _radius(x)
    return _radial(r, p, m, 0)[0]


def eval_grad_K(x, p: AlphaParam, m: MollifierParam = MollifierParam()) -> FloatArray:
    """∇K_ε(x) = F'(r) x/r."""
    x, r = _radius(x)
    _, f1 = _radial(r, p, m, 1)
    return f1[..., None] * _unit(x, r)


def eval_gradperp_K(x, p: AlphaParam, m: MollifierParam = MollifierParam()) -> FloatArray:
    """∇^⊥K_ε(x); for ε = 0 this is c_α x^⊥ / |x|^{2+2α}."""
    g = eval_grad_K(x, p, m)
    return np.stack([-g[..., 1], g[..., 0]], axis=-1)


def eval_hessian_K(x, p: AlphaParam, m: MollifierParam = MollifierParam()) -> FloatArray:
    """D²K_ε(x) = F'' x̂x̂ᵀ + (F'/r)(I - x̂x̂ᵀ)."""
    x, r = _radius(x)
    _, f1, f2 = _radial(r, p, m, 2)
    xh = _unit(x, r)
    outer = xh[..., :, None] * xh[..., None, :]
    rs = np.where(r > 0.0, r, 1.0)
    return f2[..., None, None] * outer + (f1 / rs)[..., None, None] * (np.eye(2) - outer)


def eval_third_K(x, p: AlphaParam, m: MollifierParam = MollifierParam()) -> FloatArray:
    """D³K_ε(x) as an array of shape (..., 2, 2, 2)."""
    x, r = _radius(x)
    _, f1, f2, f3 = _radial(r, p, m, 3)
    rs = np.where(r > 0.0, r, 1.0)
    xh = _unit(x, r)
    a = f3 - 3.0 * f2 / rs + 3.0 * f1 / rs**2
    b = f2 / rs - f1 / rs**2
    eye = np.eye(2)
    triple = xh[..., :, None, None] * xh[..., None, :, None] * xh[..., None, None, :]
    sym = (
        eye[:, :, None] * xh[..., None, None, :]
        + eye[:, None, :] * xh[..., None, :, None]
        + eye[None, :, :] * xh[..., :, None, None]
    )
    return a[..., None, None, None] * triple + b[..., None, None, None] * sym


def eval_D_gradperp_K(x, p: AlphaParam, m: MollifierParam = MollifierParam()) -> FloatArray:
    """D(∇^⊥K_ε)(x) = J·D²K_ε(x); trace-free."""
    return np.einsum("im,...mj->...ij", QUARTER_TURN, eval_hessian_K(x, p, m))


def eval_D2_gradperp_K(x, p: AlphaParam, m: MollifierParam = MollifierParam()) -> FloatArray:
    """D²(∇^⊥K_ε)(x) with entry [i, j, k] = ∂_j∂_k (∇^⊥K_ε)_i."""
    return np.einsum("im,...mjk->...ijk", QUARTER_TURN, eval_third_K(x, p, m))


_DERIVATIVES = {1: eval_grad_K, 2: eval_hessian_K, 3: eval_third_K}


def kernel_derivative_bound(
    p: AlphaParam, m: MollifierParam, n: int, radii: Optional[Sequence[float]] = None
) -> float:
    """Measured C_{α,n} = sup_r |D^n K_ε(r, 0)|·max{r, ε}^{n+2α}.

    The kernel is radial, so sampling one ray covers every direction.

    Args:
        p: Kernel parameters.
        m: Mollifier.
        n: Derivative order, 1 to 3.
        radii: Sample radii; defaults to 2001 log-spaced values in [1e-3, 1e3].

    Returns:
        The largest scaled Frobenius norm over the sample.
    """
    if n not in _DERIVATIVES:
        raise ValueError(f"derivative order must be 1, 2 or 3, got {n}")
    if radii is None:
        radii = np.logspace(-3.0, 3.0, 2001)
    radii = np.asarray(radii, dtype=np.float64)
    points = np.column_stack([radii, np.zeros_like(radii)])
    values = _DERIVATIVES[n](points, p, m)
    norms = np.sqrt(np.sum(values.reshape(radii.size, -1) ** 2, axis=1))
    return float(np.max(norms * np.maximum(radii, m.epsilon) ** (n + 2.0 * p.alpha)))
