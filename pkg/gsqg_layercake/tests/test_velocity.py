"""
.. See the NOTICE file distributed with this work for additional information
   regarding copyright ownership.

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
"""

import numpy as np
import pytest
from scipy import integrate

from gsqg_layercake.exceptions import GridResolutionError
from gsqg_layercake.geometry import ClosedCurve, length
from gsqg_layercake.kernel import MollifierParam
from gsqg_layercake.layercake import (
    LayerCake,
    LevelComponent,
    bump_pow_inner,
    diag_L_eta,
    from_radial_profile,
)
from gsqg_layercake.velocity import (
    THREADS_ENV,
    GridSpec,
    LinearField,
    VelocityField,
    d2u_mollified,
    du_along_curve,
    grad_u_mollified,
    h2_rate,
    length_rate,
    lipschitz_estimate,
    max_speed,
    resolve_threads,
    u_boundary,
    u_eps_area,
    velocity_at_nodes,
)


def disk_speed_oracle(p, r):
    """Tangential speed at distance r from the centre of the unit disk patch of weight 1."""

    def integrand(phi):
        return (r**2 + 1.0 - 2.0 * r * np.cos(phi)) ** (-p.alpha) * np.cos(phi)

    value = integrate.quad(integrand, 0.0, np.pi, epsabs=1e-14, epsrel=1e-12, limit=500)[0]
    return p.c_alpha / (2.0 * p.alpha) * 2.0 * value


def difference_jacobian(fn, x, step):
    x = np.asarray(x, dtype=np.float64)
    columns = []
    for j in range(2):
        shift = np.zeros(2)
        shift[j] = step
        columns.append((fn(x + shift) - fn(x - shift)) / (2.0 * step))
    return np.stack(columns, axis=-1)


@pytest.fixture
def disk(alpha):
    return LayerCake([LevelComponent("disk", 1.0, ClosedCurve.circle(1.0, 256))], alpha)


class TestSettings:
    def test_resolve_threads(self, monkeypatch):
        assert resolve_threads(3) == 3
        monkeypatch.setenv(THREADS_ENV, "2")
        assert resolve_threads() == 2
        monkeypatch.setenv(THREADS_ENV, "many")
        assert resolve_threads() >= 1

    def test_linear_field(self):
        strain = LinearField.strain(2.0)
        assert strain(np.array([[1.0, 1.0]])).tolist() == [[-2.0, 2.0]]
        assert np.array_equal(strain.matrix, [[-2.0, 0.0], [0.0, 2.0]])
        shifted = LinearField(b=(1.0, -1.0))
        assert shifted(np.zeros((1, 2))).tolist() == [[1.0, -1.0]]

    def test_invalid_settings(self, disk):
        with pytest.raises(ValueError):
            VelocityField(disk, tol=0.0)
        with pytest.raises(ValueError):
            VelocityField(disk, max_depth=0)


class TestBoundaryVelocity:
    def test_disk_outside(self, disk, alpha):
        u = u_boundary(VelocityField(disk), (2.0, 0.0))
        assert u[0] == pytest.approx(0.0, abs=1e-10)
        assert u[1] == pytest.approx(disk_speed_oracle(alpha, 2.0), rel=1e-4)
        assert u[1] > 0.0

    def test_disk_on_boundary(self, disk, alpha):
        u = u_boundary(VelocityField(disk), (1.0, 0.0))
        assert u[1] == pytest.approx(disk_speed_oracle(alpha, 1.0), rel=1e-5)

    def test_radial_cake_origin(self, alpha):
        cake = from_radial_profile(bump_pow_inner(1.0), 8, 128, alpha)
        assert np.allclose(u_boundary(VelocityField(cake), (0.0, 0.0)), 0.0, atol=1e-10)

    def test_far_field(self, disk, alpha):
        x = np.array([100.0, 0.0])
        u = u_boundary(VelocityField(disk), x)
        scaled = np.linalg.norm(u) * 100.0 ** (1.0 + 2.0 * alpha.alpha)
        assert scaled == pytest.approx(alpha.c_alpha * np.pi, rel=1e-2)

    def test_negative_weight_reverses(self, disk, alpha):
        flipped = LayerCake([LevelComponent("disk", -1.0, disk[0].curve)], alpha)
        a = u_boundary(VelocityField(disk), (2.0, 1.0))
        b = u_boundary(VelocityField(flipped), (2.0, 1.0))
        assert np.allclose(a, -b, rtol=1e-14)

    def test_mollifier_inactive_far_away(self, disk):
        plain = u_boundary(VelocityField(disk), (2.0, 0.5))
        smooth = u_boundary(VelocityField(disk, MollifierParam(0.1)), (2.0, 0.5))
        assert np.allclose(plain, smooth, rtol=1e-8)

    def test_external_only(self, disk):
        vf = VelocityField(disk, external=LinearField(b=(1.0, 0.5)), self_induced=False)
        assert u_boundary(vf, (3.0, 7.0)).tolist() == [1.0, 0.5]

    def test_threads_agree(self, disk):
        targets = np.random.default_rng(1).uniform(-2.0, 2.0, size=(4500, 2))
        serial = VelocityField(disk, threads=1).velocity(targets)
        parallel = VelocityField(disk, threads=4).velocity(targets)
        assert np.allclose(serial, parallel, rtol=1e-12, atol=1e-15)

    def test_empty_cake(self, alpha):
        vf = VelocityField(LayerCake([], alpha))
        assert u_boundary(vf, (0.0, 0.0)).tolist() == [0.0, 0.0]
        assert velocity_at_nodes(vf) == []
        assert max_speed(vf) == 0.0
        assert lipschitz_estimate(vf) == 0.0


class TestAreaForms:
    def test_area_matches_boundary(self, disk):
        vf = VelocityField(disk, MollifierParam(0.2))
        for x in ((2.0, 0.0), (1.5, 0.5)):
            assert np.allclose(u_eps_area(vf, x), u_boundary(vf, x), rtol=1e-2, atol=1e-4)

    def test_grid_resolution(self, disk):
        with pytest.raises(GridResolutionError):
            VelocityField(disk).default_grid()
        vf = VelocityField(disk, MollifierParam(0.2))
        with pytest.raises(GridResolutionError, match="exceeds"):
            u_eps_area(vf, (2.0, 0.0), GridSpec(0.1))

    def test_epsilon_convergence(self, disk):
        x = (1.0, 0.0)
        exact = u_boundary(VelocityField(disk), x)
        errors = [
            np.linalg.norm(u_boundary(VelocityField(disk, MollifierParam(eps)), x) - exact)
            for eps in (0.2, 0.1, 0.05)
        ]
        assert errors[0] > errors[1] > errors[2] > 0.0
        # ε^{1-2α} with α = 1/4
        assert errors[1] / errors[2] == pytest.approx(2.0**0.5, rel=0.1)


class TestDerivatives:
    def test_requires_mollifier(self, disk):
        vf = VelocityField(disk)
        with pytest.raises(GridResolutionError):
            grad_u_mollified(vf, (2.0, 0.0))
        with pytest.raises(GridResolutionError):
            h2_rate(vf, 0)

    def test_gradient_matches_differences(self, disk):
        vf = VelocityField(disk, MollifierParam(0.2))
        for x in ((2.0, 0.0), (0.3, 0.4)):
            fd = difference_jacobian(lambda y: u_boundary(vf, y), x, 1e-4)
            exact = grad_u_mollified(vf, x)
            assert np.linalg.norm(exact - fd) <= 1e-5 * np.linalg.norm(exact)

    def test_incompressible(self, disk):
        vf = VelocityField(disk, MollifierParam(0.1))
        points = np.array([[0.0, 0.0], [0.95, 0.1], [1.0, 0.0], [2.0, -1.0]])
        grads = vf.gradient(points)
        traces = np.trace(grads, axis1=1, axis2=2)
        assert np.all(np.abs(traces) <= 1e-6 * (1.0 + np.linalg.norm(grads, axis=(1, 2))))

    def test_area_difference_form(self, disk):
        vf = VelocityField(disk, MollifierParam(0.2))
        grid = vf.default_grid()
        for x in ((2.0, 0.0), (0.3, 0.2)):
            area = grad_u_mollified(vf, x, grid)
            contour = grad_u_mollified(vf, x)
            assert np.linalg.norm(area - contour) <= 2e-2 * np.linalg.norm(contour)

    def test_hessian_matches_differences(self, disk):
        vf = VelocityField(disk, MollifierParam(0.2))
        x = (2.0, 0.0)
        fd = difference_jacobian(lambda y: grad_u_mollified(vf, y), x, 1e-4)
        exact = vf.hessian(np.array([x]))[0]
        assert np.linalg.norm(exact - fd) <= 1e-5 * np.linalg.norm(exact)
        h1, h2 = np.array([1.0, 0.0]), np.array([0.3, 0.7])
        assert np.allclose(d2u_mollified(vf, x, h1, h2), np.einsum("ijk,j,k->i", exact, h1, h2))

    def test_hessian_area_form(self, disk):
        vf = VelocityField(disk, MollifierParam(0.2))
        h = np.array([0.6, 0.8])
        area = d2u_mollified(vf, (2.0, 0.0), h, h, vf.default_grid())
        contour = d2u_mollified(vf, (2.0, 0.0), h, h)
        assert np.linalg.norm(area - contour) <= 2e-2 * np.linalg.norm(contour)


class TestAlongCurve:
    def test_rotating_disk(self, disk):
        vf = VelocityField(disk)
        deriv = du_along_curve(vf, 0)
        speed = np.linalg.norm(deriv.u, axis=1)
        assert np.all(np.abs(deriv.ds_u_t) < 1e-4 * speed)
        assert deriv.du_n_n is None
        assert length_rate(vf, 0) == pytest.approx(0.0, abs=1e-7)

    def test_rotating_disk_curvature_rate(self, disk):
        vf = VelocityField(disk, MollifierParam(0.2))
        assert h2_rate(vf, 0) == pytest.approx(0.0, abs=1e-4)

    def test_translation(self, disk):
        vf = VelocityField(disk, MollifierParam(0.2), external=LinearField(b=(2.0, -1.0)),
                           self_induced=False)
        deriv = du_along_curve(vf, 0)
        for values in (deriv.ds_u_t, deriv.ds_u_n, deriv.du_n_n, deriv.d2u_tt_n):
            assert np.allclose(values, 0.0, atol=1e-12)
        assert length_rate(vf, 0) == pytest.approx(0.0, abs=1e-12)

    def test_length_rate_rules(self, alpha):
        cake = LayerCake([LevelComponent("e", 1.0, ClosedCurve.ellipse(1.5, 0.75, 256))], alpha)
        vf = VelocityField(cake)
        u = velocity_at_nodes(vf)[0]
        nodes = cake[0].curve.nodes
        step = 1e-6
        fd = (length(ClosedCurve(nodes + step * u)) - length(ClosedCurve(nodes - step * u))) / (2 * step)
        segment = length_rate(vf, 0, velocities=u)
        assert segment == pytest.approx(fd, rel=1e-6)
        assert length_rate(vf, 0, "spline", u) == pytest.approx(segment, rel=1e-2, abs=1e-3)
        with pytest.raises(ValueError):
            length_rate(vf, 0, "trapezoid", u)


class TestNodeSummaries:
    def test_velocity_at_nodes(self, nested_cake):
        vf = VelocityField(nested_cake)
        velocities = velocity_at_nodes(vf)
        assert [v.shape for v in velocities] == [(128, 2), (128, 2)]
        with pytest.raises(ValueError):
            velocity_at_nodes(vf, "spectral")
        with pytest.raises(GridResolutionError):
            velocity_at_nodes(vf, "area")

    def test_area_source(self, alpha):
        cake = LayerCake([LevelComponent("disk", 1.0, ClosedCurve.circle(1.0, 64))], alpha)
        vf = VelocityField(cake, MollifierParam(0.4))
        area = velocity_at_nodes(vf, "area")[0]
        contour = velocity_at_nodes(vf)[0]
        assert np.allclose(area, contour, rtol=5e-2, atol=5e-3)

    def test_strain_lipschitz(self, disk):
        vf = VelocityField(disk, external=LinearField.strain(2.0), self_induced=False)
        lip = lipschitz_estimate(vf)
        assert 1.8 <= lip <= 2.0 + 1e-12
        assert max_speed(vf) == pytest.approx(2.0, rel=1e-12)

    def test_lipschitz_seeded(self, disk):
        vf = VelocityField(disk)
        velocities = velocity_at_nodes(vf)
        assert lipschitz_estimate(vf, velocities, seed=4) == lipschitz_estimate(vf, velocities, seed=4)


class TestRefinement:
    def test_second_derivative_scales_inversely_with_epsilon(self, disk):
        x = disk[0].curve.nodes[0]
        inward = -x / np.linalg.norm(x)
        scaled = []
        for eps in (0.2, 0.1, 0.05):
            vf = VelocityField(disk, MollifierParam(eps))
            size = np.linalg.norm(d2u_mollified(vf, x, inward, inward))
            scaled.append(size / diag_L_eta(disk, eps))
        growth = np.array(scaled[1:]) / np.array(scaled[:-1])
        assert np.all((1.6 <= growth) & (growth <= 2.4))

    @pytest.mark.slow
    def test_lipschitz_follows_L_eta(self, alpha):
        ratios = []
        for levels, nodes in ((4, 32), (8, 64), (16, 128)):
            cake = from_radial_profile(bump_pow_inner(1.0), levels, nodes, alpha)
            lip = lipschitz_estimate(VelocityField(cake))
            ratios.append(lip / diag_L_eta(cake))
        assert max(ratios) < 2.0 * min(ratios)
