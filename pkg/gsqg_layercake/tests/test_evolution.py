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

from gsqg_layercake import evolution
from gsqg_layercake.evolution import (
    Event,
    EnvelopeCheck,
    MonitorConfig,
    NullSink,
    SimState,
    StepperConfig,
    detect_events,
    run_until,
    step,
    suggest_dt,
    termination_reason,
    update_monitors,
)
from gsqg_layercake.exceptions import QuadratureError, StepRejected
from gsqg_layercake.geometry import ClosedCurve, h2_seminorm_sq, resample_arclength
from gsqg_layercake.kernel import MollifierParam
from gsqg_layercake.layercake import LayerCake, LevelComponent
from gsqg_layercake.velocity import LinearField, h2_rate

from .test_velocity import disk_speed_oracle

# fixed steps, never shortened by the CFL rule
FIXED = dict(cfl=1e3, resample_every=0)


class RecordingSink:
    def __init__(self):
        self.reports = []
        self.snapshots = []
        self.events = []

    def diagnostics(self, state, report):
        self.reports.append((state.t, report))

    def snapshot(self, state):
        self.snapshots.append(state.t)

    def event(self, event):
        self.events.append(event)


def _disk_state(alpha, nodes=64, **stepper):
    cake = LayerCake([LevelComponent("disk", 1.0, ClosedCurve.circle(1.0, nodes))], alpha)
    return SimState(0.0, cake, stepper=StepperConfig(**stepper))


def _violations(state):
    return [e for e in state.events if e.kind == "envelope_violation"]


class TestConfig:
    @pytest.mark.parametrize("name", ["q_max", "l_max", "min_delta", "max_curvature", "area_tol"])
    def test_threshold_must_be_positive(self, name):
        with pytest.raises(ValueError):
            MonitorConfig(**{name: 0.0})

    def test_slack_below_one(self):
        with pytest.raises(ValueError):
            MonitorConfig(slack=0.9)

    def test_events(self):
        event = Event("collision", 0.5, ("a", "b"), 1e-4)
        assert event.terminating
        assert not Event("envelope_violation", 0.5).terminating
        assert not Event("t_end_reached", 1.0).terminating
        record = event.as_record()
        assert record["labels"] == ["a", "b"]
        assert record["kind"] == "collision"
        assert record["t"] == 0.5

    def test_envelope_check(self):
        assert EnvelopeCheck("x", 1.0, 0.5, 2.0).ok
        assert not EnvelopeCheck("x", 3.0, 0.5, 2.0).ok


class TestStep:
    def test_empty_cake_advances_time(self, alpha):
        state = SimState(0.0, LayerCake([], alpha))
        step(state, 0.25)
        assert state.t == 0.25
        assert state.steps == 1
        assert not state.events

    def test_suggest_dt(self, alpha):
        state = SimState(0.0, LayerCake([], alpha), stepper=StepperConfig(dt=0.5, cfl=0.1))
        assert suggest_dt(state, 1.0) == pytest.approx(0.1)
        assert suggest_dt(state, 0.0) == 0.5
        state.stepper = StepperConfig(cfl=0.1)
        assert suggest_dt(state, 2.0) == pytest.approx(0.05)
        assert suggest_dt(state, 0.0) == 0.01

    def test_rotating_disk_stays_round(self, alpha):
        state = _disk_state(alpha, dt=0.1, **FIXED)
        for _ in range(3):
            step(state, 0.1)
        radii = np.linalg.norm(state.cake.curves[0].nodes, axis=1)
        np.testing.assert_allclose(radii, 1.0, atol=1e-6)
        assert state.t == pytest.approx(0.3)
        assert state.area_drift < 1e-6
        # the disk turns counterclockwise for a positive weight
        assert state.cake.curves[0].nodes[0, 1] > 0.0

    def test_point_symmetry_is_kept(self, alpha):
        n = 48
        comps = [
            LevelComponent("left", 1.0, ClosedCurve.circle(0.5, n, (-1.5, 0.0))),
            LevelComponent("right", 1.0, ClosedCurve.circle(0.5, n, (1.5, 0.0))),
        ]
        state = SimState(0.0, LayerCake(comps, alpha), stepper=StepperConfig(dt=0.05, **FIXED))
        step(state, 0.05)
        left, right = (c.nodes for c in state.cake.curves)
        np.testing.assert_allclose(-left, np.roll(right, -n // 2, axis=0), atol=1e-8)

    def test_rejected_steps_end_in_collision(self, alpha, monkeypatch):
        state = _disk_state(alpha, nodes=32)
        calls = []

        def reject(state, dt, k1):
            calls.append(dt)
            raise StepRejected("forced")

        monkeypatch.setattr(evolution, "_rk4", reject)
        step(state, 0.1, [np.zeros((32, 2))])
        assert len(calls) == evolution.MAX_HALVINGS + 1
        assert calls[-1] == pytest.approx(0.1 / 2**evolution.MAX_HALVINGS)
        assert state.terminated
        assert state.events[-1].kind == "collision"
        assert state.t == 0.0

    def test_resampling_restores_uniform_nodes(self, alpha):
        t = np.linspace(0.0, 2.0 * np.pi, 64, endpoint=False)
        warped = t + 0.6 * np.sin(t)
        curve = ClosedCurve(np.column_stack([np.cos(warped), np.sin(warped)]))
        cake = LayerCake([LevelComponent("disk", 1.0, curve)], alpha)
        state = SimState(0.0, cake, stepper=StepperConfig(dt=0.01, cfl=1e3, resample_every=1))
        step(state, 0.01)
        seg = state.cake.curves[0].segment_lengths
        assert seg.max() / seg.min() < 1.05


class TestMonitors:
    def test_envelopes_at_start(self, alpha):
        state = _disk_state(alpha)
        report = update_monitors(state)
        assert set(state.envelopes) == {
            "lip_integral", "speed_integral", "lip_u", "max_speed", "theta_l1_plus_linf",
            "c_measured", "L_rational", "Q_rational_denominator", "area_drift",
        }
        names = {c.name for c in report.checks}
        assert {"L_eta", "length[disk]", "length3[disk]", "diameter[disk]", "area", "h2_bound"} <= names
        for check in report.checks:
            if check.name != "h2_bound":
                assert check.ok, check
        assert len(state.history) == 1
        assert state.envelopes["lip_u"] > 0.0
        assert state.envelopes["theta_l1_plus_linf"] == pytest.approx(np.pi + 1.0, rel=5e-3)

    def test_violation_is_recorded(self, alpha):
        state = _disk_state(alpha)
        state.cake = state.cake.with_curves([ClosedCurve.circle(1.5, 64)])
        update_monitors(state)
        kinds = {(e.kind, e.labels) for e in state.events}
        assert ("envelope_violation", ("diameter[disk]",)) in kinds
        assert ("envelope_violation", ("area",)) in kinds
        assert not state.terminated

    def test_empty_cake(self, alpha):
        state = SimState(0.0, LayerCake([], alpha))
        report = update_monitors(state)
        assert report.checks == []
        assert state.envelopes["lip_u"] == 0.0
        assert detect_events(state) == []


class TestEvents:
    def test_collision(self, alpha):
        comps = [
            LevelComponent("a", 1.0, ClosedCurve.circle(1.0, 64, (-1.0005, 0.0))),
            LevelComponent("b", 1.0, ClosedCurve.circle(1.0, 64, (1.0005, 0.0))),
        ]
        state = SimState(0.0, LayerCake(comps, alpha), monitor=MonitorConfig(min_delta=1e-2))
        events = detect_events(state)
        collision = [e for e in events if e.kind == "collision"]
        assert len(collision) == 1
        assert collision[0].labels == ("a", "b")
        assert collision[0].value == pytest.approx(1e-3, rel=1e-6)

    def test_no_events_for_a_disk(self, alpha):
        kinds = {e.kind for e in detect_events(_disk_state(alpha))}
        assert not kinds & set(evolution.TERMINATING)

    def test_thresholds(self, alpha):
        state = _disk_state(alpha)
        state.monitor = MonitorConfig(q_max=10.0, max_curvature=0.5, l_max=1e-3)
        kinds = {e.kind for e in detect_events(state)}
        assert {"q_blowup", "curvature", "l_blowup"} <= kinds

    def test_critical_profile_ignores_l(self, alpha):
        state = _disk_state(alpha)
        state.monitor = MonitorConfig(l_max=1e-3, critical=True)
        assert "l_blowup" not in {e.kind for e in detect_events(state)}

    def test_self_intersection(self, alpha, figure_eight):
        cake = LayerCake([LevelComponent("eight", 1.0, figure_eight)], alpha, validate=False)
        state = SimState(0.0, cake)
        events = [e for e in detect_events(state) if e.kind == "self_intersection"]
        assert events and events[0].labels == ("eight",)


class TestRun:
    def test_empty_cake_reaches_end(self, alpha):
        state = run_until(SimState(0.0, LayerCake([], alpha)), 0.05)
        assert state.t == pytest.approx(0.05)
        assert termination_reason(state) == "t_end_reached"
        assert state.events[-1].kind == "t_end_reached"

    def test_sink_receives_output(self, alpha):
        state = _disk_state(alpha, dt=0.1, k_diag=1, k_snap=2, **FIXED)
        sink = RecordingSink()
        run_until(state, 0.3, sink)
        assert state.steps == 3
        assert state.t == pytest.approx(0.3)
        assert len(sink.reports) == 4
        assert sink.snapshots[0] == 0.0
        assert len(sink.snapshots) == 3
        assert sink.events[-1].kind == "t_end_reached"
        assert sink.events == state.events
        assert state.lip_integral == pytest.approx(0.3 * state.last_lipschitz, rel=0.2)
        assert state.speed_integral > 0.0

    def test_backward_time(self, alpha):
        state = _disk_state(alpha, dt=0.1, **FIXED)
        run_until(state, -0.2, NullSink())
        assert state.t == pytest.approx(-0.2)
        assert termination_reason(state) == "t_end_reached"
        assert state.cake.curves[0].nodes[0, 1] < 0.0

    def test_quadrature_failure_is_an_event(self, alpha, monkeypatch):
        def fail(state, dt, k1=None):
            raise QuadratureError("forced", 1e-3, 24)

        monkeypatch.setattr(evolution, "step", fail)
        state = run_until(_disk_state(alpha, nodes=32), 1.0)
        assert termination_reason(state) == "quadrature_failure"
        assert state.events[-1].value == 1e-3

    def test_numerical_failure_is_an_event(self, alpha, monkeypatch):
        def fail(state, dt, k1=None):
            raise FloatingPointError("non-finite node positions")

        monkeypatch.setattr(evolution, "step", fail)
        state = run_until(_disk_state(alpha, nodes=32), 1.0)
        assert termination_reason(state) == "numerical_failure"
        assert "t_end_reached" not in {e.kind for e in state.events}

    @pytest.mark.slow
    def test_time_reversal(self, alpha):
        curve = resample_arclength(ClosedCurve.ellipse(1.5, 0.75, 64), 64)
        cake = LayerCake([LevelComponent("ellipse", 1.0, curve)], alpha)
        state = SimState(0.0, cake, stepper=StepperConfig(dt=0.01, **FIXED))
        run_until(state, 0.5)
        assert termination_reason(state) == "t_end_reached"
        assert not _violations(state)
        run_until(state, 0.0)
        np.testing.assert_allclose(state.cake.curves[0].nodes, curve.nodes, atol=1e-6)

    @pytest.mark.slow
    def test_ellipse_area_is_conserved(self, alpha):
        cake = LayerCake([LevelComponent("ellipse", 1.0, ClosedCurve.ellipse(2.0, 1.0, 256))], alpha)
        state = SimState(0.0, cake, stepper=StepperConfig(dt=1e-3, cfl=1e3, k_diag=100, k_snap=0))
        run_until(state, 0.5)
        assert termination_reason(state) == "t_end_reached"
        assert not _violations(state)
        assert state.area_drift < 1e-5
        assert state.cake.curves[0].spline_area == pytest.approx(2.0 * np.pi, rel=1e-5)

    @pytest.mark.slow
    def test_fourth_order_in_time(self, alpha):
        curve = resample_arclength(ClosedCurve.ellipse(1.5, 0.75, 64), 64)

        def final_nodes(dt):
            cake = LayerCake([LevelComponent("ellipse", 1.0, curve)], alpha)
            state = SimState(0.0, cake, tol=1e-10, stepper=StepperConfig(dt=dt, **FIXED))
            run_until(state, 0.4)
            assert not _violations(state)
            return state.cake.curves[0].nodes

        coarse, medium, fine = (final_nodes(dt) for dt in (0.2, 0.1, 0.05))
        first = np.max(np.linalg.norm(coarse - medium, axis=1))
        second = np.max(np.linalg.norm(medium - fine, axis=1))
        assert second > 0.0
        assert first / second >= 8.0

    @pytest.mark.slow
    def test_h2_rate_matches_finite_difference(self, alpha):
        def state():
            cake = LayerCake([LevelComponent("ellipse", 0.5, ClosedCurve.ellipse(1.5, 0.75, 128))], alpha)
            return SimState(0.0, cake, mollifier=MollifierParam(0.1),
                            external_strain=LinearField.strain(1.0),
                            stepper=StepperConfig(dt=1e-3, **FIXED))

        rate = h2_rate(state().velocity_field(), 0)
        ahead, behind = step(state(), 1e-3), step(state(), -1e-3)
        h2_ahead = h2_seminorm_sq(ahead.cake.curves[0])
        h2_behind = h2_seminorm_sq(behind.cake.curves[0])
        assert rate == pytest.approx((h2_ahead - h2_behind) / 2e-3, rel=0.05)

    @pytest.mark.slow
    def test_disk_rotation_rate(self, alpha):
        state = _disk_state(alpha, nodes=256, dt=0.01, **FIXED)
        start = state.cake.curves[0].nodes
        run_until(state, 1.0)
        assert termination_reason(state) == "t_end_reached"
        assert not _violations(state)
        nodes = state.cake.curves[0].nodes
        assert np.max(np.abs(np.linalg.norm(nodes, axis=1) - 1.0)) < 1e-6
        angle = disk_speed_oracle(alpha, 1.0)
        turn = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        np.testing.assert_allclose(nodes, start @ turn.T, atol=1e-5)
