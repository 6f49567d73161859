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

"""Time integration of a layer cake under its own velocity.

Nodes move with classical RK4. A step whose result has a self-intersecting
curve or two crossing curves is retried with half the time step, at most
eight times; after that the run stops with a ``collision`` event. Monitors
compare the measured functionals with exponential envelopes built from the
measured Lipschitz constant of u, and event detectors stop the run when a
blow-up criterion trips.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from loguru import logger
from numpy.typing import NDArray

from . import geometry
from .exceptions import GeometryError, KernelSingularityError, QuadratureError, StepRejected
from .geometry import ClosedCurve
from .kernel import MollifierParam
from .layercake import Diagnostics, LayerCake, compute_diagnostics, default_eta, theta_norms
from .velocity import LinearField, VelocityField, lipschitz_estimate, max_speed, velocity_at_nodes

FloatArray = NDArray[np.float64]

MAX_HALVINGS = 8
TERMINATING = ("collision", "self_intersection", "q_blowup", "l_blowup", "curvature",
               "quadrature_failure", "numerical_failure")


@dataclass
class MonitorConfig:
    """Event thresholds and envelope slack.

    Attributes:
        q_max: Q above which the run stops.
        l_max: L^η above which the run stops (ignored in the critical profile).
        min_delta: Curve-to-curve distance below which the run stops.
        max_curvature: Largest admissible |κ|.
        slack: Multiplicative slack of every envelope check.
        area_tol: Relative area change tolerated before an envelope violation.
        critical: Monitor profile for α ≤ 1/6, where only Q, collision and
            curvature events terminate.
    """

    q_max: float = 1e4
    l_max: float = 1e6
    min_delta: float = 1e-3
    max_curvature: float = 1e3
    slack: float = 1.2
    area_tol: float = 1e-3
    critical: bool = False

    def __post_init__(self) -> None:
        for name in ("q_max", "l_max", "min_delta", "max_curvature", "area_tol"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"monitor threshold {name} must be positive")
        if not self.slack >= 1.0:
            raise ValueError(f"slack must be >= 1, got {self.slack}")


@dataclass
class StepperConfig:
    """Time-step control.

    Attributes:
        dt: Fixed step; ``None`` selects cfl / Lip(u) every step.
        cfl: Courant factor of the automatic step.
        resample_every: Unconditional resampling cadence in steps, 0 to disable.
        source: ``"boundary"`` or ``"area"`` velocity.
        grid_h: Area grid spacing, ε/4 when ``None``.
        k_diag: Monitor cadence in steps.
        k_snap: Snapshot cadence in steps, 0 to disable.
    """

    dt: Optional[float] = None
    cfl: float = 0.1
    resample_every: int = 50
    source: str = "boundary"
    grid_h: Optional[float] = None
    k_diag: int = 10
    k_snap: int = 100


@dataclass(frozen=True)
class Event:
    """A detected event; ``labels`` name the curves involved."""

    kind: str
    t: float
    labels: Tuple[str, ...] = ()
    value: float = float("nan")
    detail: str = ""

    @property
    def terminating(self) -> bool:
        return self.kind in TERMINATING

    def as_record(self) -> Dict[str, object]:
        """JSON-safe record; a value that is not finite becomes ``None``."""
        value = float(self.value) if np.isfinite(self.value) else None
        return {"kind": self.kind, "t": float(self.t), "labels": list(self.labels),
                "value": value, "detail": self.detail}


@dataclass(frozen=True)
class EnvelopeCheck:
    """One envelope comparison: ``lower <= measured <= upper`` up to the slack."""

    name: str
    measured: float
    lower: float
    upper: float

    @property
    def ok(self) -> bool:
        return bool(self.lower <= self.measured <= self.upper)


@dataclass
class MonitorReport:
    diagnostics: Diagnostics
    checks: List[EnvelopeCheck]

    @property
    def violations(self) -> List[EnvelopeCheck]:
        return [c for c in self.checks if not c.ok]


def spline_areas(cake: LayerCake) -> FloatArray:
    """Area enclosed by the spline interpolant of every curve."""
    return np.array([c.spline_area for c in cake.curves], dtype=np.float64)


@dataclass
class SimState:
    """Simulation state owned by the stepper.

    Attributes:
        t: Current time.
        cake: Current curves.
        mollifier: Kernel mollification.
        tol: Quadrature tolerance.
        max_depth: Quadrature refinement depth.
        threads: Worker threads for velocity evaluation.
        external_strain: Synthetic linear field added to the induced velocity.
        eta: Smoothing length of L^η, fixed at the initial cake's default.
        seed: Seed of the random node pairs in the Lipschitz estimate.
        monitor: Event thresholds.
        stepper: Time-step control.
        history: Time-stamped diagnostics.
        envelopes: Latest envelope values and reported estimates.
        events: Detected events.
    """

    t: float
    cake: LayerCake
    mollifier: MollifierParam = field(default_factory=MollifierParam)
    tol: float = 1e-8
    max_depth: int = 24
    threads: Optional[int] = None
    external_strain: Optional[LinearField] = None
    eta: Optional[float] = None
    seed: int = 0
    monitor: MonitorConfig = field(default_factory=MonitorConfig)
    stepper: StepperConfig = field(default_factory=StepperConfig)
    history: List[Tuple[float, Diagnostics]] = field(default_factory=list)
    envelopes: Dict[str, float] = field(default_factory=dict)
    events: List[Event] = field(default_factory=list)
    steps: int = 0
    lip_integral: float = 0.0
    speed_integral: float = 0.0
    area_drift: float = 0.0
    last_lipschitz: float = float("nan")
    terminated: bool = False
    initial: Optional[Diagnostics] = None
    initial_diameters: Optional[FloatArray] = None
    initial_areas: Optional[FloatArray] = None

    def __post_init__(self) -> None:
        if self.eta is None:
            self.eta = default_eta(self.cake)
        if self.initial is None:
            self.initial = compute_diagnostics(self.cake, self.eta)
            self.initial_diameters = np.array([geometry.diameter(c) for c in self.cake.curves])
            self.initial_areas = spline_areas(self.cake)

    def velocity_field(self, cake: Optional[LayerCake] = None) -> VelocityField:
        return VelocityField(
            cake if cake is not None else self.cake,
            self.mollifier, self.tol, self.max_depth, self.threads, self.external_strain,
        )

    def record(self, event: Event) -> None:
        self.events.append(event)
        if event.terminating:
            self.terminated = True
            logger.error("t={:.6g}: {} event {} value={:.6g} {}", event.t, event.kind,
                         list(event.labels), event.value, event.detail)
        else:
            logger.warning("t={:.6g}: {} {} {}", event.t, event.kind, list(event.labels), event.detail)


class OutputSink(Protocol):
    """Receiver of run output."""

    def diagnostics(self, state: SimState, report: MonitorReport) -> None: ...

    def snapshot(self, state: SimState) -> None: ...

    def event(self, event: Event) -> None: ...


class NullSink:
    """Discards all output."""

    def diagnostics(self, state: SimState, report: MonitorReport) -> None:
        pass

    def snapshot(self, state: SimState) -> None:
        pass

    def event(self, event: Event) -> None:
        pass


# ---------------------------------------------------------------- stepping


def _stage_cake(cake: LayerCake, positions: Sequence[FloatArray]) -> LayerCake:
    for pos in positions:
        if not np.all(np.isfinite(pos)):
            raise FloatingPointError("non-finite node positions")
    try:
        return cake.with_curves([ClosedCurve(p) for p in positions], validate=False)
    except GeometryError as err:
        raise StepRejected(f"degenerate stage geometry: {err}") from err


def _stage_velocity(state: SimState, cake: LayerCake) -> List[FloatArray]:
    cfg = state.stepper
    return velocity_at_nodes(state.velocity_field(cake), cfg.source, cfg.grid_h)


def _check_topology(cake: LayerCake) -> None:
    curves = cake.curves
    for comp in cake:
        simple, pair = geometry.is_simple(comp.curve)
        if not simple:
            raise StepRejected(f"curve {comp.label} self-intersects at segments {pair}")
    for j in range(len(curves)):
        for k in range(j + 1, len(curves)):
            if geometry.curves_cross(curves[j], curves[k]):
                raise StepRejected(f"curves {cake[j].label} and {cake[k].label} cross")


def _rk4(state: SimState, dt: float, k1: List[FloatArray]) -> LayerCake:
    z0 = [c.nodes for c in state.cake.curves]
    stage = _stage_cake(state.cake, [z + 0.5 * dt * k for z, k in zip(z0, k1)])
    k2 = _stage_velocity(state, stage)
    stage = _stage_cake(state.cake, [z + 0.5 * dt * k for z, k in zip(z0, k2)])
    k3 = _stage_velocity(state, stage)
    stage = _stage_cake(state.cake, [z + dt * k for z, k in zip(z0, k3)])
    k4 = _stage_velocity(state, stage)
    new = [
        z + dt / 6.0 * (a + 2.0 * b + 2.0 * c + d) for z, a, b, c, d in zip(z0, k1, k2, k3, k4)
    ]
    result = _stage_cake(state.cake, new)
    _check_topology(result)
    return result


def step(state: SimState, dt: float, k1: Optional[List[FloatArray]] = None) -> SimState:
    """Advance all nodes by one RK4 step of size ``dt`` (negative runs backwards).

    Rejected steps are retried with dt halved up to eight times, after which a
    ``collision`` event ends the run. Accepted steps resample curves that are no
    longer quasi-uniform, and every ``resample_every`` steps.

    Args:
        state: State, updated in place.
        dt: Time step.
        k1: Node velocities of the current configuration, when already known.

    Returns:
        The updated state.
    """
    if not len(state.cake):
        state.t += dt
        state.steps += 1
        return state

    if k1 is None:
        k1 = _stage_velocity(state, state.cake)
    trial = dt
    for attempt in range(MAX_HALVINGS + 1):
        try:
            new_cake = _rk4(state, trial, k1)
            break
        except StepRejected as err:
            if attempt == MAX_HALVINGS:
                state.record(Event("collision", state.t, tuple(state.cake.labels), trial, str(err)))
                return state
            logger.warning("t={:.6g}: step {:.3g} rejected ({}), halving", state.t, trial, err)
            trial *= 0.5

    state.steps += 1
    state.t += trial
    every = state.stepper.resample_every
    curves = new_cake.curves
    resampled = []
    for index, curve in enumerate(curves):
        if not geometry.is_quasi_uniform(curve) or (every and state.steps % every == 0):
            curves[index] = geometry.resample_arclength(curve, len(curve))
            resampled.append(new_cake[index].label)
    if resampled:
        logger.debug("t={:.6g}: resampled {}", state.t, resampled)
        new_cake = new_cake.with_curves(curves, validate=False)
    state.cake = new_cake

    areas0 = state.initial_areas
    state.area_drift = float(np.max(np.abs(spline_areas(new_cake) - areas0) / np.abs(areas0)))
    return state


def suggest_dt(state: SimState, lipschitz: float) -> float:
    """min(configured dt, cfl / Lip(u)); the configured dt alone when Lip(u) = 0."""
    cfg = state.stepper
    auto = cfg.cfl / lipschitz if lipschitz > 0.0 else np.inf
    if cfg.dt is not None:
        return min(cfg.dt, auto)
    if not np.isfinite(auto):
        return 0.01
    return auto


# ---------------------------------------------------------------- monitors


def update_monitors(
    state: SimState, velocities: Optional[List[FloatArray]] = None
) -> MonitorReport:
    """Diagnostics plus the measured-Lipschitz envelope checks.

    With Λ = ∫_0^t Lip(u) dτ accumulated by the driver the checks are:
    exp(-Λ) L^η(0) ≤ L^η(t) ≤ exp(Λ) L^η(0); the same for each length and, in
    the looser form exp(±3Λ), again; diam(t) ≤ diam(0) + 2 ∫ sup|u|; relative
    area change within ``area_tol``; max ‖z‖²_{Ḣ²} ≤ Q / (2 √π Σ^{1/2}). Every
    bound is widened by the configured slack. Violations are recorded as
    non-terminating ``envelope_violation`` events.
    """
    vf = state.velocity_field()
    if velocities is None:
        velocities = velocity_at_nodes(vf, state.stepper.source, state.stepper.grid_h)
    lip = lipschitz_estimate(vf, velocities, seed=state.seed)
    speed = max_speed(vf, velocities)
    diag = compute_diagnostics(state.cake, state.eta, lipschitz=lip)
    state.history.append((state.t, diag))

    slack = state.monitor.slack
    lam = state.lip_integral
    init = state.initial
    grow, shrink = np.exp(lam) * slack, np.exp(-lam) / slack
    checks = []
    if len(state.cake):
        checks.append(EnvelopeCheck("L_eta", diag.L_eta, shrink * init.L_eta, grow * init.L_eta))
        for label, ell, ell0 in zip(state.cake.labels, diag.lengths, init.lengths):
            checks.append(EnvelopeCheck(f"length[{label}]", ell, shrink * ell0, grow * ell0))
            checks.append(EnvelopeCheck(
                f"length3[{label}]", ell,
                np.exp(-3.0 * lam) / slack * ell0, np.exp(3.0 * lam) * slack * ell0,
            ))
        diameters = np.array([geometry.diameter(c) for c in state.cake.curves])
        for label, d, d0 in zip(state.cake.labels, diameters, state.initial_diameters):
            checks.append(EnvelopeCheck(f"diameter[{label}]", d, 0.0,
                                        slack * (d0 + 2.0 * state.speed_integral)))
        rel = np.abs(spline_areas(state.cake) - state.initial_areas) / np.abs(state.initial_areas)
        checks.append(EnvelopeCheck("area", float(rel.max()), 0.0, slack * state.monitor.area_tol))
        checks.append(EnvelopeCheck("h2_bound", diag.h2_max, 0.0, slack * diag.h2_bound))

    # sup|u| is bounded by a multiple of this in the continuum
    l1, linf = theta_norms(state.cake)

    # constant-free rational estimates, reported with the measured ratio Lip / L^η
    c_meas = lip / diag.L_eta if diag.L_eta > 0.0 else 0.0
    denom_l = 1.0 - c_meas * init.L_eta * abs(state.t)
    denom_q = 1.0 - c_meas * (init.L_eta + init.R_eta) * init.Q * abs(state.t)
    state.envelopes = {
        "lip_integral": lam,
        "speed_integral": state.speed_integral,
        "lip_u": lip,
        "max_speed": speed,
        "theta_l1_plus_linf": l1 + linf,
        "c_measured": c_meas,
        "L_rational": init.L_eta / denom_l if denom_l > 0.0 else float("inf"),
        "Q_rational_denominator": denom_q,
        "area_drift": state.area_drift,
    }
    report = MonitorReport(diag, checks)
    for check in report.violations:
        state.record(Event(
            "envelope_violation", state.t, (check.name,), check.measured,
            f"outside [{check.lower:.6g}, {check.upper:.6g}]",
        ))
    return report


def detect_events(state: SimState, diagnostics: Optional[Diagnostics] = None) -> List[Event]:
    """Collision, self-intersection, Q, L^η and curvature detectors.

    Each event carries its kind, time, offending labels and value. The L^η
    detector is off in the critical monitor profile.
    """
    cake = state.cake
    if not len(cake):
        return []
    diag = diagnostics if diagnostics is not None else compute_diagnostics(cake, state.eta)
    cfg = state.monitor
    events: List[Event] = []
    labels = cake.labels

    if len(cake) > 1:
        dist = cake.pairwise_distances
        j, k = np.unravel_index(np.argmin(dist), dist.shape)
        if dist[j, k] < cfg.min_delta:
            events.append(Event("collision", state.t, (labels[j], labels[k]), float(dist[j, k])))
    for comp in cake:
        simple, pair = geometry.is_simple(comp.curve)
        if not simple:
            events.append(Event("self_intersection", state.t, (comp.label,), float("nan"),
                                f"segments {pair}"))
    q_each = diag.lengths * diag.h2_seminorms
    if diag.Q > cfg.q_max:
        events.append(Event("q_blowup", state.t, (labels[int(np.argmax(q_each))],), diag.Q))
    if diag.L_eta > cfg.l_max and not cfg.critical:
        events.append(Event("l_blowup", state.t, (), diag.L_eta))
    for comp in cake:
        kappa = float(np.max(np.abs(geometry.curvature_profile(comp.curve))))
        if kappa > cfg.max_curvature:
            events.append(Event("curvature", state.t, (comp.label,), kappa))
    if diag.h2_max > cfg.slack * diag.h2_bound:
        events.append(Event("h2_bound_violation", state.t, (), diag.h2_max,
                            f"bound {diag.h2_bound:.6g}"))
    return events


# ---------------------------------------------------------------- driver


def run_until(state: SimState, t_end: float, output_sink: Optional[OutputSink] = None) -> SimState:
    """Integrate until ``t_end`` or a terminating event.

    Monitors and event detectors run every ``k_diag`` steps and at the end;
    snapshots are written every ``k_snap`` steps. Quadrature and numerical
    failures are recorded as terminating events rather than raised.
    """
    sink = output_sink if output_sink is not None else NullSink()
    forward = t_end >= state.t
    cfg = state.stepper
    flushed = len(state.events)
    logger.info("running from t={:.6g} to t={:.6g} with {} curve(s)", state.t, t_end, len(state.cake))
    sink.snapshot(state)

    def flush() -> None:
        nonlocal flushed
        for event in state.events[flushed:]:
            sink.event(event)
        flushed = len(state.events)

    def monitor(velocities: Optional[List[FloatArray]]) -> None:
        report = update_monitors(state, velocities)
        sink.diagnostics(state, report)
        for event in detect_events(state, report.diagnostics):
            state.record(event)
        flush()

    velocities: List[FloatArray] = []
    try:
        velocities = _stage_velocity(state, state.cake) if len(state.cake) else []
        monitor(velocities or None)
        while not state.terminated and abs(t_end - state.t) > 1e-12 * max(1.0, abs(t_end)):
            lip = lipschitz_estimate(state.velocity_field(), velocities, seed=state.seed) if velocities else 0.0
            state.last_lipschitz = lip
            dt = min(suggest_dt(state, lip), abs(t_end - state.t))
            t_before = state.t
            step(state, dt if forward else -dt, velocities or None)
            if state.terminated:
                break
            taken = abs(state.t - t_before)
            state.lip_integral += lip * taken
            velocities = _stage_velocity(state, state.cake) if len(state.cake) else []
            speed = max_speed(state.velocity_field(), velocities) if velocities else 0.0
            state.speed_integral += speed * taken
            if state.steps % cfg.k_diag == 0:
                monitor(velocities or None)
            if cfg.k_snap and state.steps % cfg.k_snap == 0:
                sink.snapshot(state)
        if not state.terminated:
            if state.steps % cfg.k_diag != 0:
                monitor(velocities or None)
            if not state.terminated:
                state.record(Event("t_end_reached", state.t, (), state.t))
    except QuadratureError as err:
        state.record(Event("quadrature_failure", state.t, (), err.achieved_tolerance, str(err)))
    except (FloatingPointError, KernelSingularityError) as err:
        state.record(Event("numerical_failure", state.t, (), float("nan"), str(err)))

    flush()
    sink.snapshot(state)
    logger.info("stopped at t={:.6g} after {} step(s)", state.t, state.steps)
    return state


def termination_reason(state: SimState) -> str:
    """Kind of the first terminating event, or ``t_end_reached``."""
    for event in state.events:
        if event.terminating:
            return event.kind
    return "t_end_reached"
