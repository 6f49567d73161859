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

"""
Command line of gsqg-layercake.

    gsqg diagnose --preset bump-pow-outer --param beta=0.8 --out bump
    gsqg run --config run.toml --t-end 2
    gsqg scaling --alpha 0.25 --preset disk

Exit codes: 0 success, 1 configuration error, 2 run stopped by an event,
3 numerical failure, 4 scaling slope outside the expected band.
"""


# standard library
import argparse
import pathlib
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from typing import Any, Dict, List, Optional, Sequence

# third party imports
import numpy as np
import pandas as pd

from loguru import logger

# project imports
from .config import RunConfig, echo_config, parse_config
from .evolution import MonitorConfig, SimState, StepperConfig, run_until, termination_reason
from .exceptions import (
    ConfigError,
    ContourError,
    GeometryError,
    GridResolutionError,
    KernelSingularityError,
    ProfileError,
    QuadratureError,
)
from .kernel import MollifierParam
from .layercake import LayerCake, compute_diagnostics, default_eta
from .moduli import modulus_admissibility, radial_L_oracle, radial_R_oracle
from .presets import Preset, build_preset
from .storage import OutputLock, RunWriter, write_cake
from .velocity import VelocityField

logging_format = "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{module}</cyan> | <level>{message}</level>"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_EVENT = 2
EXIT_NUMERICAL = 3
EXIT_SLOPE = 4

REPORT_NAME = "report.txt"
TREND_NAME = "trend.csv"
SCALING_NAME = "scaling.csv"
SLOPE_BAND = (-0.1, 0.15)

# flag destination -> dotted configuration key
FLAG_KEYS = {
    "alpha": "alpha",
    "preset": "preset",
    "levels": "levels",
    "nodes": "nodes",
    "eta": "eta",
    "epsilon": "velocity.epsilon",
    "dt": "time.dt",
    "cfl": "time.cfl",
    "t_end": "time.t_end",
    "out": "out",
    "k_diag": "output.k_diag",
    "k_snap": "output.k_snap",
    "seed": "seed",
    "profile": "profile",
}

RADIAL_FAMILIES = {"bump-pow-inner": "inner", "bump-pow-outer": "outer"}


def _parse_param(text: str) -> Dict[str, Any]:
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError([f"--param expects key=value, got {text!r}"])
    try:
        value = tomllib.loads(f"value = {raw}")["value"]
    except tomllib.TOMLDecodeError:
        value = raw
    return {key.strip(): value}


def _flags(args: argparse.Namespace) -> Dict[str, Any]:
    flags = {key: getattr(args, dest) for dest, key in FLAG_KEYS.items()}
    params: Dict[str, Any] = {}
    for text in args.param or []:
        params.update(_parse_param(text))
    if params:
        flags["preset_params"] = params
    return flags


def _build(cfg: RunConfig, levels: Optional[int] = None) -> Preset:
    return build_preset(cfg.preset, cfg.preset_params, cfg.alpha_param,
                        levels or cfg.levels, cfg.nodes)


def _table(frame: pd.DataFrame) -> str:
    return frame.to_string(index=False, float_format=lambda v: f"{v:.6g}")


def _write_report(out_dir: pathlib.Path, lines: List[str]) -> pathlib.Path:
    path = out_dir / REPORT_NAME
    path.write_text("\n".join(lines) + "\n")
    logger.info(f"report saved at {path}")
    return path


def _modulus_line(preset: Preset) -> str:
    if preset.modulus is None:
        return "modulus admissibility: not applicable (discontinuous data)"
    result = modulus_admissibility(preset.modulus, preset.cake.alpha)
    state = f"finite, {result.value:.6g}" if result.finite else "divergent"
    return (f"modulus admissibility: {preset.modulus.name} {preset.modulus.params}: "
            f"{state} ({result.reason})")


def _diagnostics_lines(cake: LayerCake, eta: float) -> List[str]:
    diag = compute_diagnostics(cake, eta, r_eta=eta)
    record = diag.as_record(cake.labels)
    return [f"{key} = {value:.10g}" for key, value in record.items() if key != "lip_u"]


def cmd_diagnose(cfg: RunConfig) -> int:
    """Functionals of the preset without evolution, plus the trend over M, 2M, 4M.

    Writes report.txt and trend.csv. Radial bump presets also get the
    continuum L and R values next to the trend.
    """
    out_dir = pathlib.Path(cfg.out)
    preset = _build(cfg)
    eta = cfg.eta if cfg.eta is not None else default_eta(preset.cake)

    rows = []
    for factor in (1, 2, 4):
        levels = cfg.levels * factor
        cake = preset.cake if factor == 1 else _build(cfg, levels).cake
        level_eta = cfg.eta if cfg.eta is not None else default_eta(cake)
        diag = compute_diagnostics(cake, level_eta, r_eta=level_eta)
        rows.append({"levels": levels, "eta": level_eta, "L_eta": diag.L_eta,
                     "R_eta": diag.R_eta, "Q": diag.Q, "Lambda": diag.Lambda,
                     "Sigma": diag.Sigma})
        logger.info("levels {}: L_eta={:.6g} R_eta={:.6g} Q={:.6g}", levels, diag.L_eta,
                    diag.R_eta, diag.Q)
    trend = pd.DataFrame(rows)
    trend_path = out_dir / TREND_NAME
    trend.to_csv(trend_path, index=False)
    logger.info(f"trend table saved at {trend_path}")

    lines = [f"preset: {preset.name} {preset.params}",
             f"alpha: {cfg.alpha}, c_alpha: {preset.cake.alpha.c_alpha:.10g}",
             f"curves: {len(preset.cake)}, nodes: {preset.cake.node_count}",
             "", "diagnostics:"]
    lines.extend(_diagnostics_lines(preset.cake, eta))
    lines.extend(["", _modulus_line(preset), "", "trend over levels:", _table(trend)])
    family = RADIAL_FAMILIES.get(preset.name)
    if family is not None:
        beta = preset.params["beta"]
        l_oracle = radial_L_oracle(beta, cfg.alpha, family)
        r_oracle = radial_R_oracle(beta, cfg.alpha, family)
        lines.extend([
            "",
            f"continuum L: {'finite' if l_oracle.finite else 'divergent'} "
            f"({l_oracle.value:.6g}; {l_oracle.reason})",
            f"continuum R: {'finite' if r_oracle.finite else 'divergent'} "
            f"({r_oracle.value:.6g}; {r_oracle.reason})",
        ])
    _write_report(out_dir, lines)
    return EXIT_OK


def cmd_run(cfg: RunConfig) -> int:
    """Evolve the preset until t_end or an event.

    Writes initial_cake.jsonl, timeseries.csv, snapshots.jsonl, events.jsonl and
    report.txt. The exit code is 0 at t_end, 2 after a stopping event and 3
    after a numerical failure.
    """
    out_dir = pathlib.Path(cfg.out)
    preset = _build(cfg)
    write_cake(preset.cake, out_dir / "initial_cake.jsonl", preset.name, preset.params)
    mon = cfg.monitor
    state = SimState(
        t=0.0,
        cake=preset.cake,
        mollifier=cfg.mollifier,
        tol=cfg.velocity.tol,
        max_depth=cfg.velocity.max_depth,
        external_strain=preset.external_strain,
        eta=cfg.eta,
        seed=cfg.seed,
        monitor=MonitorConfig(
            q_max=mon.q_max,
            l_max=mon.l_max,
            min_delta=mon.min_delta,
            max_curvature=mon.max_curvature,
            slack=mon.slack,
            area_tol=mon.area_tol,
            critical=cfg.critical,
        ),
        stepper=StepperConfig(
            dt=cfg.time.dt,
            cfl=cfg.time.cfl,
            resample_every=cfg.time.resample_every,
            source=cfg.velocity.source,
            grid_h=cfg.velocity.grid_h,
            k_diag=cfg.output.k_diag,
            k_snap=cfg.output.k_snap,
        ),
    )
    initial = state.initial
    run_until(state, cfg.time.t_end, RunWriter(out_dir))
    reason = termination_reason(state)

    final = state.history[-1][1] if state.history else initial
    summary = pd.DataFrame(
        [{"t": 0.0, **initial.as_record(preset.cake.labels)},
         {"t": state.t, **final.as_record(state.cake.labels)}]
    )
    lines = [f"preset: {preset.name} {preset.params}",
             f"alpha: {cfg.alpha}, epsilon: {cfg.velocity.epsilon}, profile: {cfg.profile}",
             f"steps: {state.steps}, final time: {state.t:.10g}",
             f"area drift: {state.area_drift:.3e}",
             "", "diagnostics at start and end:",
             _table(summary.set_index("t").T.rename_axis("quantity").reset_index()),
             "", _modulus_line(preset), "", "envelopes:"]
    lines.extend(f"{key} = {value:.6g}" for key, value in state.envelopes.items())
    violations = [e for e in state.events if e.kind == "envelope_violation"]
    lines.append(f"envelope violations: {len(violations)}")
    lines.extend(["", f"termination: {reason}"])
    for event in state.events:
        if event.terminating:
            lines.append(f"event {event.kind} at t={event.t:.6g} {list(event.labels)} "
                         f"value={event.value:.6g} {event.detail}")
    _write_report(out_dir, lines)

    if reason == "t_end_reached":
        return EXIT_OK
    if reason in ("quadrature_failure", "numerical_failure"):
        return EXIT_NUMERICAL
    return EXIT_EVENT


def scaling_study(
    cake: LayerCake,
    epsilons: Sequence[float],
    sample_nodes: int = 64,
    tol: float = 1e-8,
    max_depth: int = 24,
) -> pd.DataFrame:
    """max |u - u_ε| over a fixed set of curve nodes for every ε.

    The points are ``sample_nodes`` equally spaced nodes of every curve. Rows where
    the quadrature fails are flagged and carry NaN.
    """
    exact = VelocityField(cake, MollifierParam(0.0), tol, max_depth)
    points = [c.nodes[np.linspace(0, len(c) - 1, min(sample_nodes, len(c))).astype(int)]
              for c in cake.curves]
    rows = []
    if not points:
        for eps in epsilons:
            rows.append({"epsilon": eps, "max_diff": 0.0, "flagged": False})
        return pd.DataFrame(rows)
    targets = np.vstack(points)
    u_exact = exact.velocity(targets)
    for eps in epsilons:
        try:
            mollified = VelocityField(cake, MollifierParam(eps), tol, max_depth)
            diff = float(np.max(np.linalg.norm(mollified.velocity(targets) - u_exact, axis=1)))
            rows.append({"epsilon": eps, "max_diff": diff, "flagged": False})
        except QuadratureError as err:
            logger.warning(f"epsilon {eps}: {err}")
            rows.append({"epsilon": eps, "max_diff": float("nan"), "flagged": True})
        logger.info("epsilon {:g}: max |u - u_eps| = {:.6g}", eps, rows[-1]["max_diff"])
    return pd.DataFrame(rows)


def fit_slope(table: pd.DataFrame) -> Optional[float]:
    """Least-squares slope of log max_diff against log ε over unflagged rows."""
    usable = table[~table["flagged"] & (table["max_diff"] > 0.0)]
    if len(usable) < 2:
        return None
    slope, _ = np.polyfit(np.log(usable["epsilon"]), np.log(usable["max_diff"]), 1)
    return float(slope)


def cmd_scaling_study(cfg: RunConfig) -> int:
    """Convergence of u_ε to u as ε decreases; writes scaling.csv and report.txt.

    Returns:
        ``EXIT_SLOPE`` when the fitted slope leaves the band around 1 - 2α.
    """
    out_dir = pathlib.Path(cfg.out)
    preset = _build(cfg)
    table = scaling_study(preset.cake, cfg.scaling.epsilons, cfg.scaling.sample_nodes,
                          cfg.velocity.tol, cfg.velocity.max_depth)
    path = out_dir / SCALING_NAME
    table.to_csv(path, index=False)
    logger.info(f"scaling table saved at {path}")

    expected = 1.0 - 2.0 * cfg.alpha
    code = EXIT_OK
    lines = [f"preset: {preset.name} {preset.params}", f"alpha: {cfg.alpha}", "", _table(table), ""]
    if (table["max_diff"].fillna(0.0) == 0.0).all() and not table["flagged"].any():
        lines.append("fit skipped: theta vanishes identically, every difference is 0")
    else:
        slope = fit_slope(table)
        if slope is None:
            lines.append("fit skipped: fewer than two usable rows")
        else:
            low, high = expected + SLOPE_BAND[0], expected + SLOPE_BAND[1]
            within = low <= slope <= high
            lines.append(f"fitted slope: {slope:.4f} (expected 1 - 2 alpha = {expected:.4f}, "
                         f"band [{low:.4f}, {high:.4f}]: {'within' if within else 'outside'})")
            if not within:
                logger.error(f"fitted slope {slope:.4f} outside [{low:.4f}, {high:.4f}]")
                code = EXIT_SLOPE
    _write_report(out_dir, lines)
    return code


COMMANDS = {"diagnose": cmd_diagnose, "run": cmd_run, "scaling": cmd_scaling_study}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--alpha", type=float, help="kernel exponent, 0 < alpha < 1/2")
    common.add_argument("--preset", help="initial data preset")
    common.add_argument("--param", action="append", metavar="KEY=VALUE",
                        help="preset parameter, repeatable")
    common.add_argument("--levels", type=int, help="number of levels M")
    common.add_argument("--nodes", type=int, help="nodes per curve N")
    common.add_argument("--eta", type=float, help="smoothing length of L^eta")
    common.add_argument("--epsilon", type=float, help="kernel mollification radius")
    common.add_argument("--dt", type=float, help="fixed time step")
    common.add_argument("--cfl", type=float, help="Courant factor of the automatic time step")
    common.add_argument("--t-end", dest="t_end", type=float, help="final time")
    common.add_argument("--out", help="output directory")
    common.add_argument("--k-diag", dest="k_diag", type=int, help="monitor cadence in steps")
    common.add_argument("--k-snap", dest="k_snap", type=int, help="snapshot cadence in steps")
    common.add_argument("--seed", type=int, help="seed of randomized sampling")
    common.add_argument("--profile", choices=["standard", "critical"], help="monitor profile")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="gsqg", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("diagnose", parents=[common], help="functionals of the initial data")
    sub.add_parser("run", parents=[common], help="evolve the initial data")
    sub.add_parser("scaling", parents=[common], help="convergence of u_eps to u in epsilon")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    main function
    """
    args = build_parser().parse_args(argv)

    # set up logger
    logger.remove()
    logger.add(sys.stderr, format=logging_format, level="DEBUG" if args.verbose else "INFO")

    try:
        cfg = parse_config(args.config, _flags(args))
        out_dir = pathlib.Path(cfg.out)
        with OutputLock(out_dir):
            echo_config(cfg, out_dir)
            return COMMANDS[args.command](cfg)
    except ConfigError as err:
        for problem in err.problems:
            logger.error(problem)
        return EXIT_CONFIG
    except (ProfileError, GeometryError, ContourError, GridResolutionError) as err:
        logger.error(str(err))
        return EXIT_CONFIG
    except (QuadratureError, KernelSingularityError, FloatingPointError) as err:
        logger.error(f"numerical failure: {err}")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("Interrupted with CTRL-C, exiting...")
