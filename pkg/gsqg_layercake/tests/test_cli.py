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

import json

import numpy as np
import pandas as pd
import pytest

from gsqg_layercake import cli
from gsqg_layercake.config import ECHO_NAME, parse_config
from gsqg_layercake.contours import GridSamples
from gsqg_layercake.exceptions import ConfigError
from gsqg_layercake.geometry import ClosedCurve
from gsqg_layercake.kernel import AlphaParam
from gsqg_layercake.layercake import LayerCake, LevelComponent
from gsqg_layercake.storage import LOCK_NAME, read_cake, read_events, write_scalar_grid


def run_cli(*args):
    return cli.main([str(a) for a in args])


class TestFlags:
    def test_param_values(self):
        assert cli._parse_param("beta=0.8") == {"beta": 0.8}
        assert cli._parse_param("radii=[1.0, 0.5]") == {"radii": [1.0, 0.5]}
        assert cli._parse_param("path=theta.csv") == {"path": "theta.csv"}
        with pytest.raises(ConfigError):
            cli._parse_param("beta")

    def test_flags_reach_the_configuration(self, tmp_path):
        args = cli.build_parser().parse_args(
            ["run", "--alpha", "0.3", "--t-end", "2", "--k-diag", "5", "--param", "radius=2",
             "--out", str(tmp_path)]
        )
        cfg = parse_config(args.config, cli._flags(args))
        assert cfg.alpha == 0.3
        assert cfg.time.t_end == 2.0
        assert cfg.output.k_diag == 5
        assert cfg.preset_params == {"radius": 2}
        assert cfg.nodes == 256


class TestDiagnose:
    def test_disk(self, tmp_path):
        out = tmp_path / "diag"
        assert run_cli("diagnose", "--nodes", 64, "--levels", 2, "--out", out) == cli.EXIT_OK
        trend = pd.read_csv(out / cli.TREND_NAME)
        assert list(trend["levels"]) == [2, 4, 8]
        assert trend["Q"].iloc[0] == pytest.approx(4.0 * np.pi**2, rel=1e-2)
        report = (out / cli.REPORT_NAME).read_text()
        assert "not applicable" in report
        assert "L_eta = " in report
        assert (out / ECHO_NAME).exists()
        assert not (out / LOCK_NAME).exists()

    def test_radial_bump(self, tmp_path):
        out = tmp_path / "bump"
        code = run_cli("diagnose", "--preset", "bump-pow-outer", "--param", "beta=0.8",
                       "--nodes", 64, "--levels", 2, "--out", out)
        assert code == cli.EXIT_OK
        report = (out / cli.REPORT_NAME).read_text()
        assert "continuum L: finite" in report
        assert "modulus admissibility: power" in report
        assert len(pd.read_csv(out / cli.TREND_NAME)) == 3


class TestRun:
    def test_disk_reaches_end(self, tmp_path):
        out = tmp_path / "run"
        code = run_cli("run", "--nodes", 48, "--dt", 0.1, "--cfl", 1000, "--t-end", 0.2,
                       "--k-diag", 1, "--out", out)
        assert code == cli.EXIT_OK
        cake, header = read_cake(out / "initial_cake.jsonl")
        assert header["preset"] == "disk"
        assert len(cake) == 1
        assert read_events(out / "events.jsonl")[-1]["kind"] == "t_end_reached"
        series = pd.read_csv(out / "timeseries.csv")
        assert series["t"].iloc[-1] == pytest.approx(0.2)
        report = (out / cli.REPORT_NAME).read_text()
        assert "termination: t_end_reached" in report
        assert "lip_integral = " in report

    def test_stopping_event(self, tmp_path):
        out = tmp_path / "collide"
        config = tmp_path / "run.toml"
        config.write_text("""
preset = "two-patch-approach"
nodes = 48

[preset_params]
gap = 0.05
strain = 2.0

[monitor]
min_delta = 0.1

[time]
t_end = 1.0
""")
        assert run_cli("run", "--config", config, "--out", out) == cli.EXIT_EVENT
        kinds = [e["kind"] for e in read_events(out / "events.jsonl")]
        assert "collision" in kinds
        assert "termination: collision" in (out / cli.REPORT_NAME).read_text()


class TestMain:
    def test_config_error(self, tmp_path):
        assert run_cli("run", "--alpha", 0.7, "--out", tmp_path) == cli.EXIT_CONFIG
        assert run_cli("run", "--preset", "square", "--out", tmp_path) == cli.EXIT_CONFIG

    def test_profile_error(self, tmp_path):
        code = run_cli("diagnose", "--preset", "circles", "--param", "radii=[1.0, 2.0]",
                       "--param", "weights=[1.0]", "--out", tmp_path)
        assert code == cli.EXIT_CONFIG

    def test_locked_output(self, tmp_path):
        (tmp_path / LOCK_NAME).write_text("123\n")
        assert run_cli("diagnose", "--nodes", 32, "--out", tmp_path) == cli.EXIT_CONFIG
        assert (tmp_path / LOCK_NAME).exists()

    def test_missing_command(self):
        with pytest.raises(SystemExit):
            cli.main([])


class TestScaling:
    def test_fit_slope(self):
        eps = np.array([0.2, 0.1, 0.05, 0.025])
        table = pd.DataFrame({"epsilon": eps, "max_diff": 3.0 * eps**0.5, "flagged": False})
        assert cli.fit_slope(table) == pytest.approx(0.5)
        table.loc[0, "flagged"] = True
        table.loc[0, "max_diff"] = np.nan
        assert cli.fit_slope(table) == pytest.approx(0.5)
        table["flagged"] = [True, True, True, False]
        assert cli.fit_slope(table) is None

    def test_empty_cake(self, alpha):
        table = cli.scaling_study(LayerCake([], alpha), [0.2, 0.1])
        assert list(table["max_diff"]) == [0.0, 0.0]
        assert not table["flagged"].any()

    @pytest.mark.parametrize("alpha_value", [1.0 / 6.0, 0.25, 1.0 / 3.0])
    def test_disk_differences_shrink(self, alpha_value):
        disk = LayerCake([LevelComponent("disk", 1.0, ClosedCurve.circle(1.0, 128))],
                         AlphaParam(alpha_value))
        table = cli.scaling_study(disk, [0.2, 0.1, 0.05], sample_nodes=8)
        diffs = table["max_diff"].to_numpy()
        assert np.all(np.diff(diffs) < 0.0)
        expected = 1.0 - 2.0 * alpha_value
        low, high = expected + cli.SLOPE_BAND[0], expected + cli.SLOPE_BAND[1]
        assert low <= cli.fit_slope(table) <= high

    def test_slope_outside_band_fails(self, tmp_path, monkeypatch):
        def linear_decay(cake, epsilons, *args, **kwargs):
            eps = np.asarray(epsilons, dtype=float)
            return pd.DataFrame({"epsilon": eps, "max_diff": 2.0 * eps, "flagged": False})

        monkeypatch.setattr(cli, "scaling_study", linear_decay)
        out = tmp_path / "steep"
        code = run_cli("scaling", "--alpha", 0.25, "--nodes", 32, "--out", out)
        assert code == cli.EXIT_SLOPE
        assert "outside" in (out / cli.REPORT_NAME).read_text()

    def test_command_writes_table(self, tmp_path):
        out = tmp_path / "scaling"
        code = run_cli("scaling", "--nodes", 64, "--out", out)
        assert code == cli.EXIT_OK
        table = pd.read_csv(out / cli.SCALING_NAME)
        assert len(table) == 4
        assert "fitted slope" in (out / cli.REPORT_NAME).read_text()

    def test_command_with_zero_field(self, tmp_path):
        grid = write_scalar_grid(GridSamples(np.zeros((4, 4)), (0.0, 1.0, 0.0, 1.0)),
                                 tmp_path / "zero.csv")
        out = tmp_path / "zero"
        code = run_cli("scaling", "--preset", "grid-file", "--param", f"path={json.dumps(str(grid))}",
                       "--out", out)
        assert code == cli.EXIT_OK
        assert "fit skipped: theta vanishes" in (out / cli.REPORT_NAME).read_text()
