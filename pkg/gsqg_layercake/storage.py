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

"""Files read and written by the command line.

Cake files and snapshots are JSON lines. A cake file starts with a header
record ``{"record": "header", "alpha", "c_alpha", "eta_default", "preset",
"parameters"}`` followed by one ``{"record": "component", "label", "weight",
"nodes"}`` record per curve.

Scalar grids have a three-line text header::

    nx,<columns>
    ny,<rows>
    bbox,<xmin>,<xmax>,<ymin>,<ymax>

followed by ny comma-separated rows of nx samples (``.csv``) or by nx * ny
little-endian float64 values in row-major order (``.bin``).
"""

import json
import os
import pathlib
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from .contours import GridSamples
from .evolution import Event, MonitorReport, SimState
from .exceptions import ConfigError
from .geometry import ClosedCurve
from .kernel import AlphaParam
from .layercake import LayerCake, LevelComponent, default_eta

PathLike = Union[str, os.PathLike]

LOCK_NAME = ".gsqg.lock"
TIMESERIES_NAME = "timeseries.csv"
SNAPSHOTS_NAME = "snapshots.jsonl"
EVENTS_NAME = "events.jsonl"


def _component_record(comp: LevelComponent) -> Dict[str, Any]:
    return {"label": comp.label, "weight": comp.weight, "nodes": comp.curve.nodes.tolist()}


def write_cake(
    cake: LayerCake,
    path: PathLike,
    preset: str = "",
    parameters: Optional[Mapping[str, Any]] = None,
) -> pathlib.Path:
    """Write a cake file."""
    path = pathlib.Path(path)
    header = {
        "record": "header",
        "alpha": cake.alpha.alpha,
        "c_alpha": cake.alpha.c_alpha,
        "eta_default": default_eta(cake),
        "preset": preset,
        "parameters": dict(parameters or {}),
    }
    with open(path, "w") as handle:
        handle.write(json.dumps(header) + "\n")
        for comp in cake:
            handle.write(json.dumps({"record": "component", **_component_record(comp)}) + "\n")
    logger.info(f"cake with {len(cake)} curve(s) saved at {path}")
    return path


def read_cake(path: PathLike, validate: bool = True) -> Tuple[LayerCake, Dict[str, Any]]:
    """Read a cake file.

    Returns:
        The cake and its header record.

    Raises:
        ConfigError: If the file has no header record or a malformed record.
    """
    path = pathlib.Path(path)
    header: Optional[Dict[str, Any]] = None
    comps: List[LevelComponent] = []
    with open(path) as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.decoder.JSONDecodeError as err:
                raise ConfigError([f"{path}:{number}: {err}"]) from err
            kind = record.get("record")
            if kind == "header":
                header = record
            elif kind == "component":
                comps.append(LevelComponent(
                    str(record["label"]), float(record["weight"]), ClosedCurve(record["nodes"])
                ))
            else:
                raise ConfigError([f"{path}:{number}: unknown record type {kind!r}"])
    if header is None:
        raise ConfigError([f"{path}: missing header record"])
    alpha = AlphaParam(float(header["alpha"]), header.get("c_alpha"))
    return LayerCake(comps, alpha, validate=validate), header


def write_scalar_grid(samples: GridSamples, path: PathLike) -> pathlib.Path:
    """Write grid samples as ``.bin`` or, for any other suffix, CSV."""
    path = pathlib.Path(path)
    ny, nx = samples.shape
    xmin, xmax, ymin, ymax = samples.bbox
    header = f"nx,{nx}\nny,{ny}\nbbox,{xmin!r},{xmax!r},{ymin!r},{ymax!r}\n"
    if path.suffix == ".bin":
        with open(path, "wb") as handle:
            handle.write(header.encode("ascii"))
            handle.write(samples.values.astype("<f8").tobytes())
    else:
        with open(path, "w") as handle:
            handle.write(header)
        pd.DataFrame(samples.values).to_csv(path, mode="a", header=False, index=False,
                                            float_format="%.17g")
    return path


def _parse_grid_header(lines: List[str], path: pathlib.Path) -> Tuple[int, int, Tuple[float, ...]]:
    try:
        keys = [line.strip().split(",") for line in lines]
        if [k[0].strip() for k in keys] != ["nx", "ny", "bbox"]:
            raise ValueError("expected header lines nx, ny, bbox")
        nx, ny = int(keys[0][1]), int(keys[1][1])
        bbox = tuple(float(v) for v in keys[2][1:5])
        if len(bbox) != 4:
            raise ValueError("bbox needs four values")
    except (IndexError, ValueError) as err:
        raise ConfigError([f"{path}: bad grid header: {err}"]) from err
    return nx, ny, bbox


def read_scalar_grid(path: PathLike) -> GridSamples:
    """Read grid samples written by :func:`write_scalar_grid` or by hand.

    Raises:
        ConfigError: If the header is malformed or the sample count does not
            match it.
    """
    path = pathlib.Path(path)
    if path.suffix == ".bin":
        raw = path.read_bytes()
        cut = 0
        for _ in range(3):
            cut = raw.index(b"\n", cut) + 1
        nx, ny, bbox = _parse_grid_header(raw[:cut].decode("ascii").splitlines(), path)
        values = np.frombuffer(raw[cut:], dtype="<f8")
    else:
        with open(path) as handle:
            head = [handle.readline() for _ in range(3)]
        nx, ny, bbox = _parse_grid_header(head, path)
        values = pd.read_csv(path, skiprows=3, header=None).to_numpy(dtype=np.float64)
    if values.size != nx * ny:
        raise ConfigError([f"{path}: header announces {nx}x{ny} samples, found {values.size}"])
    logger.info(f"read {nx}x{ny} grid from {path}")
    return GridSamples(values.reshape(ny, nx), bbox)


class OutputLock:
    """Exclusive ownership of an output directory through a lockfile.

    Raises:
        ConfigError: On entry, if another process holds the directory.
    """

    def __init__(self, out_dir: PathLike) -> None:
        self.path = pathlib.Path(out_dir) / LOCK_NAME

    def __enter__(self) -> "OutputLock":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as err:
            raise ConfigError(
                [f"output directory {self.path.parent} is locked by {self.path}"]
            ) from err
        with os.fdopen(fd, "w") as handle:
            handle.write(f"{os.getpid()}\n")
        return self

    def __exit__(self, *exc_info) -> None:
        self.path.unlink(missing_ok=True)


class RunWriter:
    """Output sink writing timeseries.csv, snapshots.jsonl and events.jsonl.

    Existing files of a previous run in the same directory are replaced.
    """

    def __init__(self, out_dir: PathLike) -> None:
        self.out_dir = pathlib.Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.timeseries = self.out_dir / TIMESERIES_NAME
        self.snapshots = self.out_dir / SNAPSHOTS_NAME
        self.events = self.out_dir / EVENTS_NAME
        for path in (self.timeseries, self.snapshots, self.events):
            path.write_text("")
        self.rows = 0

    def diagnostics(self, state: SimState, report: MonitorReport) -> None:
        row = {"t": state.t, **report.diagnostics.as_record(state.cake.labels)}
        pd.DataFrame([row]).to_csv(
            self.timeseries, mode="a", header=self.rows == 0, index=False, float_format="%.12g"
        )
        self.rows += 1

    def snapshot(self, state: SimState) -> None:
        """Append one ``{t, step, label, weight, nodes}`` record per curve."""
        with open(self.snapshots, "a") as handle:
            for comp in state.cake:
                record = {"t": state.t, "step": state.steps, **_component_record(comp)}
                handle.write(json.dumps(record) + "\n")

    def event(self, event: Event) -> None:
        with open(self.events, "a") as handle:
            handle.write(json.dumps(event.as_record(), allow_nan=False) + "\n")


def read_snapshots(path: PathLike) -> List[Dict[str, Any]]:
    """All curve records of a snapshots.jsonl file, in write order."""
    with open(path) as handle:
        return [json.loads(line) for line in handle if line.strip()]


def read_events(path: PathLike) -> List[Dict[str, Any]]:
    """All event records of an events.jsonl file."""
    return read_snapshots(path)
