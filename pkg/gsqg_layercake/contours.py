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

"""Marching-squares extraction of oriented super-level set boundaries.

Cells are walked counterclockwise: corner 0 is (row i, col j), then (i, j+1),
(i+1, j+1), (i+1, j), with rows increasing in y. A grid edge where the walk
leaves the region {f > level} is an exit, one where it enters is an entry.
Joining each exit to an entry of the same cell gives segments that keep the
region on their left, so outer boundaries come out counterclockwise and holes
clockwise.
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from loguru import logger
from numpy.typing import NDArray

from .exceptions import ContourError

FloatArray = NDArray[np.float64]


@dataclass(frozen=True)
class GridSamples:
    """Row-major samples f[i, j] = f(x_j, y_i) on a uniform grid.

    Attributes:
        values: Array of shape (ny, nx).
        bbox: (xmin, xmax, ymin, ymax) of the sample points.
    """

    values: FloatArray
    bbox: Tuple[float, float, float, float]

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or min(values.shape) < 2:
            raise ContourError(f"grid samples must be a 2-D array of at least 2x2, got {values.shape}")
        if not np.isfinite(values).all():
            raise ContourError("grid samples contain non-finite values")
        xmin, xmax, ymin, ymax = self.bbox
        if not (xmax > xmin and ymax > ymin):
            raise ContourError(f"invalid bounding box {self.bbox}")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def spacing(self) -> Tuple[float, float]:
        """(dx, dy)."""
        ny, nx = self.values.shape
        xmin, xmax, ymin, ymax = self.bbox
        return (xmax - xmin) / (nx - 1), (ymax - ymin) / (ny - 1)

    def points(self) -> FloatArray:
        """All sample coordinates, shape (ny, nx, 2)."""
        ny, nx = self.values.shape
        xmin, xmax, ymin, ymax = self.bbox
        gx, gy = np.meshgrid(np.linspace(xmin, xmax, nx), np.linspace(ymin, ymax, ny))
        return np.stack([gx, gy], axis=-1)


def _crossings(samples: GridSamples, level: float):
    """Crossing positions on every horizontal and vertical grid edge."""
    f = samples.values
    pts = samples.points()
    with np.errstate(divide="ignore", invalid="ignore"):
        th = (level - f[:, :-1]) / (f[:, 1:] - f[:, :-1])
        tv = (level - f[:-1, :]) / (f[1:, :] - f[:-1, :])
    th = np.clip(np.nan_to_num(th, nan=0.5), 0.0, 1.0)
    tv = np.clip(np.nan_to_num(tv, nan=0.5), 0.0, 1.0)
    horizontal = pts[:, :-1] + th[..., None] * (pts[:, 1:] - pts[:, :-1])
    vertical = pts[:-1, :] + tv[..., None] * (pts[1:, :] - pts[:-1, :])
    return horizontal.reshape(-1, 2), vertical.reshape(-1, 2)


def extract_loops(samples: GridSamples, level: float) -> List[FloatArray]:
    """Closed boundaries of {f > level}, each as an (n, 2) array of points.

    Saddle cells are resolved by the cell-centre mean: when it lies above the
    level the two above-corners are joined through the cell.

    Args:
        samples: Grid samples.
        level: Contour value.

    Returns:
        Loops with the region on their left.

    Raises:
        ContourError: If the region reaches the edge of the grid, so that some
            boundary would be an open contour.
    """
    f = samples.values
    above = f > level
    ny, nx = f.shape
    edge = np.concatenate([above[0], above[-1], above[:, 0], above[:, -1]])
    if edge.any():
        raise ContourError(f"level {level:g} set reaches the grid boundary: open contour")
    if not above.any():
        return []

    horizontal, vertical = _crossings(samples, level)
    points = np.vstack([horizontal, vertical])
    n_h = horizontal.shape[0]

    i, j = np.meshgrid(np.arange(ny - 1), np.arange(nx - 1), indexing="ij")
    i = i.ravel()
    j = j.ravel()
    corner = np.stack(
        [above[i, j], above[i, j + 1], above[i + 1, j + 1], above[i + 1, j]], axis=1
    )
    # edge k runs from corner k to corner k + 1
    edge_id = np.stack(
        [
            i * (nx - 1) + j,
            n_h + i * nx + (j + 1),
            (i + 1) * (nx - 1) + j,
            n_h + i * nx + j,
        ],
        axis=1,
    )
    nxt = np.roll(corner, -1, axis=1)
    exits = corner & ~nxt
    entries = ~corner & nxt
    count = exits.sum(axis=1)

    starts: List[NDArray[np.int64]] = []
    ends: List[NDArray[np.int64]] = []

    single = np.flatnonzero(count == 1)
    if single.size:
        starts.append(edge_id[single, np.argmax(exits[single], axis=1)])
        ends.append(edge_id[single, np.argmax(entries[single], axis=1)])

    saddle = np.flatnonzero(count == 2)
    if saddle.size:
        logger.warning(
            "level {:g}: resolving {} saddle cell(s) by the cell-centre value", level, saddle.size
        )
        centre = 0.25 * (
            f[i[saddle], j[saddle]]
            + f[i[saddle], j[saddle] + 1]
            + f[i[saddle] + 1, j[saddle] + 1]
            + f[i[saddle] + 1, j[saddle]]
        )
        joined = centre > level
        for local, cell in enumerate(saddle):
            exit_edges = np.flatnonzero(exits[cell])
            for k in exit_edges:
                # joined: the below-corner k+1 is cut off, closed by entry edge k+1;
                # split: the above-corner k is cut off, closed by entry edge k-1
                partner = (k + 1) % 4 if joined[local] else (k - 1) % 4
                starts.append(np.array([edge_id[cell, k]]))
                ends.append(np.array([edge_id[cell, partner]]))

    start = np.concatenate(starts)
    end = np.concatenate(ends)
    successor = np.full(points.shape[0], -1, dtype=np.int64)
    successor[start] = end

    loops: List[FloatArray] = []
    visited = np.zeros(points.shape[0], dtype=bool)
    for first in start:
        if visited[first]:
            continue
        chain = []
        node = first
        while not visited[node]:
            visited[node] = True
            chain.append(node)
            node = successor[node]
            if node < 0:
                raise ContourError(f"level {level:g}: broken contour chain")
        if node != first:
            raise ContourError(f"level {level:g}: contour chain does not close")
        loops.append(points[np.asarray(chain)])
    logger.debug("level {:g}: extracted {} loop(s)", level, len(loops))
    return loops


def densify(loop: FloatArray, minimum: int) -> FloatArray:
    """Split every segment of a closed loop evenly until it has at least ``minimum`` points."""
    n = loop.shape[0]
    parts = max(1, int(np.ceil(minimum / n)))
    if parts == 1:
        return loop
    frac = np.arange(parts) / parts
    nxt = np.roll(loop, -1, axis=0)
    return (loop[:, None, :] + frac[None, :, None] * (nxt - loop)[:, None, :]).reshape(-1, 2)


def drop_repeats(loop: FloatArray, rtol: float = 1e-9) -> FloatArray:
    """Remove points that coincide with their successor (level through a sample)."""
    extent = float(np.ptp(loop, axis=0).max()) or 1.0
    step = np.linalg.norm(np.roll(loop, -1, axis=0) - loop, axis=1)
    return loop[step > rtol * extent]


def signed_area_of(loop: Sequence[Sequence[float]]) -> float:
    """Shoelace area of a raw point loop."""
    loop = np.asarray(loop, dtype=np.float64)
    x, y = loop[:, 0], loop[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))
