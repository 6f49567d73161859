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

from gsqg_layercake.geometry import ClosedCurve
from gsqg_layercake.kernel import AlphaParam
from gsqg_layercake.layercake import LayerCake, LevelComponent


@pytest.fixture
def alpha():
    return AlphaParam(0.25)


@pytest.fixture
def unit_circle():
    return ClosedCurve.circle(1.0, 256)


@pytest.fixture
def ellipse_21():
    return ClosedCurve.ellipse(2.0, 1.0, 256)


@pytest.fixture
def square():
    """[-1, 1]² with four segments per side."""
    return ClosedCurve.polygon([(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)], 4)


@pytest.fixture
def disk_cake(alpha):
    return LayerCake([LevelComponent("disk", 1.0, ClosedCurve.circle(1.0, 128))], alpha)


@pytest.fixture
def nested_cake(alpha):
    """Circles of radius 1 and 2, weight 1/2 each."""
    return LayerCake(
        [
            LevelComponent("inner", 0.5, ClosedCurve.circle(1.0, 128)),
            LevelComponent("outer", 0.5, ClosedCurve.circle(2.0, 128)),
        ],
        alpha,
    )


@pytest.fixture
def figure_eight():
    """Lemniscate-like polyline crossing itself near the origin."""
    return ClosedCurve.from_function(
        lambda t: np.column_stack([np.sin(t + 0.05), np.sin(t + 0.05) * np.cos(t + 0.05)]), 64
    )
