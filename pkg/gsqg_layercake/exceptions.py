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

"""Exceptions raised by the gsqg_layercake package.

The command line maps them onto exit codes: ``ConfigError`` exits with 1,
numerical failures (``QuadratureError``, ``KernelSingularityError``) with 3.
"""

from typing import List, Optional


class GsqgError(Exception):
    """Base class of every error raised by this package."""


class GeometryError(GsqgError, ValueError):
    """Degenerate or invalid curve data."""


class KernelSingularityError(GsqgError, ZeroDivisionError):
    """The unmollified kernel was evaluated at the origin."""


class QuadratureError(GsqgError, ArithmeticError):
    """Graded panel refinement did not reach the requested tolerance.

    Attributes:
        achieved_tolerance: Largest relative increment left when refinement stopped.
        depth: Refinement depth reached.
    """

    def __init__(self, message: str, achieved_tolerance: float, depth: int) -> None:
        super().__init__(f"{message} (achieved {achieved_tolerance:.3e} at depth {depth})")
        self.achieved_tolerance = achieved_tolerance
        self.depth = depth


class GridResolutionError(GsqgError, ValueError):
    """Area quadrature grid too coarse for the mollification radius."""


class ContourError(GsqgError, ValueError):
    """A level set could not be extracted as closed curves."""


class ProfileError(GsqgError, ValueError):
    """Invalid radial profile, modulus of continuity or preset."""


class ConfigError(GsqgError, ValueError):
    """One or more configuration problems.

    Attributes:
        problems: Every problem found while resolving the configuration.
    """

    def __init__(self, problems: List[str], message: Optional[str] = None) -> None:
        self.problems = list(problems)
        super().__init__(message or "; ".join(self.problems))


class StepRejected(GsqgError):
    """A trial time step produced crossing or self-intersecting curves."""
