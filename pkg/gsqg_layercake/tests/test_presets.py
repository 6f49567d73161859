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

from gsqg_layercake.contours import GridSamples
from gsqg_layercake.exceptions import ProfileError
from gsqg_layercake.geometry import centroid
from gsqg_layercake.presets import PRESETS, build_preset
from gsqg_layercake.storage import write_scalar_grid


class TestPresets:
    @pytest.mark.parametrize("name", sorted(set(PRESETS) - {"grid-file"}))
    def test_every_preset_builds(self, name, alpha):
        preset = build_preset(name, {}, alpha, 4, 64)
        assert preset.name == name
        assert len(preset.cake) >= 1
        assert all(len(c) == 64 for c in preset.cake.curves)

    def test_unknown(self, alpha):
        with pytest.raises(ProfileError, match="unknown preset"):
            build_preset("square", {}, alpha, 4, 64)

    def test_disk(self, alpha):
        preset = build_preset("disk", {"radius": 2.0, "weight": -0.5, "center": [1.0, 1.0]}, alpha, 4, 64)
        assert preset.cake.weights.tolist() == [-0.5]
        np.testing.assert_allclose(centroid(preset.cake.curves[0]), [1.0, 1.0], atol=1e-12)
        assert preset.modulus is None
        assert preset.external_strain is None

    def test_circles(self, alpha):
        params = {"radii": [1.0, 0.5], "weights": [1.0, -1.0], "centers": [-2.0, 0.0, 2.0, 0.0]}
        preset = build_preset("circles", params, alpha, 4, 64)
        assert preset.cake.labels == ["circle0", "circle1"]
        assert preset.cake.weights.tolist() == [1.0, -1.0]

    def test_circles_mismatch(self, alpha):
        with pytest.raises(ProfileError, match="matching radii"):
            build_preset("circles", {"radii": [1.0, 0.5], "weights": [1.0]}, alpha, 4, 64)

    def test_bad_number(self, alpha):
        with pytest.raises(ProfileError, match="radius must be a number"):
            build_preset("disk", {"radius": "wide"}, alpha, 4, 64)

    @pytest.mark.parametrize("name", ["bump-pow-inner", "bump-pow-outer"])
    def test_bumps_carry_modulus(self, name, alpha):
        preset = build_preset(name, {"beta": 0.5}, alpha, 6, 64)
        assert len(preset.cake) == 6
        assert preset.modulus is not None
        assert preset.params == {"beta": 0.5, "height": 1.0}

    def test_two_patch_strain(self, alpha):
        preset = build_preset("two-patch-approach", {"gap": 0.2, "strain": 3.0}, alpha, 4, 64)
        np.testing.assert_array_equal(preset.external_strain.matrix, [[-3.0, 0.0], [0.0, 3.0]])
        assert preset.cake.weights.tolist() == [1.0, -1.0]
        assert preset.cake.pairwise_distances[0, 1] == pytest.approx(0.2, rel=1e-9)

    def test_grid_file(self, alpha, tmp_path):
        x = np.linspace(-2.0, 2.0, 81)
        values = np.exp(-(x[None, :] ** 2 + x[:, None] ** 2))
        path = write_scalar_grid(GridSamples(values, (-2.0, 2.0, -2.0, 2.0)), tmp_path / "theta.csv")
        preset = build_preset("grid-file", {"path": str(path)}, alpha, 3, 64)
        assert len(preset.cake) == 3
        assert preset.params["levels"] == pytest.approx([1.0 / 6.0, 0.5, 5.0 / 6.0])
        explicit = build_preset("grid-file", {"path": str(path), "levels": [0.5]}, alpha, 3, 64)
        assert len(explicit.cake) == 1

    def test_grid_file_of_zeros(self, alpha, tmp_path):
        path = write_scalar_grid(GridSamples(np.zeros((5, 5)), (0.0, 1.0, 0.0, 1.0)), tmp_path / "z.bin")
        preset = build_preset("grid-file", {"path": str(path)}, alpha, 3, 64)
        assert len(preset.cake) == 0
        assert preset.params["levels"] == []

    def test_grid_file_needs_path(self, alpha):
        with pytest.raises(ProfileError, match="path"):
            build_preset("grid-file", {}, alpha, 3, 64)
