"""
Distortion-free tangent viewports.
"""

import numpy as np

from panorama_iqa.core.imageio import bilinear_sample_array
from panorama_iqa.core.sphere import TangentPlane, sphere_to_erp_array, tangent_grid
from panorama_iqa.core.viewports.base import BaseExtractor


class TangentExtractor(BaseExtractor):
    """Gnomonic projection of the sphere onto the plane tangent at the center."""

    name = "tangent"

    def extract(self, plane: TangentPlane) -> np.ndarray:
        grid = tangent_grid(plane)
        rows, cols = sphere_to_erp_array(
            grid.lat, grid.lon, self.image.height, self.image.width
        )
        return self._freeze(bilinear_sample_array(self.image.data, rows, cols))
