"""
Axis-aligned ERP crops (tangent-projection ablation).
"""

import numpy as np

from panorama_iqa.core.imageio import bilinear_sample_array
from panorama_iqa.core.sphere import TangentPlane, sphere_to_erp
from panorama_iqa.core.viewports.base import BaseExtractor


class ErpCropExtractor(BaseExtractor):
    """
    resolution x resolution ERP pixels around the center, at one-pixel steps.

    The field of view is ignored; polar crops keep the ERP stretching.
    """

    name = "erp-crop"

    def extract(self, plane: TangentPlane) -> np.ndarray:
        row, col = sphere_to_erp(plane.center, self.image.height, self.image.width)
        offsets = np.arange(plane.resolution) - (plane.resolution - 1) / 2.0
        rows = row + offsets[:, np.newaxis]
        cols = col + offsets[np.newaxis, :]
        return self._freeze(bilinear_sample_array(self.image.data, rows, cols))
