"""
Base extractor class for viewport rendering.

An extractor turns an ERP image plus a spherical center into a square RGB
raster. Extractors are registered by viewport mode in EXTRACTORS.
"""

import numpy as np

from panorama_iqa.core.imageio import ErpImage
from panorama_iqa.core.sphere import TangentPlane


class BaseExtractor:
    """Base class for all viewport extractors."""

    name = "base"

    def __init__(self, image: ErpImage):
        """
        Initialize the extractor.

        Args:
            image: The panorama viewports are cut from
        """
        self.image = image

    def extract(self, plane: TangentPlane) -> np.ndarray:
        """
        Render the viewport described by ``plane``.

        Returns:
            Read-only array of shape (resolution, resolution, 3)

        Raises:
            NotImplementedError: Must be implemented by subclass
        """
        raise NotImplementedError("Subclasses must implement extract() method")

    @staticmethod
    def _freeze(pixels: np.ndarray) -> np.ndarray:
        pixels = np.ascontiguousarray(pixels, dtype=np.float64)
        pixels.setflags(write=False)
        return pixels
