"""
Viewport extractors, one per viewport mode.
"""

from typing import Dict, Type

from panorama_iqa.core.viewports.base import BaseExtractor
from panorama_iqa.core.viewports.erp_crop import ErpCropExtractor
from panorama_iqa.core.viewports.tangent import TangentExtractor
from panorama_iqa.settings import ViewportMode

EXTRACTORS: Dict[ViewportMode, Type[BaseExtractor]] = {
    ViewportMode.TANGENT: TangentExtractor,
    ViewportMode.ERP_CROP: ErpCropExtractor,
}


def get_extractor(mode) -> Type[BaseExtractor]:
    return EXTRACTORS[ViewportMode(mode)]


__all__ = [
    "BaseExtractor",
    "TangentExtractor",
    "ErpCropExtractor",
    "EXTRACTORS",
    "get_extractor",
]
