"""
Region selectors for saliency-guided sampling.

Each selector implements one sampling mode; the sampler looks them up in
SELECTORS by mode.
"""

from typing import Dict, Type

from panorama_iqa.core.selectors.base import BaseSelector
from panorama_iqa.core.selectors.topk import TopKSelector
from panorama_iqa.core.selectors.uniform import UniformSelector
from panorama_iqa.core.selectors.weighted import WeightedSelector
from panorama_iqa.settings import SamplingMode

SELECTORS: Dict[SamplingMode, Type[BaseSelector]] = {
    SamplingMode.SALIENCY_WEIGHTED: WeightedSelector,
    SamplingMode.UNIFORM_RANDOM: UniformSelector,
    SamplingMode.TOPK: TopKSelector,
}


def get_selector(mode) -> Type[BaseSelector]:
    return SELECTORS[SamplingMode(mode)]


__all__ = [
    "BaseSelector",
    "WeightedSelector",
    "UniformSelector",
    "TopKSelector",
    "SELECTORS",
    "get_selector",
]
