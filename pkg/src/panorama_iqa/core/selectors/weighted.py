"""
Saliency-weighted sampling without replacement.
"""

from typing import List

import numpy as np

from panorama_iqa.core.selectors.base import BaseSelector


class WeightedSelector(BaseSelector):
    """
    Draw regions with probability proportional to their mean saliency.

    Each region gets the key u ** (1 / w) for u ~ U(0, 1]; the k largest keys
    win. Keys are compared as log(u) / w. Zero-weight regions can only fill
    slots left after every positive-weight region, in random order.
    """

    name = "saliency-weighted"

    def select(self, k: int) -> List[int]:
        k = self._check_k(k)
        u = 1.0 - self.rng.random(self.n_regions)
        tiebreak = self.rng.random(self.n_regions)
        positive = self.weights > 0.0
        keys = np.full(self.n_regions, -np.inf)
        keys[positive] = np.log(u[positive]) / self.weights[positive]
        # lexsort: last key is primary
        order = np.lexsort((-tiebreak, -keys))
        return [int(i) for i in order[:k]]
