"""
Deterministic top-k selection.
"""

from typing import List

import numpy as np

from panorama_iqa.core.selectors.base import BaseSelector


class TopKSelector(BaseSelector):
    """
    The k regions with the highest mean saliency.

    Ties go to the earlier region in row-major (row, col) order. The
    generator is never consumed.
    """

    name = "topk"

    def select(self, k: int) -> List[int]:
        k = self._check_k(k)
        order = np.argsort(-self.weights, kind="stable")
        return [int(i) for i in order[:k]]
