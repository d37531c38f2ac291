"""
Unweighted sampling without replacement (saliency ablation).
"""

from typing import List

from panorama_iqa.core.selectors.base import BaseSelector


class UniformSelector(BaseSelector):
    """Every k-subset of regions is equally likely."""

    name = "uniform-random"

    def select(self, k: int) -> List[int]:
        k = self._check_k(k)
        return [int(i) for i in self.rng.permutation(self.n_regions)[:k]]
