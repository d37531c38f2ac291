"""
Base selector class for region sampling.

All selectors inherit from BaseSelector so the sampler can swap strategies
through the SELECTORS registry.
"""

from typing import List

import numpy as np

from panorama_iqa.exceptions import EmptyGridError


class BaseSelector:
    """Base class for all region selectors."""

    name = "base"

    def __init__(self, weights: np.ndarray, rng: np.random.Generator):
        """
        Initialize the selector.

        Args:
            weights: Non-negative score per region, in region-grid order
            rng: Generator for any random draws
        """
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 1 or weights.size == 0:
            raise EmptyGridError("cannot select from an empty region grid")
        self.weights = weights
        self.rng = rng

    @property
    def n_regions(self) -> int:
        return self.weights.size

    def select(self, k: int) -> List[int]:
        """
        Choose ``k`` distinct region indices.

        Returns:
            Indices in selection order

        Raises:
            NotImplementedError: Must be implemented by subclass
        """
        raise NotImplementedError("Subclasses must implement select() method")

    def _check_k(self, k: int) -> int:
        if not 1 <= k <= self.n_regions:
            raise ValueError(f"k={k} outside 1..{self.n_regions}")
        return int(k)
