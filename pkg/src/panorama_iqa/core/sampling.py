"""
Saliency-guided viewport sampling.

Pipeline per image: smooth the saliency map with a flat-kernel mean shift,
score overlapping square regions by their mean saliency, pick a share of
the regions (weighted, uniform or top-k), and render a viewport at each
selected region center.
"""

import hashlib
import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import correlate2d

from panorama_iqa.core.imageio import (
    ErpImage,
    SaliencyMap,
    align_saliency,
    baseline_saliency,
)
from panorama_iqa.core.seeding import SeedLike, as_rng, derive_rng
from panorama_iqa.core.selectors import UniformSelector, get_selector
from panorama_iqa.core.sphere import SphericalPoint, TangentPlane, erp_to_sphere
from panorama_iqa.core.viewports import get_extractor
from panorama_iqa.exceptions import DomainError, EmptyGridError
from panorama_iqa.settings import SamplerConfig, SamplingMode, ViewportMode

logger = logging.getLogger(__name__)


# ==================== Types ====================


@dataclass(frozen=True)
class Region:
    """One square region: top-left corner, geometric center and mean saliency."""

    index: int
    top: int
    left: int
    center_row: float
    center_col: float
    mean_saliency: float


@dataclass(frozen=True)
class RegionGrid:
    """
    Overlapping square regions covering an ERP saliency map.

    Regions are stored in row-major order of their top-left corners. Rows stop
    where a region would run past the bottom edge; columns wrap around.
    """

    region_size: int
    stride: int
    height: int
    width: int
    tops: np.ndarray
    lefts: np.ndarray
    means: np.ndarray

    def __len__(self) -> int:
        return int(self.means.size)

    @property
    def center_rows(self) -> np.ndarray:
        return self.tops + (self.region_size - 1) / 2.0

    @property
    def center_cols(self) -> np.ndarray:
        return np.mod(self.lefts + (self.region_size - 1) / 2.0, self.width)

    def region(self, index: int) -> Region:
        return Region(
            index=int(index),
            top=int(self.tops[index]),
            left=int(self.lefts[index]),
            center_row=float(self.center_rows[index]),
            center_col=float(self.center_cols[index]),
            mean_saliency=float(self.means[index]),
        )

    @property
    def regions(self) -> List[Region]:
        return [self.region(i) for i in range(len(self))]

    def center(self, index: int) -> SphericalPoint:
        """Spherical coordinates of a region center."""
        return erp_to_sphere(
            float(self.center_rows[index]),
            float(self.center_cols[index]),
            self.height,
            self.width,
        )


@dataclass(frozen=True)
class TangentViewport:
    """A rendered viewport plus the metadata the model consumes."""

    pixels: np.ndarray
    center: SphericalPoint
    plane: TangentPlane
    source_index: int = 0
    region_index: Optional[int] = None
    mean_saliency: Optional[float] = None

    def __post_init__(self):
        res = self.plane.resolution
        if self.pixels.shape != (res, res, 3):
            raise DomainError(
                f"viewport pixels {self.pixels.shape} do not match resolution {res}"
            )
        if self.center != self.plane.center:
            raise DomainError("viewport center differs from its plane center")


# ==================== Saliency smoothing ====================


def _disc_kernel(bandwidth: float) -> np.ndarray:
    reach = int(math.floor(bandwidth + 0.5))
    offsets = np.arange(-reach, reach + 1)
    inside = offsets[:, np.newaxis] ** 2 + offsets[np.newaxis, :] ** 2 <= (
        bandwidth + 0.5
    ) ** 2
    return inside / inside.sum()


def mean_shift_filter(
    saliency: SaliencyMap, bandwidth: float, iters: int, normalize: bool = True
) -> SaliencyMap:
    """
    Iterative flat-kernel mean-shift smoothing of a saliency map.

    Each pass replaces every value with the mean over the disc of radius
    ``bandwidth`` around it. Rows mirror at the poles and columns wrap, so
    mass supported away from the poles is preserved.

    Args:
        saliency: Input map
        bandwidth: Disc radius in pixels (>= 1)
        iters: Number of passes; 0 returns the input unchanged
        normalize: Rescale the result so its maximum is 1 (all-zero maps stay zero)

    Returns:
        The smoothed map
    """
    if bandwidth < 1:
        raise DomainError(f"mean-shift bandwidth {bandwidth} must be >= 1")
    if iters < 0:
        raise DomainError(f"mean-shift iterations {iters} must be >= 0")
    if iters == 0:
        return saliency

    kernel = _disc_kernel(bandwidth)
    reach = kernel.shape[0] // 2
    data = np.array(saliency.data)
    for _ in range(iters):
        padded = np.pad(data, ((reach, reach), (0, 0)), mode="symmetric")
        padded = np.pad(padded, ((0, 0), (reach, reach)), mode="wrap")
        data = correlate2d(padded, kernel, mode="valid")
    data = np.maximum(data, 0.0)

    peak = float(data.max())
    if normalize and peak > 0.0:
        data = data / peak
    return SaliencyMap(data)


# ==================== Region scoring ====================


def region_count(height: int, width: int, region_size: int, stride: int) -> int:
    """(floor((H - R) / S) + 1) * ceil(W / S); zero when R > H."""
    if region_size > height:
        return 0
    return ((height - region_size) // stride + 1) * math.ceil(width / stride)


def region_scores(saliency: SaliencyMap, region_size: int, stride: int) -> RegionGrid:
    """
    Mean saliency of every strided square region.

    Raises:
        EmptyGridError: If a region is taller than the map
        DomainError: For non-positive size or stride
    """
    if region_size < 1 or stride < 1:
        raise DomainError("region size and stride must be >= 1")
    height, width = saliency.height, saliency.width
    if region_size > height:
        raise EmptyGridError(
            f"region size {region_size} exceeds map height {height}"
        )

    padded = np.pad(saliency.data, ((0, 0), (0, region_size - 1)), mode="wrap")
    windows = sliding_window_view(padded, (region_size, region_size))
    windows = windows[::stride, ::stride]
    means = np.maximum(windows.mean(axis=(-2, -1)), 0.0)

    n_rows, n_cols = means.shape
    tops = np.repeat(np.arange(n_rows) * stride, n_cols)
    lefts = np.tile(np.arange(n_cols) * stride, n_rows)
    return RegionGrid(
        region_size=region_size,
        stride=stride,
        height=height,
        width=width,
        tops=tops,
        lefts=lefts,
        means=means.reshape(-1),
    )


# ==================== Region selection ====================


def selection_size(n_regions: int, fraction: float) -> int:
    """k = max(1, round(fraction * n)), rounding halves up."""
    if not 0.0 < fraction <= 1.0:
        raise DomainError(f"fraction {fraction} must be in (0, 1]")
    return max(1, int(math.floor(fraction * n_regions + 0.5)))


def select_regions(
    grid: RegionGrid, fraction: float, mode, seed: SeedLike = 0
) -> List[int]:
    """
    Indices of the selected regions, in selection order.

    An all-zero grid in saliency-weighted mode falls back to uniform sampling.

    Raises:
        EmptyGridError: If the grid has no regions
    """
    if len(grid) == 0:
        raise EmptyGridError("cannot select from an empty region grid")
    mode = SamplingMode(mode)
    k = selection_size(len(grid), fraction)
    selector_class = get_selector(mode)
    if mode is SamplingMode.SALIENCY_WEIGHTED and not np.any(grid.means > 0.0):
        logger.warning("Saliency is zero everywhere; sampling regions uniformly")
        selector_class = UniformSelector
    return selector_class(grid.means, as_rng(seed)).select(k)


def sample_regions(
    grid: RegionGrid, fraction: float, mode, seed: SeedLike = 0
) -> List[SphericalPoint]:
    """Centers of the selected regions on the sphere."""
    return [grid.center(i) for i in select_regions(grid, fraction, mode, seed)]


# ==================== Viewports ====================


def extract_viewport(
    image: ErpImage,
    center: SphericalPoint,
    fov: float,
    resolution: int,
    viewport_mode=ViewportMode.TANGENT,
    source_index: int = 0,
) -> TangentViewport:
    """
    Render one viewport centered at ``center``.

    Tangent mode samples the gnomonic grid bilinearly; erp-crop mode takes an
    axis-aligned block of ERP pixels.
    """
    plane = TangentPlane(center=center, fov=fov, resolution=resolution)
    extractor = get_extractor(viewport_mode)(image)
    return TangentViewport(
        pixels=extractor.extract(plane),
        center=center,
        plane=plane,
        source_index=source_index,
    )


def image_key(image: ErpImage) -> str:
    """Digest of the pixel data; the same image gets the same key under any path."""
    digest = hashlib.sha1(str(image.data.shape).encode("ascii"))
    digest.update(np.ascontiguousarray(image.data).tobytes())
    return digest.hexdigest()


def image_rng(
    seed: int, key: str, epoch: Optional[int] = None
) -> np.random.Generator:
    """Sampling stream for one image, independent of manifest order."""
    if epoch is None:
        return derive_rng(seed, "sample", key)
    return derive_rng(seed, "sample", key, epoch)


def sample_image(
    image: ErpImage,
    saliency: Optional[SaliencyMap],
    config: SamplerConfig,
    source_index: int = 0,
    seed: Optional[SeedLike] = None,
) -> List[TangentViewport]:
    """
    Sample viewports from one panorama.

    Args:
        image: The panorama
        saliency: Saliency map, or None for the baseline contrast map
        config: Sampler settings
        source_index: Source-image index shared by every viewport
        seed: Generator or seed; defaults to ``config.seed``

    Returns:
        Viewports in selection order

    Raises:
        DimensionMismatchError: If the saliency map cannot be aligned
        EmptyGridError: If the image is shorter than one region
    """
    if saliency is None:
        saliency = baseline_saliency(image)
    saliency = align_saliency(saliency, image)
    smoothed = mean_shift_filter(
        saliency, config.mean_shift_bandwidth, config.mean_shift_iters
    )
    grid = region_scores(smoothed, config.region_size, config.stride)
    rng = as_rng(config.seed if seed is None else seed)
    selected = select_regions(grid, config.fraction, config.mode, rng)

    extractor = get_extractor(config.viewport_mode)(image)
    viewports = []
    for index in selected:
        center = grid.center(index)
        plane = TangentPlane(
            center=center, fov=config.fov, resolution=config.resolution
        )
        viewports.append(
            TangentViewport(
                pixels=extractor.extract(plane),
                center=center,
                plane=plane,
                source_index=source_index,
                region_index=index,
                mean_saliency=float(grid.means[index]),
            )
        )
    logger.debug(
        f"Sampled {len(viewports)} of {len(grid)} regions "
        f"({SamplingMode(config.mode).value}, "
        f"{ViewportMode(config.viewport_mode).value})"
    )
    return viewports
