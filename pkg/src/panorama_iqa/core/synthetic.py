"""
Procedural panoramas with graded distortions.

Scenes are smooth colour fields plus sinusoidal texture, a few coloured
spherical caps and grey band-limited noise at several pixel scales. Every term
is periodic in longitude, so the ERP seam is invisible. The noise bands have a
fixed strength in every scene, so each blur level removes the same detail
wherever a viewport lands. Each scene is degraded at several levels per
distortion kind and labelled MOS = levels - level.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from scipy.ndimage import gaussian_filter1d
from tqdm import tqdm

from panorama_iqa.core.imageio import (
    DatasetManifest,
    ErpImage,
    ManifestEntry,
    save_image,
    write_manifest,
)
from panorama_iqa.core.seeding import derive_rng
from panorama_iqa.core.sphere import erp_to_sphere_array

logger = logging.getLogger(__name__)

DISTORTION_KINDS = ("blur", "noise")

MANIFEST_NAME = "manifest.jsonl"

# Gaussian widths in ERP pixels of the fine texture bands, and their strength
TEXTURE_SCALES = (0.7, 1.5, 3.0)
TEXTURE_AMPLITUDE = 0.08


@dataclass(frozen=True)
class SyntheticConfig:
    n_scenes: int = 8
    height: int = 128
    width: int = 256
    levels: int = 5
    kinds: Tuple[str, ...] = ("blur",)
    blur_step: float = 1.0
    noise_step: float = 0.03

    def validate(self) -> "SyntheticConfig":
        if self.n_scenes < 1 or self.levels < 1 or self.height < 1 or self.width < 1:
            raise ValueError("scene count, levels and dimensions must be >= 1")
        unknown = set(self.kinds) - set(DISTORTION_KINDS)
        if unknown or not self.kinds:
            raise ValueError(f"distortion kinds must be drawn from {DISTORTION_KINDS}")
        return self


def fine_texture(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """
    Sum of unit-variance filtered white noise, one band per ``TEXTURE_SCALES``.

    Rows reflect at the poles and columns wrap, as in ``gaussian_blur``.
    """
    texture = np.zeros((height, width))
    for scale in TEXTURE_SCALES:
        band = gaussian_filter1d(
            rng.standard_normal((height, width)), scale, axis=0, mode="reflect"
        )
        band = gaussian_filter1d(band, scale, axis=1, mode="wrap")
        std = band.std()
        if std > 0:
            texture += TEXTURE_AMPLITUDE * (band - band.mean()) / std
    return texture


def generate_scene(height: int, width: int, rng: np.random.Generator) -> ErpImage:
    """One random longitude-periodic RGB panorama."""
    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    lat, lon = erp_to_sphere_array(rows, cols, height, width)

    image = np.empty((height, width, 3))
    for channel in range(3):
        field = rng.uniform(0.3, 0.7) * np.ones((height, width))
        # low-frequency shading
        for _ in range(3):
            m = rng.integers(0, 3)
            phase = rng.uniform(0, 2 * math.pi)
            bands = rng.integers(1, 3)
            amplitude = rng.uniform(0.05, 0.15)
            field += amplitude * np.sin(m * lon + phase) * np.cos(bands * lat)
        # texture that blur removes
        for _ in range(2):
            m = rng.integers(max(1, width // 16), max(2, width // 6))
            n = rng.uniform(height / 16, height / 6)
            field += rng.uniform(0.05, 0.12) * np.sin(
                m * lon + n * lat + rng.uniform(0, 2 * math.pi)
            )
        image[..., channel] = field

    x, y, z = np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)
    for _ in range(rng.integers(1, 5)):
        cap_lat = math.asin(rng.uniform(-0.8, 0.8))
        cap_lon = rng.uniform(-math.pi, math.pi)
        cosine = (
            math.cos(cap_lat) * math.cos(cap_lon) * x
            + math.cos(cap_lat) * math.sin(cap_lon) * y
            + math.sin(cap_lat) * z
        )
        inside = cosine > math.cos(rng.uniform(0.15, 0.4))
        image[inside] = rng.uniform(0.0, 1.0, size=3)

    image += fine_texture(height, width, rng)[..., np.newaxis]

    return ErpImage(np.clip(image, 0.0, 1.0))


def gaussian_blur(image: ErpImage, sigma: float) -> ErpImage:
    """Separable Gaussian blur; rows reflect at the poles, columns wrap."""
    if sigma <= 0:
        return image
    data = gaussian_filter1d(image.data, sigma, axis=0, mode="reflect")
    data = gaussian_filter1d(data, sigma, axis=1, mode="wrap")
    return ErpImage(np.clip(data, 0.0, 1.0))


def gaussian_noise(image: ErpImage, sigma: float, rng: np.random.Generator) -> ErpImage:
    """Additive white Gaussian noise, clipped to [0, 1]."""
    noisy = image.data + rng.normal(0.0, sigma, size=image.data.shape)
    return ErpImage(np.clip(noisy, 0.0, 1.0))


def distort(
    image: ErpImage,
    kind: str,
    level: int,
    config: SyntheticConfig,
    rng: np.random.Generator,
) -> ErpImage:
    """
    Apply distortion ``kind`` at ``level`` (0 = mildest).

    Strength grows linearly: sigma = step * (level + 1).
    """
    if not 0 <= level < config.levels:
        raise ValueError(f"level {level} outside 0..{config.levels - 1}")
    if kind == "blur":
        return gaussian_blur(image, config.blur_step * (level + 1))
    if kind == "noise":
        return gaussian_noise(image, config.noise_step * (level + 1), rng)
    raise ValueError(f"unknown distortion kind {kind!r}")


def build_synthetic_dataset(
    out_dir: Union[str, Path],
    config: SyntheticConfig = SyntheticConfig(),
    seed: int = 0,
    show_progress: bool = False,
) -> DatasetManifest:
    """
    Write distorted scenes as PPM files plus ``manifest.jsonl`` into ``out_dir``.

    Returns:
        The manifest that was written
    """
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    with tqdm(
        total=config.n_scenes,
        desc="Generating scenes",
        unit="scene",
        disable=not show_progress,
    ) as pbar:
        for scene in range(config.n_scenes):
            scene_id = f"scene{scene:02d}"
            scene_rng = derive_rng(seed, scene_id)
            pristine = generate_scene(config.height, config.width, scene_rng)
            for kind in config.kinds:
                for level in range(config.levels):
                    rng = derive_rng(seed, scene_id, kind, level)
                    name = f"{scene_id}_{kind}{level}.ppm"
                    distorted = distort(pristine, kind, level, config, rng)
                    save_image(distorted, out_dir / name)
                    entries.append(
                        ManifestEntry(
                            image_path=name,
                            mos=float(config.levels - level),
                            distortion_label=kind,
                            scene_id=scene_id,
                        )
                    )
            pbar.update(1)

    manifest = DatasetManifest(tuple(entries), out_dir)
    write_manifest(manifest, out_dir / MANIFEST_NAME)
    logger.info(f"Wrote {len(entries)} synthetic images to {out_dir}")
    return manifest
