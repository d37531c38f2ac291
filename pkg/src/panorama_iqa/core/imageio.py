"""
Image, saliency and dataset ingestion.

Reads and writes Netpbm rasters (PPM for RGB panoramas, PGM for saliency
maps), resamples them bilinearly with ERP topology (longitude wraps, latitude
clamps), computes a contrast-based fallback saliency map, and handles
JSON-lines dataset manifests and the scene-disjoint train/test split.
"""

import json
import logging
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
from scipy.ndimage import uniform_filter1d

from panorama_iqa.core.seeding import derive_rng
from panorama_iqa.exceptions import (
    DimensionMismatchError,
    DuplicateEntryError,
    ImageNotFoundError,
    MalformedHeaderError,
    ManifestParseError,
    SplitError,
    TruncatedDataError,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, "os.PathLike[str]"]

# ==================== Constants ====================

RGB_MAGICS = {b"P6": "binary", b"P3": "ascii"}
GRAY_MAGICS = {b"P5": "binary", b"P2": "ascii"}

MAX_MAXVAL = 65535

# Rec. 601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

BASELINE_BOX_SIZE = 9
CONTRAST_FLOOR = 1e-12

_HEADER_TOKEN = re.compile(rb"(?:\s|#[^\r\n]*)*(\S+)")
_COMMENT = re.compile(rb"#[^\r\n]*")


# ==================== Raster types ====================


def _frozen_array(data: Any) -> np.ndarray:
    array = np.array(data, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class ErpImage:
    """Equirectangular RGB raster, values in [0, 1], shape (height, width, 3)."""

    data: np.ndarray

    def __post_init__(self):
        data = _frozen_array(self.data)
        if data.ndim != 3 or data.shape[2] != 3 or min(data.shape[:2]) < 1:
            raise DimensionMismatchError(
                f"ERP image must have shape (H, W, 3), got {data.shape}"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("ERP image contains non-finite values")
        if data.min() < 0.0 or data.max() > 1.0:
            raise ValueError("ERP image values must lie in [0, 1]")
        if data.shape[1] != 2 * data.shape[0]:
            logger.warning(
                f"ERP image is {data.shape[1]}x{data.shape[0]}; "
                "equirectangular panoramas are normally 2:1"
            )
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 3


@dataclass(frozen=True)
class SaliencyMap:
    """Single-channel non-negative raster, shape (height, width)."""

    data: np.ndarray

    def __post_init__(self):
        data = _frozen_array(self.data)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise DimensionMismatchError(
                f"saliency map must have shape (H, W), got {data.shape}"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("saliency map contains non-finite values")
        if data.min() < 0.0:
            raise ValueError("saliency values must be non-negative")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def is_zero(self) -> bool:
        return not np.any(self.data > 0.0)


# ==================== Netpbm ====================


def _read_bytes(path: PathLike) -> bytes:
    try:
        with open(path, "rb") as handle:
            return handle.read()
    except FileNotFoundError:
        raise ImageNotFoundError(f"no such file: {path}")


def _parse_header(raw: bytes, magics: Dict[bytes, str], path: PathLike):
    """Return (encoding, width, height, maxval, body_offset)."""
    magic = raw[:2]
    if magic not in magics:
        expected = "/".join(m.decode() for m in magics)
        raise MalformedHeaderError(f"{path}: expected magic {expected}, got {magic!r}")

    values = []
    pos = 2
    for name in ("width", "height", "maxval"):
        match = _HEADER_TOKEN.match(raw, pos)
        if match is None:
            raise MalformedHeaderError(f"{path}: header ends before {name}")
        token = match.group(1)
        if not token.isdigit():
            raise MalformedHeaderError(f"{path}: invalid {name} {token!r}")
        values.append(int(token))
        pos = match.end()

    width, height, maxval = values
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"{path}: dimensions must be positive")
    if not 1 <= maxval <= MAX_MAXVAL:
        raise MalformedHeaderError(f"{path}: maxval {maxval} outside 1..{MAX_MAXVAL}")

    encoding = magics[magic]
    if encoding == "binary":
        if pos >= len(raw) or not raw[pos : pos + 1].isspace():
            if pos >= len(raw):
                raise TruncatedDataError(f"{path}: no pixel data")
            raise MalformedHeaderError(f"{path}: missing whitespace after maxval")
        pos += 1
    return encoding, width, height, maxval, pos


def _read_netpbm(path: PathLike, magics: Dict[bytes, str], channels: int) -> np.ndarray:
    raw = _read_bytes(path)
    if not raw:
        raise MalformedHeaderError(f"{path}: empty file")
    encoding, width, height, maxval, offset = _parse_header(raw, magics, path)
    count = width * height * channels

    if encoding == "binary":
        dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
        needed = count * dtype.itemsize
        if len(raw) - offset < needed:
            raise TruncatedDataError(
                f"{path}: expected {needed} bytes of pixel data, "
                f"found {len(raw) - offset}"
            )
        samples = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    else:
        tokens = _COMMENT.sub(b" ", raw[offset:]).split()
        if len(tokens) < count:
            raise TruncatedDataError(
                f"{path}: expected {count} samples, found {len(tokens)}"
            )
        try:
            samples = np.array([int(token) for token in tokens[:count]], dtype=np.int64)
        except ValueError:
            raise MalformedHeaderError(f"{path}: non-integer sample in ASCII data")

    if samples.max(initial=0) > maxval:
        raise MalformedHeaderError(f"{path}: sample exceeds maxval {maxval}")

    shape = (height, width, channels) if channels > 1 else (height, width)
    return samples.astype(np.float64).reshape(shape) / maxval


def _write_netpbm(path: PathLike, magic: bytes, samples: np.ndarray) -> None:
    quantised = np.rint(np.clip(samples, 0.0, 1.0) * 255.0).astype(np.uint8)
    height, width = samples.shape[:2]
    header = magic + f"\n{width} {height}\n255\n".encode("ascii")
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(quantised.tobytes())


def load_image(path: PathLike) -> ErpImage:
    """
    Load an RGB panorama from a PPM file (P6 or P3).

    Raises:
        ImageNotFoundError: The file does not exist
        MalformedHeaderError: Empty file, wrong magic or bad header fields
        TruncatedDataError: Fewer samples than the header announces
    """
    image = ErpImage(_read_netpbm(path, RGB_MAGICS, channels=3))
    logger.debug(f"Loaded {path} ({image.width}x{image.height})")
    return image


def load_saliency(path: PathLike) -> SaliencyMap:
    """Load a saliency map from a PGM file (P5 or P2)."""
    return SaliencyMap(_read_netpbm(path, GRAY_MAGICS, channels=1))


def save_rgb_array(data: np.ndarray, path: PathLike) -> None:
    """Write any (H, W, 3) array in [0, 1] as a binary PPM (P6, maxval 255)."""
    _write_netpbm(path, b"P6", np.asarray(data, dtype=np.float64))


def save_image(image: ErpImage, path: PathLike) -> None:
    save_rgb_array(image.data, path)


def save_saliency(saliency: SaliencyMap, path: PathLike) -> None:
    """Write a binary PGM (P5, maxval 255); maps with max > 1 are scaled."""
    data = saliency.data
    peak = float(data.max())
    if peak > 1.0:
        data = data / peak
    _write_netpbm(path, b"P5", data)


# ==================== Resampling ====================


def bilinear_sample_array(data: np.ndarray, rows, cols) -> np.ndarray:
    """
    Bilinearly sample ``data`` (H, W[, C]) at continuous pixel coordinates.

    Columns wrap modulo W and rows clamp to [0, H - 1]. The result has the
    broadcast shape of ``rows``/``cols`` followed by any channel axis.
    """
    height, width = data.shape[:2]
    rows = np.clip(np.asarray(rows, dtype=np.float64), 0.0, height - 1)
    cols = np.mod(np.asarray(cols, dtype=np.float64), width)
    rows, cols = np.broadcast_arrays(rows, cols)

    r0 = np.floor(rows)
    c0 = np.floor(cols)
    fr = rows - r0
    fc = cols - c0
    r0 = r0.astype(np.intp)
    c0 = c0.astype(np.intp) % width
    r1 = np.minimum(r0 + 1, height - 1)
    c1 = (c0 + 1) % width

    if data.ndim == 3:
        fr = fr[..., np.newaxis]
        fc = fc[..., np.newaxis]
    top = (1.0 - fc) * data[r0, c0] + fc * data[r0, c1]
    bottom = (1.0 - fc) * data[r1, c0] + fc * data[r1, c1]
    return (1.0 - fr) * top + fr * bottom


def bilinear_sample(image: ErpImage, row: float, col: float) -> np.ndarray:
    """RGB value at a continuous pixel coordinate (see bilinear_sample_array)."""
    return bilinear_sample_array(image.data, row, col)


def resize_saliency(saliency: SaliencyMap, height: int, width: int) -> SaliencyMap:
    """Bilinearly resample a saliency map to ``height`` x ``width``."""
    rows = (np.arange(height) + 0.5) * saliency.height / height - 0.5
    cols = (np.arange(width) + 0.5) * saliency.width / width - 0.5
    grid_rows, grid_cols = np.meshgrid(rows, cols, indexing="ij")
    resampled = bilinear_sample_array(saliency.data, grid_rows, grid_cols)
    return SaliencyMap(np.maximum(resampled, 0.0))


def align_saliency(saliency: SaliencyMap, image: ErpImage) -> SaliencyMap:
    """
    Bring a saliency map to the image's resolution.

    Identical dimensions pass through; a smaller map with the same aspect
    ratio is upscaled bilinearly.

    Raises:
        DimensionMismatchError: Larger map or different aspect ratio
    """
    if (saliency.height, saliency.width) == (image.height, image.width):
        return saliency
    same_aspect = saliency.height * image.width == image.height * saliency.width
    smaller = saliency.height <= image.height and saliency.width <= image.width
    if not (same_aspect and smaller):
        raise DimensionMismatchError(
            f"saliency map {saliency.width}x{saliency.height} cannot be aligned "
            f"with image {image.width}x{image.height}"
        )
    logger.debug(
        f"Upscaling saliency {saliency.width}x{saliency.height} "
        f"to {image.width}x{image.height}"
    )
    return resize_saliency(saliency, image.height, image.width)


def luminance(image: ErpImage) -> np.ndarray:
    return image.data @ LUMA_WEIGHTS


def baseline_saliency(
    image: ErpImage, box_size: int = BASELINE_BOX_SIZE
) -> SaliencyMap:
    """
    Local luminance contrast: |Y - box_blur(Y)| with a ``box_size`` window.

    The blur mirrors at the poles and wraps in longitude. A constant image
    yields an all-zero map.
    """
    luma = luminance(image)
    blurred = uniform_filter1d(luma, box_size, axis=0, mode="reflect")
    blurred = uniform_filter1d(blurred, box_size, axis=1, mode="wrap")
    contrast = np.abs(luma - blurred)
    # box sums leave rounding residue on flat areas
    contrast[contrast <= CONTRAST_FLOOR] = 0.0
    return SaliencyMap(contrast)


# ==================== Dataset manifests ====================


@dataclass(frozen=True)
class ManifestEntry:
    """One rated image. Paths are kept as written in the manifest."""

    image_path: str
    mos: float
    distortion_label: str
    scene_id: str
    saliency_path: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "image_path": self.image_path,
            "saliency_path": self.saliency_path,
            "mos": self.mos,
            "distortion_label": self.distortion_label,
            "scene_id": self.scene_id,
        }


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered manifest entries plus the directory relative paths resolve against."""

    entries: Tuple[ManifestEntry, ...]
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "base_dir", Path(self.base_dir))
        seen = set()
        for entry in self.entries:
            if entry.image_path in seen:
                raise DuplicateEntryError(f"duplicate image_path {entry.image_path!r}")
            seen.add(entry.image_path)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def scene_ids(self) -> List[str]:
        return sorted({entry.scene_id for entry in self.entries})

    @property
    def distortion_labels(self) -> List[str]:
        return sorted({entry.distortion_label for entry in self.entries})

    def resolve(self, path: str) -> Path:
        candidate = Path(path)
        return candidate if candidate.is_absolute() else self.base_dir / candidate

    def image_file(self, entry: ManifestEntry) -> Path:
        return self.resolve(entry.image_path)

    def saliency_file(self, entry: ManifestEntry) -> Optional[Path]:
        if entry.saliency_path is None:
            return None
        return self.resolve(entry.saliency_path)

    def subset(self, entries: Iterable[ManifestEntry]) -> "DatasetManifest":
        return DatasetManifest(tuple(entries), self.base_dir)


def _require_str(record: Dict[str, Any], name: str, line_number: int) -> str:
    if name not in record:
        raise ManifestParseError(f"missing field {name!r}", line_number)
    value = record[name]
    if not isinstance(value, str) or not value:
        raise ManifestParseError(
            f"field {name!r} must be a non-empty string", line_number
        )
    return value


def parse_manifest_line(line: str, line_number: int) -> ManifestEntry:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise ManifestParseError(f"invalid JSON ({e.msg})", line_number)
    if not isinstance(record, dict):
        raise ManifestParseError("expected a JSON object", line_number)

    if "mos" not in record:
        raise ManifestParseError("missing field 'mos'", line_number)
    mos = record["mos"]
    numeric = isinstance(mos, (int, float)) and not isinstance(mos, bool)
    if not numeric or not math.isfinite(mos):
        raise ManifestParseError("field 'mos' must be a finite number", line_number)

    saliency_path = record.get("saliency_path")
    bad_path = not isinstance(saliency_path, str) or not saliency_path
    if saliency_path is not None and bad_path:
        raise ManifestParseError(
            "field 'saliency_path' must be a non-empty string or null", line_number
        )

    label = record.get("distortion_label")
    if not isinstance(label, str):
        raise ManifestParseError(
            "field 'distortion_label' must be a string", line_number
        )

    return ManifestEntry(
        image_path=_require_str(record, "image_path", line_number),
        saliency_path=saliency_path,
        mos=float(mos),
        distortion_label=label,
        scene_id=_require_str(record, "scene_id", line_number),
    )


def load_manifest(path: PathLike) -> DatasetManifest:
    """
    Parse a JSON-lines manifest.

    Raises:
        ImageNotFoundError: The manifest file does not exist
        ManifestParseError: A line is malformed (the error names the line)
        DuplicateEntryError: An image path appears twice
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ImageNotFoundError(f"no such manifest: {path}")

    entries = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        entries.append(parse_manifest_line(line, line_number))

    manifest = DatasetManifest(tuple(entries), path.parent)
    logger.info(
        f"Loaded manifest {path}: {len(manifest)} images, "
        f"{len(manifest.scene_ids)} scenes"
    )
    return manifest


def write_manifest(manifest: DatasetManifest, path: PathLike) -> None:
    """
    Write a manifest as sorted-key JSON lines.

    Relative paths are rewritten against the new file's directory so the
    written manifest points at the same files.
    """
    path = Path(path)
    target_dir = path.parent.resolve()
    same_dir = manifest.base_dir.resolve() == target_dir

    def relocate(value: Optional[str]) -> Optional[str]:
        if value is None or same_dir or Path(value).is_absolute():
            return value
        absolute = (manifest.base_dir / value).resolve()
        return Path(os.path.relpath(absolute, target_dir)).as_posix()

    lines = []
    for entry in manifest.entries:
        record = entry.to_dict()
        record["image_path"] = relocate(entry.image_path)
        record["saliency_path"] = relocate(entry.saliency_path)
        lines.append(json.dumps(record, sort_keys=True))
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def split_dataset(
    manifest: DatasetManifest, train_fraction: float = 0.8, seed: int = 0
) -> Tuple[DatasetManifest, DatasetManifest]:
    """
    Split a manifest into train/test along scene ids.

    Every distorted version of a scene lands in the same split, so no test
    scene is seen in training.

    Args:
        manifest: The full dataset
        train_fraction: Share of scenes for training (rounded up)
        seed: Seed for the scene shuffle

    Returns:
        (train manifest, test manifest), each preserving manifest order

    Raises:
        SplitError: Fewer than two scenes, or a fraction outside (0, 1)
    """
    scenes = manifest.scene_ids
    if len(scenes) < 2:
        raise SplitError(f"need at least 2 scenes to split, found {len(scenes)}")
    if not 0.0 < train_fraction < 1.0:
        raise SplitError(f"train fraction {train_fraction} must lie in (0, 1)")

    order = derive_rng(seed, "split").permutation(len(scenes))
    n_train = math.ceil(train_fraction * len(scenes) - 1e-9)
    n_train = min(max(n_train, 1), len(scenes) - 1)
    train_scenes = {scenes[i] for i in order[:n_train]}

    train = manifest.subset(e for e in manifest.entries if e.scene_id in train_scenes)
    test = manifest.subset(
        e for e in manifest.entries if e.scene_id not in train_scenes
    )
    logger.info(
        f"Split {len(scenes)} scenes into {n_train} train / "
        f"{len(scenes) - n_train} test ({len(train)} / {len(test)} images)"
    )
    return train, test
