"""
Viewport quality transformer.

A small vision transformer that scores one tangent viewport at a time:
patch encoder (linear or a two-stage conv stack), a CLS token, positional,
geometric (viewport center) and source (parent image) embeddings, pre-norm
encoder blocks and a linear quality head. Image scores are the mean of the
viewport scores.

All arithmetic runs in float64 on the CPU.
"""

import logging
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch import nn

from panorama_iqa.core.seeding import derive_int
from panorama_iqa.exceptions import (
    CheckpointError,
    ConfigMismatchError,
    EmptyInputError,
    NumericOverflowError,
    PatchSizeError,
    ShapeMismatchError,
    SourceIndexError,
    TooManyPatchesError,
)
from panorama_iqa.settings import Activation, EncoderKind, ModelConfig, config_from_dict

logger = logging.getLogger(__name__)

DTYPE = torch.float64

CHECKPOINT_FORMAT = "panorama-iqa-checkpoint"
CHECKPOINT_VERSION = 1

LAYER_NORM_EPS = 1e-5

CONV_CHANNELS = (16, 32)


def _check_finite(tensor: torch.Tensor, stage: str) -> torch.Tensor:
    if not torch.isfinite(tensor).all():
        raise NumericOverflowError(f"non-finite values after {stage}")
    return tensor


def _activation(kind: Activation) -> nn.Module:
    return nn.GELU() if Activation(kind) is Activation.GELU else nn.ReLU()


# ==================== Patch encoders ====================


class LinearPatchEncoder(nn.Module):
    """Flatten each P x P x 3 patch (row-major, channels last) and map it to D."""

    def __init__(self, patch_size: int, token_dim: int):
        super().__init__()
        self.proj = nn.Linear(patch_size * patch_size * 3, token_dim, dtype=DTYPE)

    def forward(self, patches: torch.Tensor) -> torch.Tensor:
        return self.proj(patches.flatten(start_dim=-3))


class ConvPatchEncoder(nn.Module):
    """Two 3x3 conv stages (16 then 32 channels), each activated and 2x pooled."""

    def __init__(self, patch_size: int, token_dim: int, activation: Activation):
        super().__init__()
        first, second = CONV_CHANNELS
        self.features = nn.Sequential(
            nn.Conv2d(3, first, kernel_size=3, padding=1, dtype=DTYPE),
            _activation(activation),
            nn.AvgPool2d(2),
            nn.Conv2d(first, second, kernel_size=3, padding=1, dtype=DTYPE),
            _activation(activation),
            nn.AvgPool2d(2),
        )
        self.proj = nn.Linear(second * (patch_size // 4) ** 2, token_dim, dtype=DTYPE)

    def forward(self, patches: torch.Tensor) -> torch.Tensor:
        leading = patches.shape[:-3]
        images = patches.reshape(-1, *patches.shape[-3:]).permute(0, 3, 1, 2)
        features = self.features(images).flatten(start_dim=1)
        return self.proj(features).reshape(*leading, -1)


# ==================== Encoder blocks ====================


class SelfAttention(nn.Module):
    """Multi-head scaled dot-product self-attention."""

    def __init__(self, token_dim: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = token_dim // n_heads
        self.qkv = nn.Linear(token_dim, 3 * token_dim, dtype=DTYPE)
        self.proj = nn.Linear(token_dim, token_dim, dtype=DTYPE)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        batch, length, dim = x.shape
        qkv = self.qkv(x).reshape(batch, length, 3, self.n_heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        weights = torch.softmax(scores, dim=-1)
        mixed = (weights @ v).transpose(1, 2).reshape(batch, length, dim)
        return self.proj(mixed), weights


class EncoderBlock(nn.Module):
    """Pre-norm block: x + MHSA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        dim = config.token_dim
        self.norm1 = nn.LayerNorm(dim, eps=LAYER_NORM_EPS, dtype=DTYPE)
        self.attention = SelfAttention(dim, config.n_heads)
        self.norm2 = nn.LayerNorm(dim, eps=LAYER_NORM_EPS, dtype=DTYPE)
        self.mlp = nn.Sequential(
            nn.Linear(dim, config.mlp_dim, dtype=DTYPE),
            _activation(config.activation),
            nn.Linear(config.mlp_dim, dim, dtype=DTYPE),
        )

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        attended, weights = self.attention(self.norm1(x))
        x = x + attended
        x = x + self.mlp(self.norm2(x))
        return x, weights


# ==================== Model ====================


@dataclass
class TokenSequence:
    """Token matrices with the CLS token in row 0, shape (batch, 1 + n_patches, D)."""

    tokens: torch.Tensor
    n_patches: int

    def __post_init__(self):
        if self.tokens.shape[-2] != self.n_patches + 1:
            raise ShapeMismatchError(
                f"{self.tokens.shape[-2]} token rows for {self.n_patches} patches"
            )


class QualityTransformer(nn.Module):
    """
    Scores viewports from pixels, centers and source indices.

    The last row of the source table is the "unknown source" row used for
    images that were not in the training set.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        dim = config.token_dim

        if EncoderKind(config.encoder_kind) is EncoderKind.LINEAR:
            self.encoder = LinearPatchEncoder(config.patch_size, dim)
        else:
            self.encoder = ConvPatchEncoder(config.patch_size, dim, config.activation)
        self.cls_token = nn.Parameter(torch.zeros(dim, dtype=DTYPE))
        self.positional = nn.Parameter(
            torch.zeros(config.max_patches, dim, dtype=DTYPE)
        )
        self.geometric = nn.Linear(2, dim, bias=False, dtype=DTYPE)
        self.source_table = nn.Parameter(
            torch.zeros(config.n_sources + 1, dim, dtype=DTYPE)
        )
        self.blocks = nn.ModuleList(
            EncoderBlock(config) for _ in range(config.n_layers)
        )
        self.final_norm = nn.LayerNorm(dim, eps=LAYER_NORM_EPS, dtype=DTYPE)
        self.head = nn.Linear(dim, 1, dtype=DTYPE)

        self.reset_parameters(seed)

    @property
    def unknown_source_index(self) -> int:
        return self.config.n_sources

    @torch.no_grad()
    def reset_parameters(self, seed: int = 0) -> None:
        """
        Seeded initialisation.

        Patch-encoder weights ~ N(0, 1/fan_in); other weights and tables
        ~ N(0, init_std); biases and CLS zero; LayerNorm scale one.
        """
        generator = torch.Generator().manual_seed(derive_int(seed, "init") % (2**63))
        std = self.config.init_std
        for name, param in self.named_parameters():
            if name == "cls_token" or name.endswith(".bias"):
                param.zero_()
            elif "norm" in name:
                param.fill_(1.0)
            else:
                noise = torch.randn(param.shape, generator=generator, dtype=DTYPE)
                if name.startswith("encoder.") and param.dim() > 1:
                    fan_in = param[0].numel()
                    param.copy_(noise / math.sqrt(fan_in))
                else:
                    param.copy_(noise * std)

    # ---------- stages ----------

    def n_patches_for(self, resolution: int) -> int:
        if resolution % self.config.patch_size:
            raise PatchSizeError(
                f"resolution {resolution} is not divisible by patch size "
                f"{self.config.patch_size}"
            )
        n_patches = (resolution // self.config.patch_size) ** 2
        if n_patches > self.config.max_patches:
            raise TooManyPatchesError(
                f"{n_patches} patches exceed the positional table "
                f"({self.config.max_patches})"
            )
        return n_patches

    def encode(self, patches: torch.Tensor) -> torch.Tensor:
        size = self.config.patch_size
        if tuple(patches.shape[-3:]) != (size, size, 3):
            raise ShapeMismatchError(
                f"patches of shape {tuple(patches.shape[-3:])}, expected "
                f"({size}, {size}, 3)"
            )
        return _check_finite(self.encoder(patches), "patch encoding")

    def embed(
        self,
        tokens: torch.Tensor,
        centers: torch.Tensor,
        source_indices: torch.Tensor,
    ) -> TokenSequence:
        """
        Add positional, geometric and source embeddings, then prepend CLS.

        Args:
            tokens: (batch, n_patches, D) patch tokens
            centers: (batch, 2) viewport centers as (lat, lon) in radians
            source_indices: (batch,) rows of the source table
        """
        batch, n_patches, dim = tokens.shape
        if dim != self.config.token_dim:
            raise ShapeMismatchError(f"token width {dim} != {self.config.token_dim}")
        if n_patches > self.config.max_patches:
            raise TooManyPatchesError(
                f"{n_patches} patches exceed the positional table "
                f"({self.config.max_patches})"
            )
        source_indices = torch.as_tensor(source_indices, dtype=torch.long)
        if source_indices.numel() and (
            source_indices.min() < 0 or source_indices.max() > self.unknown_source_index
        ):
            raise SourceIndexError(
                f"source index outside 0..{self.unknown_source_index}"
            )

        embedded = tokens + self.positional[:n_patches]
        if self.config.use_geometric_embedding:
            scale = torch.tensor([math.pi / 2, math.pi], dtype=DTYPE)
            embedded = embedded + self.geometric(centers / scale)[:, None, :]
        if self.config.use_source_embedding:
            embedded = embedded + self.source_table[source_indices][:, None, :]
        cls = self.cls_token.expand(batch, 1, dim)
        sequence = torch.cat([cls, embedded], dim=1)
        return TokenSequence(_check_finite(sequence, "embedding"), n_patches)

    def encode_sequence(
        self, sequence: TokenSequence, return_attention: bool = False
    ) -> Union[torch.Tensor, Tuple[torch.Tensor, List[torch.Tensor]]]:
        """Run the encoder blocks; returns the normalised CLS row (batch, D)."""
        x = sequence.tokens
        attention = []
        for i, block in enumerate(self.blocks):
            x, weights = block(x)
            _check_finite(x, f"encoder block {i}")
            attention.append(weights)
        cls = _check_finite(self.final_norm(x[:, 0]), "final layer norm")
        if return_attention:
            return cls, attention
        return cls

    def forward(
        self,
        pixels: torch.Tensor,
        centers: torch.Tensor,
        source_indices: torch.Tensor,
    ) -> torch.Tensor:
        """Scores for a batch of viewports, shape (batch,)."""
        square = pixels.dim() == 4 and pixels.shape[1] == pixels.shape[2]
        if not square or pixels.shape[3] != 3:
            raise ShapeMismatchError(
                f"expected (batch, res, res, 3) pixels, got {tuple(pixels.shape)}"
            )
        self.n_patches_for(pixels.shape[1])
        tokens = self.encode(patchify(pixels, self.config.patch_size))
        sequence = self.embed(tokens, centers, source_indices)
        cls = self.encode_sequence(sequence)
        return _check_finite(self.head(cls).squeeze(-1), "quality head")

    def snapshot(self) -> "QualityTransformer":
        """Frozen copy for scoring while the original keeps training."""
        clone = QualityTransformer(self.config)
        clone.load_state_dict(self.state_dict())
        clone.requires_grad_(False)
        return clone.eval()


# ==================== Functional API ====================


def patchify(pixels, patch_size: int) -> torch.Tensor:
    """
    Split (..., res, res, 3) viewports into row-major P x P patches.

    Returns:
        Tensor of shape (..., (res / P) ** 2, P, P, 3)

    Raises:
        PatchSizeError: If res is not divisible by P
    """
    pixels = torch.as_tensor(pixels, dtype=DTYPE)
    height, width = pixels.shape[-3], pixels.shape[-2]
    if height % patch_size or width % patch_size:
        raise PatchSizeError(
            f"viewport {height}x{width} is not divisible by patch size {patch_size}"
        )
    leading = pixels.shape[:-3]
    rows, cols = height // patch_size, width // patch_size
    grid = pixels.reshape(*leading, rows, patch_size, cols, patch_size, 3)
    grid = grid.transpose(-4, -3)
    return grid.reshape(*leading, rows * cols, patch_size, patch_size, 3)


def encode_patches(model: QualityTransformer, patches: torch.Tensor) -> torch.Tensor:
    return model.encode(patches)


def add_embeddings(
    model: QualityTransformer,
    tokens: torch.Tensor,
    center,
    source_index: int,
) -> TokenSequence:
    """Embed the patch tokens of one viewport; ``center`` is a SphericalPoint."""
    centers = torch.tensor([[center.lat, center.lon]], dtype=DTYPE)
    return model.embed(tokens[None], centers, torch.tensor([source_index]))


def transformer_forward(
    model: QualityTransformer, sequence: TokenSequence, return_attention: bool = False
):
    return model.encode_sequence(sequence, return_attention=return_attention)


def viewport_tensors(
    viewports: Sequence,
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Stack viewports into (pixels, centers, source indices) tensors."""
    pixels = torch.as_tensor(np.stack([v.pixels for v in viewports]), dtype=DTYPE)
    centers = torch.tensor(
        [[v.center.lat, v.center.lon] for v in viewports], dtype=DTYPE
    )
    sources = torch.tensor([v.source_index for v in viewports], dtype=torch.long)
    return pixels, centers, sources


@torch.no_grad()
def score_viewports(
    model: QualityTransformer, viewports: Sequence, batch_size: int = 64
) -> np.ndarray:
    """Per-viewport scores, in input order."""
    if not viewports:
        return np.zeros(0)
    scores = []
    for start in range(0, len(viewports), batch_size):
        chunk = viewports[start : start + batch_size]
        scores.append(model(*viewport_tensors(chunk)).numpy())
    return np.concatenate(scores)


def score_viewport(model: QualityTransformer, viewport) -> float:
    return float(score_viewports(model, [viewport])[0])


def score_image(model: QualityTransformer, viewports: Sequence) -> float:
    """
    Image score: mean of its viewport scores.

    Raises:
        EmptyInputError: If ``viewports`` is empty
    """
    if not viewports:
        raise EmptyInputError("cannot score an image without viewports")
    return float(np.mean(score_viewports(model, viewports)))


@torch.no_grad()
def refresh_unknown_source(model: QualityTransformer) -> None:
    """Set the unknown-source row to the mean of the learned rows."""
    if model.config.n_sources > 0:
        model.source_table[-1] = model.source_table[:-1].mean(dim=0)


# ==================== Checkpoints ====================


def save_checkpoint(model: QualityTransformer, path: Union[str, Path]) -> None:
    """Write the model atomically (temporary file, then rename)."""
    path = Path(path)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "state_dict": {k: v.detach().clone() for k, v in model.state_dict().items()},
    }
    handle, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    os.close(handle)
    try:
        torch.save(payload, tmp_name)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    logger.info(f"Saved checkpoint to {path}")


def load_checkpoint(
    path: Union[str, Path], expected: Optional[ModelConfig] = None
) -> QualityTransformer:
    """
    Load a checkpoint written by save_checkpoint.

    Args:
        path: Checkpoint file
        expected: If given, the architecture the caller expects

    Raises:
        CheckpointError: Unreadable file or unknown format/version
        ConfigMismatchError: Architecture differs from ``expected``
    """
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise CheckpointError(f"no such checkpoint: {path}")
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")

    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a panorama-iqa checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {payload.get('version')!r}"
        )

    config = config_from_dict(ModelConfig, payload["model_config"], "model")
    if expected is not None:
        ours, theirs = expected.architecture_key(), config.architecture_key()
        differing = sorted(k for k in ours if ours[k] != theirs.get(k))
        if differing:
            raise ConfigMismatchError(
                f"checkpoint architecture differs in: {', '.join(differing)}"
            )

    model = QualityTransformer(config)
    try:
        model.load_state_dict(payload["state_dict"])
    except (RuntimeError, KeyError) as e:
        raise CheckpointError(f"checkpoint tensors do not match its config: {e}")
    logger.info(f"Loaded checkpoint {path}")
    return model.eval()
