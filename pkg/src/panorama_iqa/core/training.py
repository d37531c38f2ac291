"""
MAE training over sampled viewports.

Every viewport inherits its parent image's MOS as its target. Viewports are
sampled once per image (optionally again every epoch), shuffled with a
seeded generator and fed to the optimizer in mini-batches. Gradients come
from torch autograd; ``check_gradients`` compares them against central
finite differences.
"""

import copy
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from tqdm import tqdm

from panorama_iqa.core.imageio import DatasetManifest, load_image, load_saliency
from panorama_iqa.core.model import (
    DTYPE,
    QualityTransformer,
    refresh_unknown_source,
    viewport_tensors,
)
from panorama_iqa.core.sampling import (
    TangentViewport,
    image_key,
    image_rng,
    sample_image,
)
from panorama_iqa.core.seeding import derive_rng
from panorama_iqa.core.sphere import SphericalPoint, TangentPlane
from panorama_iqa.exceptions import (
    EmptyInputError,
    NonFiniteGradientError,
    NonFiniteUpdateError,
    ShapeMismatchError,
)
from panorama_iqa.settings import (
    Activation,
    EncoderKind,
    ModelConfig,
    OptimizerKind,
    RunConfig,
    SamplerConfig,
    TrainConfig,
)

logger = logging.getLogger(__name__)

GRADCHECK_EPSILON = 1e-4
GRADCHECK_TOLERANCE = 1e-3
# Below this magnitude gradients are compared absolutely.
GRADCHECK_FLOOR = 1e-6


# ==================== Loss ====================


def mae_loss(predictions, targets):
    """
    Mean absolute error.

    Tensors in, tensor out (differentiable, zero subgradient at a zero
    residual); anything else returns a float.

    Raises:
        EmptyInputError: No predictions
        ShapeMismatchError: Length mismatch
    """
    if torch.is_tensor(predictions) or torch.is_tensor(targets):
        predictions = torch.as_tensor(predictions, dtype=DTYPE)
        targets = torch.as_tensor(targets, dtype=DTYPE)
        preds_len, targets_len = predictions.numel(), targets.numel()
    else:
        predictions = np.asarray(predictions, dtype=np.float64).reshape(-1)
        targets = np.asarray(targets, dtype=np.float64).reshape(-1)
        preds_len, targets_len = predictions.size, targets.size
    if preds_len == 0:
        raise EmptyInputError("mae_loss needs at least one prediction")
    if preds_len != targets_len:
        raise ShapeMismatchError(f"{preds_len} predictions for {targets_len} targets")
    if torch.is_tensor(predictions):
        return (predictions.reshape(-1) - targets.reshape(-1)).abs().mean()
    return float(np.mean(np.abs(predictions - targets)))


# ==================== Batches ====================


@dataclass(frozen=True)
class LabeledViewport:
    """A viewport plus the MOS of the image it came from."""

    viewport: TangentViewport
    target: float
    image_path: str


@dataclass
class ViewportBatch:
    """Stacked model inputs and targets for one optimizer step."""

    pixels: torch.Tensor
    centers: torch.Tensor
    sources: torch.Tensor
    targets: torch.Tensor

    @classmethod
    def from_viewports(
        cls, viewports: Sequence[TangentViewport], targets: Sequence[float]
    ) -> "ViewportBatch":
        if not viewports:
            raise EmptyInputError("a batch needs at least one viewport")
        if len(viewports) != len(targets):
            raise ShapeMismatchError(
                f"{len(viewports)} viewports for {len(targets)} targets"
            )
        pixels, centers, sources = viewport_tensors(viewports)
        return cls(pixels, centers, sources, torch.tensor(list(targets), dtype=DTYPE))

    @classmethod
    def from_labeled(cls, items: Sequence[LabeledViewport]) -> "ViewportBatch":
        return cls.from_viewports(
            [item.viewport for item in items], [item.target for item in items]
        )

    def __len__(self) -> int:
        return int(self.targets.numel())


def batch_loss(model: QualityTransformer, batch: ViewportBatch) -> torch.Tensor:
    return mae_loss(model(batch.pixels, batch.centers, batch.sources), batch.targets)


def source_index_map(manifest: DatasetManifest) -> Dict[str, int]:
    """Source index per image: position in sorted image-path order."""
    return {path: i for i, path in enumerate(sorted(e.image_path for e in manifest))}


def build_viewport_pool(
    manifest: DatasetManifest,
    sampler: SamplerConfig,
    sources: Optional[Dict[str, int]] = None,
    epoch: Optional[int] = None,
    show_progress: bool = False,
) -> List[LabeledViewport]:
    """
    Sample viewports for every image and label them with the image MOS.

    The pool is ordered by (image path, selection order), so it does not depend
    on manifest order. Each image draws from its own stream keyed by its pixel
    content (and ``epoch`` when re-sampling).
    """
    if sources is None:
        sources = source_index_map(manifest)
    entries = sorted(manifest.entries, key=lambda e: e.image_path)
    pool: List[LabeledViewport] = []
    with tqdm(
        total=len(entries),
        desc="Sampling viewports",
        unit="image",
        disable=not show_progress,
    ) as pbar:
        for entry in entries:
            image = load_image(manifest.image_file(entry))
            saliency_file = manifest.saliency_file(entry)
            saliency = load_saliency(saliency_file) if saliency_file else None
            viewports = sample_image(
                image,
                saliency,
                sampler,
                source_index=sources.get(entry.image_path, len(sources)),
                seed=image_rng(sampler.seed, image_key(image), epoch),
            )
            pool.extend(
                LabeledViewport(v, entry.mos, entry.image_path) for v in viewports
            )
            pbar.set_postfix({"viewports": len(pool)})
            pbar.update(1)
    logger.info(f"Sampled {len(pool)} viewports from {len(entries)} images")
    return pool


def iter_batches(
    pool: Sequence[LabeledViewport], config: TrainConfig, epoch: int
) -> List[List[LabeledViewport]]:
    """
    One epoch of batches.

    Mixed mode permutes the whole pool and keeps the final partial batch;
    grouped mode yields one batch per image in shuffled image order.
    """
    rng = derive_rng(config.seed, "shuffle", epoch)
    if config.group_by_image:
        by_image: Dict[str, List[LabeledViewport]] = {}
        for item in pool:
            by_image.setdefault(item.image_path, []).append(item)
        paths = sorted(by_image)
        return [by_image[paths[i]] for i in rng.permutation(len(paths))]
    order = rng.permutation(len(pool))
    return [
        [pool[i] for i in order[start : start + config.batch_size]]
        for start in range(0, len(order), config.batch_size)
    ]


# ==================== Gradients ====================


def backward(
    model: QualityTransformer, batch: ViewportBatch
) -> Tuple[float, Dict[str, torch.Tensor]]:
    """
    Loss and exact gradients for every named parameter.

    Parameters the forward pass does not touch (ablated embeddings, unused
    positional rows) get zero gradients.

    Raises:
        NonFiniteGradientError: If any gradient is NaN or infinite
    """
    names, params = zip(*model.named_parameters())
    loss = batch_loss(model, batch)
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    result = {}
    for name, param, grad in zip(names, params, grads):
        grad = torch.zeros_like(param) if grad is None else grad.detach()
        if not torch.isfinite(grad).all():
            raise NonFiniteGradientError(f"non-finite gradient for {name}")
        result[name] = grad
    return float(loss.detach()), result


@torch.no_grad()
def finite_difference_gradient(
    model: QualityTransformer,
    batch: ViewportBatch,
    name: str,
    index: Tuple[int, ...],
    eps: float = GRADCHECK_EPSILON,
) -> float:
    """Central difference of the batch loss w.r.t. one parameter entry."""
    param = dict(model.named_parameters())[name]
    original = param[index].item()
    param[index] = original + eps
    upper = float(batch_loss(model, batch))
    param[index] = original - eps
    lower = float(batch_loss(model, batch))
    param[index] = original
    return (upper - lower) / (2.0 * eps)


@dataclass
class GradientCheck:
    """Finite-difference agreement for one parameter tensor."""

    name: str
    n_checked: int
    max_error: float
    errors: List[float] = field(default_factory=list)

    def passed(self, tolerance: float = GRADCHECK_TOLERANCE) -> bool:
        return self.max_error < tolerance

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tensor": self.name,
            "checked": self.n_checked,
            "max_error": self.max_error,
        }


def relative_error(
    analytic: float, numeric: float, floor: float = GRADCHECK_FLOOR
) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(
    model: QualityTransformer,
    batch: ViewportBatch,
    coords_per_tensor: int = 10,
    seed: int = 0,
    eps: float = GRADCHECK_EPSILON,
) -> List[GradientCheck]:
    """
    Compare autograd gradients against central differences.

    Up to ``coords_per_tensor`` randomly chosen entries of every parameter
    tensor are checked.

    Returns:
        One GradientCheck per tensor, in parameter order
    """
    _, analytic = backward(model, batch)
    rng = derive_rng(seed, "gradcheck")
    results = []
    for name, param in model.named_parameters():
        n = min(coords_per_tensor, param.numel())
        flat_indices = rng.choice(param.numel(), size=n, replace=False)
        errors = []
        for flat in flat_indices:
            index = tuple(
                int(i) for i in np.unravel_index(int(flat), tuple(param.shape))
            )
            numeric = finite_difference_gradient(model, batch, name, index, eps)
            errors.append(relative_error(float(analytic[name][index]), numeric))
        results.append(GradientCheck(name, n, max(errors), errors))
        logger.debug(f"gradcheck {name}: max relative error {max(errors):.2e}")
    return results


# ==================== Optimisation ====================


@dataclass
class TrainState:
    """Progress of a training run."""

    step: int = 0
    running_loss: Optional[float] = None
    loss_log: List[Dict[str, Any]] = field(default_factory=list)


class Trainer:
    """
    Owns a model and its optimizer.

    The live model is private; ``model`` hands out frozen snapshots so no
    caller can mutate parameters while training runs.
    """

    def __init__(self, model: QualityTransformer, config: TrainConfig):
        self._model = model
        self.config = config.validate()
        self.state = TrainState()
        params = list(model.parameters())
        if OptimizerKind(config.optimizer) is OptimizerKind.SGD:
            self._optimizer = torch.optim.SGD(params, lr=config.learning_rate)
        else:
            self._optimizer = torch.optim.Adam(
                params,
                lr=config.learning_rate,
                betas=(config.beta1, config.beta2),
                eps=config.eps,
            )

    @property
    def model(self) -> QualityTransformer:
        return self._model.snapshot()

    def apply_gradients(self, grads: Dict[str, torch.Tensor]) -> None:
        """
        One optimizer update from precomputed gradients.

        Raises:
            NonFiniteUpdateError: The update produced non-finite parameters;
                parameters and optimizer state are restored first
        """
        named = dict(self._model.named_parameters())
        saved_params = {name: p.detach().clone() for name, p in named.items()}
        saved_optimizer = copy.deepcopy(self._optimizer.state_dict())

        for name, param in named.items():
            param.grad = grads[name].clone()
        if self.config.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(named.values(), self.config.grad_clip)
        self._optimizer.step()
        self._optimizer.zero_grad(set_to_none=True)

        if not all(torch.isfinite(p).all() for p in named.values()):
            with torch.no_grad():
                for name, param in named.items():
                    param.copy_(saved_params[name])
            self._optimizer.load_state_dict(saved_optimizer)
            raise NonFiniteUpdateError(
                f"step {self.state.step + 1} produced non-finite parameters"
            )
        self.state.step += 1

    def step(self, batch: ViewportBatch) -> float:
        """Backpropagate ``batch``, update parameters and log the loss."""
        loss, grads = backward(self._model, batch)
        self.apply_gradients(grads)
        self.state.running_loss = loss
        self.state.loss_log.append({"step": self.state.step, "loss": loss})
        return loss

    def finish(self) -> QualityTransformer:
        """Refresh the unknown-source row and return a frozen copy."""
        refresh_unknown_source(self._model)
        return self.model


@dataclass
class TrainResult:
    model: QualityTransformer
    state: TrainState
    sources: Dict[str, int]

    @property
    def loss_log(self) -> List[Dict[str, Any]]:
        return self.state.loss_log


def train(
    manifest: DatasetManifest, config: RunConfig, show_progress: bool = False
) -> TrainResult:
    """
    Train a fresh model on ``manifest``.

    The source table gets one row per training image. With ``steps = 0`` the
    returned model equals its initialisation (plus the refreshed unknown row).

    Raises:
        EmptyInputError: If the manifest is empty
    """
    if len(manifest) == 0:
        raise EmptyInputError("cannot train on an empty manifest")
    config = config.validate()
    train_config = config.training
    sources = source_index_map(manifest)
    model_config = replace(config.model, n_sources=len(sources))
    model = QualityTransformer(model_config, seed=train_config.seed)
    trainer = Trainer(model, train_config)

    pool = build_viewport_pool(
        manifest, config.sampler, sources, show_progress=show_progress
    )
    if not pool:
        raise EmptyInputError("no viewports were sampled")

    epoch = 0
    batches = iter_batches(pool, train_config, epoch)
    with tqdm(
        total=train_config.steps,
        desc="Training",
        unit="step",
        disable=not show_progress,
    ) as pbar:
        while trainer.state.step < train_config.steps:
            if not batches:
                epoch += 1
                if train_config.resample_each_epoch:
                    pool = build_viewport_pool(
                        manifest, config.sampler, sources, epoch=epoch
                    )
                batches = iter_batches(pool, train_config, epoch)
            loss = trainer.step(ViewportBatch.from_labeled(batches.pop(0)))
            pbar.set_postfix({"loss": f"{loss:.4f}", "epoch": epoch})
            pbar.update(1)

    log = trainer.state.loss_log
    if log:
        logger.info(
            f"Trained {trainer.state.step} steps over {epoch + 1} epoch(s); "
            f"loss {log[0]['loss']:.4f} -> {log[-1]['loss']:.4f}"
        )
    return TrainResult(model=trainer.finish(), state=trainer.state, sources=sources)


def write_loss_log(entries: Sequence[Dict[str, Any]], path: Union[str, Path]) -> None:
    """One ``{"step": ..., "loss": ...}`` JSON object per line."""
    with open(path, "w", encoding="utf-8") as handle:
        for entry in entries:
            record = {"step": entry["step"], "loss": entry["loss"]}
            handle.write(json.dumps(record) + "\n")


def toy_problem(
    activation=Activation.GELU,
    encoder_kind=EncoderKind.CONV,
    n_viewports: int = 3,
    seed: int = 0,
) -> Tuple[QualityTransformer, ViewportBatch]:
    """
    A tiny model and batch for gradient checks.

    D=8, one layer, one head, 4x4 viewports with a single 4x4 patch. Targets
    sit far from the initial predictions so no residual is near the MAE kink.
    """
    config = ModelConfig(
        token_dim=8,
        patch_size=4,
        n_layers=1,
        n_heads=1,
        mlp_dim=16,
        n_sources=2,
        max_patches=2,
        encoder_kind=encoder_kind,
        activation=activation,
        init_std=0.2,
    )
    model = QualityTransformer(config, seed=seed)
    rng = derive_rng(seed, "toy")
    # a zero CLS row sits where LayerNorm has no variance
    cls = rng.normal(0.0, config.init_std, size=tuple(model.cls_token.shape))
    with torch.no_grad():
        model.cls_token.copy_(torch.from_numpy(cls))
    viewports = []
    for i in range(n_viewports):
        center = SphericalPoint(rng.uniform(-1.2, 1.2), rng.uniform(-3.0, 3.0))
        viewports.append(
            TangentViewport(
                pixels=rng.random((4, 4, 3)),
                center=center,
                plane=TangentPlane(center=center, fov=math.pi / 4, resolution=4),
                source_index=i % (config.n_sources + 1),
            )
        )
    targets = 4.0 + rng.uniform(0.0, 1.0, size=n_viewports)
    return model, ViewportBatch.from_viewports(viewports, targets.tolist())
