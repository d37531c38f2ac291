"""
Evaluation reports.

Scores every image of a manifest (sample viewports, score them, average),
then reports SRCC, PLCC and RMSE overall and per distortion label.
"""

import csv
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from tqdm import tqdm

from panorama_iqa.core.imageio import DatasetManifest, load_image, load_saliency
from panorama_iqa.core.metrics import (
    MIN_FIT_POINTS,
    Logistic5Params,
    fit_logistic5,
    logistic5,
    pearson,
    raw_rmse,
    srcc,
)
from panorama_iqa.core.model import QualityTransformer, score_image
from panorama_iqa.core.sampling import image_key, image_rng, sample_image
from panorama_iqa.exceptions import EmptyInputError, UndefinedMetricError
from panorama_iqa.settings import EvalConfig, FitScope, RunConfig

logger = logging.getLogger(__name__)

PREDICTION_FIELDS = ["image_path", "prediction", "mos", "distortion_label"]


@dataclass(frozen=True)
class ImagePrediction:
    image_path: str
    prediction: float
    mos: float
    distortion_label: str
    scene_id: str
    n_viewports: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "image_path": self.image_path,
            "prediction": self.prediction,
            "mos": self.mos,
            "distortion_label": self.distortion_label,
            "scene_id": self.scene_id,
            "n_viewports": self.n_viewports,
        }


@dataclass
class GroupReport:
    """Metrics for one set of images. Undefined metrics are None."""

    n_images: int
    srcc: Optional[float]
    plcc: Optional[float]
    rmse: Optional[float]
    raw_rmse: float
    fit_scope: str
    logistic: Optional[Logistic5Params]
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_images": self.n_images,
            "srcc": self.srcc,
            "plcc": self.plcc,
            "rmse": self.rmse,
            "raw_rmse": self.raw_rmse,
            "fit_scope": self.fit_scope,
            "logistic": self.logistic.to_dict() if self.logistic else None,
            "notes": list(self.notes),
        }


@dataclass
class EvalReport:
    """Overall metrics, one GroupReport per distortion label, and predictions."""

    overall: GroupReport
    groups: Dict[str, GroupReport]
    predictions: List[ImagePrediction]

    @property
    def srcc(self) -> Optional[float]:
        return self.overall.srcc

    @property
    def plcc(self) -> Optional[float]:
        return self.overall.plcc

    @property
    def rmse(self) -> Optional[float]:
        return self.overall.rmse

    @property
    def logistic(self) -> Optional[Logistic5Params]:
        return self.overall.logistic

    def to_dict(self) -> Dict[str, Any]:
        summary = self.overall.to_dict()
        summary["groups"] = {
            label: g.to_dict() for label, g in sorted(self.groups.items())
        }
        summary["predictions"] = [p.to_dict() for p in self.predictions]
        return summary

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=False)


# ==================== Metrics per group ====================


def _correlation(fn, preds, labels, notes: List[str], name: str) -> Optional[float]:
    try:
        return fn(preds, labels)
    except UndefinedMetricError as e:
        notes.append(f"{name} undefined: {e}")
        return None


def overall_fit(
    preds: np.ndarray, labels: np.ndarray, notes: List[str]
) -> Logistic5Params:
    """Logistic fit over all images, or the identity when a fit is undefined."""
    try:
        return fit_logistic5(preds, labels)
    except UndefinedMetricError as e:
        notes.append(f"logistic fit skipped ({e}); PLCC/RMSE use raw predictions")
        return Logistic5Params.identity()


def group_metrics(
    preds: np.ndarray,
    labels: np.ndarray,
    logistic: Logistic5Params,
    fit_scope: FitScope,
    notes: Optional[List[str]] = None,
) -> GroupReport:
    notes = list(notes or [])
    mapped = logistic5(preds, logistic)
    return GroupReport(
        n_images=int(preds.size),
        srcc=_correlation(srcc, preds, labels, notes, "srcc"),
        plcc=_correlation(pearson, mapped, labels, notes, "plcc"),
        rmse=raw_rmse(mapped, labels),
        raw_rmse=raw_rmse(preds, labels),
        fit_scope=FitScope(fit_scope).value,
        logistic=logistic,
        notes=notes,
    )


def build_report(predictions: List[ImagePrediction], config: EvalConfig) -> EvalReport:
    """
    Compute the report from per-image predictions.

    Groups smaller than ``config.min_group_fit`` (or every group when the fit
    scope is overall) reuse the overall logistic fit.
    """
    if not predictions:
        raise EmptyInputError("cannot report on an empty prediction set")
    predictions = sorted(predictions, key=lambda p: p.image_path)
    preds = np.array([p.prediction for p in predictions])
    labels = np.array([p.mos for p in predictions])

    notes: List[str] = []
    fit = overall_fit(preds, labels, notes)
    overall = group_metrics(preds, labels, fit, FitScope.OVERALL, notes)

    by_label: Dict[str, List[ImagePrediction]] = defaultdict(list)
    for p in predictions:
        by_label[p.distortion_label].append(p)

    groups = {}
    for label, members in sorted(by_label.items()):
        group_preds = np.array([p.prediction for p in members])
        group_labels = np.array([p.mos for p in members])
        group_notes: List[str] = []
        scope, group_fit = FitScope.OVERALL, fit
        if FitScope(config.fit_scope) is FitScope.GROUP:
            if len(members) >= max(config.min_group_fit, MIN_FIT_POINTS):
                try:
                    group_fit = fit_logistic5(group_preds, group_labels)
                    scope = FitScope.GROUP
                except UndefinedMetricError as e:
                    group_notes.append(f"own fit skipped ({e}); using the overall fit")
            else:
                group_notes.append(
                    f"{len(members)} images is below {config.min_group_fit}; "
                    "using the overall fit"
                )
                logger.warning(f"Group {label!r} too small for its own logistic fit")
        groups[label] = group_metrics(
            group_preds, group_labels, group_fit, scope, group_notes
        )

    return EvalReport(overall=overall, groups=groups, predictions=predictions)


# ==================== Evaluation ====================


def predict_manifest(
    manifest: DatasetManifest,
    model: QualityTransformer,
    config: RunConfig,
    sources: Optional[Dict[str, int]] = None,
    show_progress: bool = False,
) -> List[ImagePrediction]:
    """
    Score every image in ``manifest`` (sorted by path).

    Images missing from ``sources`` use the model's unknown-source row.
    """
    sources = sources or {}
    entries = sorted(manifest.entries, key=lambda e: e.image_path)
    predictions = []
    with tqdm(
        total=len(entries),
        desc="Scoring images",
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
                config.sampler,
                source_index=sources.get(entry.image_path, model.unknown_source_index),
                seed=image_rng(config.sampler.seed, image_key(image)),
            )
            predictions.append(
                ImagePrediction(
                    image_path=entry.image_path,
                    prediction=score_image(model, viewports),
                    mos=entry.mos,
                    distortion_label=entry.distortion_label,
                    scene_id=entry.scene_id,
                    n_viewports=len(viewports),
                )
            )
            pbar.update(1)
    return predictions


def evaluate(
    manifest: DatasetManifest,
    model: QualityTransformer,
    config: RunConfig,
    sources: Optional[Dict[str, int]] = None,
    show_progress: bool = False,
) -> EvalReport:
    """
    Score a manifest and report agreement with its MOS values.

    Results do not depend on manifest order: images are scored in path
    order and each draws viewports from a stream keyed by its pixel content.

    Raises:
        EmptyInputError: If the manifest is empty
    """
    if len(manifest) == 0:
        raise EmptyInputError("cannot evaluate an empty manifest")
    predictions = predict_manifest(manifest, model, config, sources, show_progress)
    report = build_report(predictions, config.eval)
    logger.info(
        f"Evaluated {len(predictions)} images: srcc={report.srcc}, "
        f"plcc={report.plcc}, rmse={report.rmse}"
    )
    return report


def write_predictions_csv(report: EvalReport, path: Union[str, Path]) -> None:
    """One row per image: image_path, prediction, mos, distortion_label."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=PREDICTION_FIELDS)
        writer.writeheader()
        for p in report.predictions:
            writer.writerow({name: getattr(p, name) for name in PREDICTION_FIELDS})
