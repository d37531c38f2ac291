"""
Panorama IQA Toolkit - Core

Geometry, image IO, sampling, the quality model, training and evaluation.
"""

from panorama_iqa.core.imageio import (
    DatasetManifest,
    ErpImage,
    SaliencyMap,
    load_image,
    load_manifest,
    load_saliency,
    split_dataset,
)
from panorama_iqa.core.metrics import fit_logistic5, plcc, rmse, srcc
from panorama_iqa.core.model import QualityTransformer, load_checkpoint, score_image
from panorama_iqa.core.reporting import EvalReport, evaluate
from panorama_iqa.core.sampling import sample_image
from panorama_iqa.core.training import train

__all__ = [
    "DatasetManifest",
    "ErpImage",
    "SaliencyMap",
    "load_image",
    "load_manifest",
    "load_saliency",
    "split_dataset",
    "fit_logistic5",
    "plcc",
    "rmse",
    "srcc",
    "QualityTransformer",
    "load_checkpoint",
    "score_image",
    "EvalReport",
    "evaluate",
    "sample_image",
    "train",
]
