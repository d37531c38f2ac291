"""
Ablation study: the full model against variants with one component removed.

Each variant is a set of configuration overrides. For every seed every
variant is trained on the same train manifest and evaluated on the same
test manifest.
"""

import logging
from typing import Any, Dict, List, Mapping, Optional, Sequence

from panorama_iqa.core.imageio import DatasetManifest
from panorama_iqa.core.reporting import evaluate
from panorama_iqa.core.training import train
from panorama_iqa.settings import RunConfig, apply_overrides

logger = logging.getLogger(__name__)

FULL = "full"

VARIANTS: Dict[str, Dict[str, Any]] = {
    FULL: {},
    "uniform-random": {"sampler.mode": "uniform-random"},
    "erp-crop": {"sampler.viewport_mode": "erp-crop"},
    "no-source-embedding": {"model.use_source_embedding": False},
    "no-geometric-source-embedding": {
        "model.use_geometric_embedding": False,
        "model.use_source_embedding": False,
    },
}


def run_ablation(
    train_manifest: DatasetManifest,
    test_manifest: DatasetManifest,
    config: RunConfig,
    seeds: Sequence[int] = (0, 1, 2),
    variants: Optional[Mapping[str, Mapping[str, Any]]] = None,
) -> Dict[str, Any]:
    """
    Train and evaluate every variant for every seed.

    Returns:
        Dict with per-variant, per-seed test SRCC/PLCC and, for each variant,
        the number of seeds where the full model's SRCC is at least as high
    """
    variants = dict(VARIANTS if variants is None else variants)
    variants.setdefault(FULL, {})
    results: Dict[str, List[Dict[str, Any]]] = {name: [] for name in variants}

    for seed in seeds:
        for name, overrides in variants.items():
            variant_config = apply_overrides(config, dict(overrides)).with_seed(seed)
            variant_config = variant_config.validate()
            outcome = train(train_manifest, variant_config)
            report = evaluate(test_manifest, outcome.model, variant_config)
            results[name].append(
                {"seed": seed, "srcc": report.srcc, "plcc": report.plcc}
            )
            logger.info(
                f"Ablation {name} seed {seed}: srcc={report.srcc}, plcc={report.plcc}"
            )

    def srcc_of(entry: Dict[str, Any]) -> float:
        return float("-inf") if entry["srcc"] is None else entry["srcc"]

    full_wins = {}
    for name, entries in results.items():
        if name == FULL:
            continue
        full_wins[name] = sum(
            srcc_of(full) >= srcc_of(other)
            for full, other in zip(results[FULL], entries)
        )
    return {
        "seeds": list(seeds),
        "variants": results,
        "full_at_least_as_good": full_wins,
    }
