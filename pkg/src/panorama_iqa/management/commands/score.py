import json

from panorama_iqa.core.imageio import load_image, load_saliency
from panorama_iqa.core.model import load_checkpoint, score_viewports
from panorama_iqa.core.sampling import image_key, image_rng, sample_image
from panorama_iqa.exceptions import EmptyInputError
from panorama_iqa.management.base import PanoramaCommand


def architecture_overridden(options) -> bool:
    """True when the user configured the model explicitly."""
    return bool(options.get("config")) or any(
        o.strip().startswith("model.") for o in options.get("overrides") or []
    )


class Command(PanoramaCommand):
    help = "Score one panorama with a trained checkpoint"

    def add_arguments(self, parser):
        parser.add_argument("checkpoint", help="Checkpoint written by 'train'")
        parser.add_argument("image", help="Panorama (PPM)")
        parser.add_argument("--saliency", default=None, help="Saliency map (PGM)")
        parser.add_argument(
            "--per-viewport",
            action="store_true",
            help="Print a JSON document with every viewport score",
        )

    def handle(self, *args, **options):
        config = self.load_config(options)
        expected = config.model if architecture_overridden(options) else None
        model = load_checkpoint(options["checkpoint"], expected)
        model.config.validate_viewport(config.sampler.resolution)

        image = load_image(options["image"])
        saliency = load_saliency(options["saliency"]) if options["saliency"] else None
        viewports = sample_image(
            image,
            saliency,
            config.sampler,
            source_index=model.unknown_source_index,
            seed=image_rng(config.sampler.seed, image_key(image)),
        )
        if not viewports:
            raise EmptyInputError("no viewports were sampled")
        scores = score_viewports(model, viewports)
        score = float(scores.mean())

        if options["per_viewport"]:
            document = {
                "score": score,
                "viewports": [
                    {
                        "index": i,
                        "lat": v.center.lat,
                        "lon": v.center.lon,
                        "score": float(s),
                    }
                    for i, (v, s) in enumerate(zip(viewports, scores))
                ],
            }
            self.stdout.write(json.dumps(document, indent=2))
        else:
            self.stdout.write(repr(score))
