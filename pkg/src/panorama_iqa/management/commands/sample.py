import json
from pathlib import Path

from panorama_iqa.core.imageio import load_image, load_saliency, save_rgb_array
from panorama_iqa.core.sampling import image_key, image_rng, sample_image
from panorama_iqa.management.base import PanoramaCommand

SIDECAR_NAME = "viewports.jsonl"


def read_sidecar(path):
    """Viewport records of a sidecar file; ``#`` header lines are skipped."""
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip() and not line.startswith("#"):
            records.append(json.loads(line))
    return records


class Command(PanoramaCommand):
    help = "Sample viewports from one panorama and write them as PPM files"

    def add_arguments(self, parser):
        parser.add_argument("image", help="Panorama (PPM)")
        parser.add_argument(
            "--saliency",
            default=None,
            help="Saliency map (PGM); default: contrast baseline",
        )
        parser.add_argument("--out", required=True, help="Output directory")

    def handle(self, *args, **options):
        config = self.load_config(options)
        image = load_image(options["image"])
        saliency = load_saliency(options["saliency"]) if options["saliency"] else None

        viewports = sample_image(
            image,
            saliency,
            config.sampler,
            seed=image_rng(config.sampler.seed, image_key(image)),
        )

        out_dir = Path(options["out"])
        out_dir.mkdir(parents=True, exist_ok=True)
        source = options["saliency"] or "baseline (local luminance contrast)"
        lines = [
            f"# image: {options['image']}",
            f"# saliency: {source}",
            f"# mode: {config.sampler.mode.value}, "
            f"viewports: {config.sampler.viewport_mode.value}",
        ]
        for index, viewport in enumerate(viewports):
            save_rgb_array(viewport.pixels, out_dir / f"viewport_{index:03d}.ppm")
            record = {
                "index": index,
                "lat": viewport.center.lat,
                "lon": viewport.center.lon,
                "mean_saliency": viewport.mean_saliency,
                "seed": config.sampler.seed,
            }
            lines.append(json.dumps(record))
        (out_dir / SIDECAR_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")

        self.display_summary(
            "VIEWPORTS SAMPLED",
            {
                "Image": options["image"],
                "Saliency": source,
                "Viewports": len(viewports),
            },
        )
