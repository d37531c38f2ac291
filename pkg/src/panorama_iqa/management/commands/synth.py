from pathlib import Path

from django.core.management.base import CommandError

from panorama_iqa.core.synthetic import (
    DISTORTION_KINDS,
    MANIFEST_NAME,
    SyntheticConfig,
    build_synthetic_dataset,
)
from panorama_iqa.management.base import PanoramaCommand


class Command(PanoramaCommand):
    help = "Generate a synthetic distorted-panorama dataset with a manifest"

    def add_arguments(self, parser):
        defaults = SyntheticConfig()
        parser.add_argument("out", help="Output directory")
        parser.add_argument("--scenes", type=int, default=defaults.n_scenes)
        parser.add_argument("--levels", type=int, default=defaults.levels)
        parser.add_argument("--height", type=int, default=defaults.height)
        parser.add_argument("--width", type=int, default=defaults.width)
        parser.add_argument(
            "--kinds",
            nargs="+",
            choices=DISTORTION_KINDS,
            default=list(defaults.kinds),
            help="Distortion kinds",
        )
        parser.add_argument("--blur-step", type=float, default=defaults.blur_step)
        parser.add_argument("--noise-step", type=float, default=defaults.noise_step)

    def handle(self, *args, **options):
        config = self.load_config(options)
        synthetic = SyntheticConfig(
            n_scenes=options["scenes"],
            height=options["height"],
            width=options["width"],
            levels=options["levels"],
            kinds=tuple(options["kinds"]),
            blur_step=options["blur_step"],
            noise_step=options["noise_step"],
        )
        try:
            synthetic.validate()
        except ValueError as e:
            raise CommandError(str(e))
        manifest = build_synthetic_dataset(
            options["out"],
            synthetic,
            config.seed,
            show_progress=not options["no_progress"],
        )
        self.stdout.write(str(Path(options["out"]) / MANIFEST_NAME))
        self.display_summary(
            "SYNTHETIC DATASET WRITTEN",
            {"Scenes": synthetic.n_scenes, "Images": len(manifest)},
        )
