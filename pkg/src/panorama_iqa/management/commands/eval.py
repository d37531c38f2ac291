from panorama_iqa.core.imageio import load_manifest
from panorama_iqa.core.model import load_checkpoint
from panorama_iqa.core.reporting import evaluate, write_predictions_csv
from panorama_iqa.management.base import PanoramaCommand
from panorama_iqa.management.commands.score import architecture_overridden


class Command(PanoramaCommand):
    help = "Evaluate a checkpoint on a manifest and print the report as JSON"

    def add_arguments(self, parser):
        parser.add_argument("checkpoint", help="Checkpoint written by 'train'")
        parser.add_argument("manifest", help="Test manifest (JSON lines)")
        parser.add_argument(
            "--predictions",
            default=None,
            help="Also write per-image predictions as CSV",
        )

    def handle(self, *args, **options):
        config = self.load_config(options)
        manifest = load_manifest(options["manifest"])
        expected = config.model if architecture_overridden(options) else None
        model = load_checkpoint(options["checkpoint"], expected)
        model.config.validate_viewport(config.sampler.resolution)

        report = evaluate(
            manifest, model, config, show_progress=not options["no_progress"]
        )
        self.stdout.write(report.to_json())
        if options["predictions"]:
            write_predictions_csv(report, options["predictions"])

        self.display_summary(
            "EVALUATION COMPLETED",
            {
                "Images": report.overall.n_images,
                "SRCC": report.srcc,
                "PLCC": report.plcc,
                "RMSE": report.rmse,
                "Groups": ", ".join(sorted(report.groups)),
            },
        )
