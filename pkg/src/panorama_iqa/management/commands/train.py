import json
from pathlib import Path

from panorama_iqa.core.imageio import load_manifest
from panorama_iqa.core.model import save_checkpoint
from panorama_iqa.core.training import train, write_loss_log
from panorama_iqa.management.base import PanoramaCommand


class Command(PanoramaCommand):
    help = "Train a quality model on a manifest and write a checkpoint"

    def add_arguments(self, parser):
        parser.add_argument("manifest", help="Training manifest (JSON lines)")
        parser.add_argument("--out", required=True, help="Checkpoint to write")
        parser.add_argument(
            "--loss-log",
            default=None,
            help="Per-step loss log (default: <out>.loss.jsonl)",
        )

    def handle(self, *args, **options):
        config = self.load_config(options)
        manifest = load_manifest(options["manifest"])
        out = Path(options["out"])
        loss_log = Path(options["loss_log"] or f"{out}.loss.jsonl")

        result = train(manifest, config, show_progress=not options["no_progress"])
        save_checkpoint(result.model, out)
        write_loss_log(result.loss_log, loss_log)

        final_loss = result.loss_log[-1]["loss"] if result.loss_log else None
        self.stdout.write(
            json.dumps(
                {
                    "steps": result.state.step,
                    "final_loss": final_loss,
                    "checkpoint": str(out),
                }
            )
        )
        self.display_summary(
            "TRAINING COMPLETED",
            {
                "Images": len(manifest),
                "Steps": result.state.step,
                "Final loss": final_loss,
                "Checkpoint": out,
                "Loss log": loss_log,
            },
        )
