import json
from pathlib import Path

from panorama_iqa.core.imageio import load_manifest, split_dataset, write_manifest
from panorama_iqa.management.base import PanoramaCommand


class Command(PanoramaCommand):
    help = "Split a manifest into train/test manifests along scene ids"

    def add_arguments(self, parser):
        parser.add_argument("manifest", help="Manifest to split (JSON lines)")
        parser.add_argument(
            "--fraction", type=float, default=0.8, help="Share of scenes for training"
        )
        parser.add_argument(
            "--train-out",
            default=None,
            help="Train manifest (default: <stem>.train.jsonl)",
        )
        parser.add_argument(
            "--test-out",
            default=None,
            help="Test manifest (default: <stem>.test.jsonl)",
        )

    def handle(self, *args, **options):
        config = self.load_config(options)
        source = Path(options["manifest"])
        manifest = load_manifest(source)
        train, test = split_dataset(manifest, options["fraction"], config.seed)

        train_out = Path(options["train_out"] or source.with_suffix(".train.jsonl"))
        test_out = Path(options["test_out"] or source.with_suffix(".test.jsonl"))
        write_manifest(train, train_out)
        write_manifest(test, test_out)

        summary = {
            name: {"path": str(path), "scenes": part.scene_ids, "images": len(part)}
            for name, path, part in (
                ("train", train_out, train),
                ("test", test_out, test),
            )
        }
        self.stdout.write(json.dumps(summary))
