import json

from panorama_iqa.core.ablation import VARIANTS, run_ablation
from panorama_iqa.core.imageio import load_manifest
from panorama_iqa.management.base import PanoramaCommand


class Command(PanoramaCommand):
    help = "Compare the full model against ablated variants over several seeds"

    def add_arguments(self, parser):
        parser.add_argument("train_manifest", help="Training manifest")
        parser.add_argument("test_manifest", help="Test manifest")
        parser.add_argument(
            "--seeds", type=int, nargs="+", default=[0, 1, 2], help="Seeds to run"
        )
        parser.add_argument(
            "--variants",
            nargs="+",
            choices=sorted(VARIANTS),
            default=None,
            help="Variants to run (default: all)",
        )

    def handle(self, *args, **options):
        config = self.load_config(options)
        variants = None
        if options["variants"]:
            variants = {name: VARIANTS[name] for name in options["variants"]}
        table = run_ablation(
            load_manifest(options["train_manifest"]),
            load_manifest(options["test_manifest"]),
            config,
            seeds=options["seeds"],
            variants=variants,
        )
        self.stdout.write(json.dumps(table, indent=2))
        self.display_summary(
            "ABLATION COMPLETED",
            {
                f"full >= {name}": f"{wins}/{len(options['seeds'])} seeds"
                for name, wins in table["full_at_least_as_good"].items()
            },
        )
