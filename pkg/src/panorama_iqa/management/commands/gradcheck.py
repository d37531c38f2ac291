import json

from django.core.management.base import CommandError

from panorama_iqa.core.training import GRADCHECK_TOLERANCE, check_gradients, toy_problem
from panorama_iqa.management.base import PanoramaCommand
from panorama_iqa.settings import Activation, EncoderKind


class Command(PanoramaCommand):
    help = "Check autograd gradients against finite differences on a toy model"

    uses_config = False

    def add_arguments(self, parser):
        parser.add_argument(
            "--activation",
            nargs="+",
            choices=[a.value for a in Activation],
            default=[a.value for a in Activation],
        )
        parser.add_argument(
            "--encoder",
            choices=[e.value for e in EncoderKind],
            default=EncoderKind.CONV.value,
        )
        parser.add_argument("--coords", type=int, default=10, help="Entries per tensor")
        parser.add_argument("--tolerance", type=float, default=GRADCHECK_TOLERANCE)
        parser.add_argument("--seed", type=int, default=0)

    def handle(self, *args, **options):
        report = {}
        failures = []
        for activation in options["activation"]:
            model, batch = toy_problem(
                Activation(activation),
                EncoderKind(options["encoder"]),
                seed=options["seed"],
            )
            checks = check_gradients(
                model, batch, coords_per_tensor=options["coords"], seed=options["seed"]
            )
            report[activation] = [c.to_dict() for c in checks]
            failures.extend(
                f"{activation}:{c.name}"
                for c in checks
                if not c.passed(options["tolerance"])
            )

        self.stdout.write(json.dumps(report, indent=2))
        if failures:
            raise CommandError(
                f"{len(failures)} tensor(s) exceed tolerance {options['tolerance']}: "
                + ", ".join(failures)
            )
