"""train one model with one learning algorithm"""
from django.core.management.base import BaseCommand

from core.management.commands._common import (
    add_run_arguments,
    exit_codes,
    overrides_from,
)
from core.manifest import RunManifest
from core.models import TrainingRun
from core.runner import run_training
from engine.trainers import ALGORITHMS


class Command(BaseCommand):
    """django command to train a model"""
    help = "Train a model with BP, FA, DFA or MEM-DFA and write its CSVs."

    def add_arguments(self, parser):
        parser.add_argument(
            "--algo", dest="algorithm",
            choices=[name.lower() for name in ALGORITHMS],
        )
        add_run_arguments(parser)

    def handle(self, *args, **options):
        """entry point for command"""
        overrides = overrides_from(options)
        overrides["algorithm"] = options["algorithm"]
        with exit_codes():
            manifest = RunManifest.resolve(
                options["model"], config_path=options["config"],
                overrides=overrides,
            )
            self.stdout.write(
                f"training {manifest.model_name} with "
                f"{manifest.config.algorithm}..."
            )
            outcome = run_training(manifest)

        for record in outcome.result.history:
            self.stdout.write(
                f"epoch {record.epoch}: loss {record.train_loss:.4f} "
                f"accuracy {record.test_accuracy:.4f}"
            )
        if options["record"]:
            run = TrainingRun.objects.record(
                manifest.as_dict(), outcome.result, outcome.output_dir,
            )
            self.stdout.write(f"recorded run {run.id}")
        self.stdout.write(self.style.SUCCESS(
            f"wrote {outcome.output_dir}"
        ))
