"""run all four algorithms on one model with the same seed"""
from django.core.management.base import BaseCommand

from core.management.commands._common import (
    add_run_arguments,
    exit_codes,
    overrides_from,
)
from core.manifest import RunManifest
from core.models import TrainingRun
from core.runner import (
    dataset_for,
    load_datasets,
    run_training,
    write_compare,
)
from engine.architectures import build_model
from engine.ledger import use_ledger
from engine.tensor import Rng
from engine.trainers import ALGORITHMS


class Command(BaseCommand):
    """django command to compare learning algorithms"""
    help = "Train with BP, FA, DFA and MEM-DFA and write compare.csv."

    def add_arguments(self, parser):
        add_run_arguments(parser)

    def handle(self, *args, **options):
        """entry point for command"""
        with exit_codes():
            base = RunManifest.resolve(
                options["model"], config_path=options["config"],
                overrides=overrides_from(options),
            )
            with use_ledger(None):
                first_model = build_model(
                    base.model_name, rng=Rng(base.config.seed),
                    precision=base.config.precision, width=base.width,
                    layers=base.layers,
                )
            datasets = load_datasets(dataset_for(first_model, base), base.data_dir)

            outcomes = []
            for algorithm in ALGORITHMS:
                manifest = base.with_algorithm(
                    algorithm, base.output_dir / algorithm.lower(),
                )
                self.stdout.write(f"running {algorithm}...")
                outcomes.append(run_training(manifest, datasets=datasets))

        base.output_dir.mkdir(parents=True, exist_ok=True)
        compare_path = base.output_dir / "compare.csv"
        write_compare(outcomes, compare_path)
        for outcome in outcomes:
            result = outcome.result
            self.stdout.write(
                f"{outcome.manifest.config.algorithm:>6}  "
                f"accuracy {result.final_accuracy}  "
                f"peak {result.peak_activation_bytes} bytes  "
                f"forward {result.op_counts.get('forward_matmuls', 0)}  "
                f"backward {result.op_counts.get('backward_matmuls', 0)}"
            )
            if options["record"]:
                TrainingRun.objects.record(
                    outcome.manifest.as_dict(), result, outcome.output_dir,
                )
        self.stdout.write(self.style.SUCCESS(f"wrote {compare_path}"))
