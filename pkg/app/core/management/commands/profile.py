"""summarize an exported memory timeline"""
from django.core.management.base import BaseCommand, CommandError

from core.management.commands._common import EXIT_USAGE
from engine.exceptions import DataFormatError
from engine.ledger import (
    peak_activation_bytes,
    peak_live_bytes,
    phase_summaries,
    read_csv,
    sparkline,
)


class Command(BaseCommand):
    """django command to profile a memory.csv"""
    help = "Print peak and mean live bytes per phase of a memory.csv."

    def add_arguments(self, parser):
        parser.add_argument("path", help="memory.csv written by train")
        parser.add_argument("--sparkline", action="store_true")
        parser.add_argument("--sparkline-width", type=int, default=60)

    def handle(self, *args, **options):
        """entry point for command"""
        try:
            timeline = read_csv(options["path"])
        except (DataFormatError, UnicodeDecodeError) as exc:
            raise CommandError(f"malformed memory csv: {exc}",
                               returncode=EXIT_USAGE) from exc
        except OSError as exc:
            raise CommandError(str(exc), returncode=EXIT_USAGE) from exc

        self.stdout.write(f"events {len(timeline.events)}")
        self.stdout.write(f"peak {peak_live_bytes(timeline)}")
        self.stdout.write(
            f"peak_activation {peak_activation_bytes(timeline)}"
        )
        for summary in phase_summaries(timeline):
            self.stdout.write(
                f"{summary.phase:<15} events {summary.events:>8}  "
                f"peak {summary.peak_live_bytes:>12}  "
                f"mean {summary.mean_live_bytes:>14.1f}"
            )
        if options["sparkline"]:
            self.stdout.write(sparkline(timeline.live_curve(),
                                        options["sparkline_width"]))
