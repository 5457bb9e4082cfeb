"""flags and error handling shared by the training commands"""
from contextlib import contextmanager

from django.core.management.base import CommandError

from engine.exceptions import (
    ConfigurationError,
    DataFormatError,
    DataMissingError,
    DimensionError,
    DivergenceError,
)
from engine.feedback import POLICIES, SIGN_REFRESH
from engine.tensor import PRECISIONS

EXIT_USAGE = 2
EXIT_DATA_MISSING = 3
EXIT_DIVERGED = 4


def add_run_arguments(parser):
    parser.add_argument("--model", help="mnist-fc3, mnist-cnn, cifar-cnn2, "
                        "cifar-cnn3, fc50 or custom:PATH")
    parser.add_argument("--lr", dest="learning_rate", type=float)
    parser.add_argument("--batch", dest="batch_size", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--data", help="dataset directory")
    parser.add_argument("--out", dest="output_dir", help="output directory")
    parser.add_argument("--feedback-policy", dest="feedback_policy",
                        choices=POLICIES)
    parser.add_argument("--sign-refresh", dest="sign_refresh",
                        choices=SIGN_REFRESH)
    parser.add_argument("--precision", choices=sorted(PRECISIONS))
    parser.add_argument("--width", type=int, help="fc50 layer width")
    parser.add_argument("--layers", type=int, help="fc50 layer count")
    parser.add_argument("--max-steps", dest="max_steps", type=int,
                        help="cap on steps per epoch")
    parser.add_argument("--eval-workers", dest="eval_workers", type=int)
    parser.add_argument("--config", help="key=value manifest to start from")
    parser.add_argument("--record", action="store_true",
                        help="store the run in the database")


OVERRIDE_KEYS = (
    "learning_rate", "batch_size", "epochs", "seed", "data", "output_dir",
    "feedback_policy", "sign_refresh", "precision", "width", "layers",
    "max_steps", "eval_workers",
)


def overrides_from(options):
    return {key: options.get(key) for key in OVERRIDE_KEYS}


@contextmanager
def exit_codes():
    """turn engine failures into CommandErrors carrying the exit code"""
    try:
        yield
    except DivergenceError as exc:
        raise CommandError(f"training diverged: {exc}",
                           returncode=EXIT_DIVERGED) from exc
    except DataMissingError as exc:
        raise CommandError(str(exc), returncode=EXIT_DATA_MISSING) from exc
    except (ConfigurationError, DimensionError, DataFormatError) as exc:
        raise CommandError(str(exc), returncode=EXIT_USAGE) from exc
