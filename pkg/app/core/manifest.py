"""
Run manifests: the fully resolved configuration of one run, stored as
plain `key=value` lines sorted by key.

Values are resolved in this order, later wins:
ENGINE settings, model defaults, `--config` file, command-line flags.
"""
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from django.conf import settings

from engine.architectures import defaults_for
from engine.exceptions import ConfigurationError
from engine.trainers import TrainConfig

INT_KEYS = ("batch_size", "epochs", "seed", "width", "layers", "max_steps",
            "eval_workers")
FLOAT_KEYS = ("learning_rate",)
KNOWN_KEYS = INT_KEYS + FLOAT_KEYS + (
    "algorithm", "model", "data", "output_dir", "feedback_policy",
    "sign_refresh", "precision",
)


def read_manifest(path):
    """parse `key=value` lines; blank lines and `#` comments are skipped"""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    values = {}
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigurationError(f"{path}:{line_no}: expected key=value")
        if key not in KNOWN_KEYS:
            raise ConfigurationError(f"{path}:{line_no}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def write_manifest(values, path):
    lines = [f"{key}={values[key]}" for key in sorted(values)]
    Path(path).write_text("\n".join(lines) + "\n")


def _coerce(key, value):
    if value is None or value == "":
        return None
    try:
        if key in INT_KEYS:
            return int(value)
        if key in FLOAT_KEYS:
            return float(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{key} must be a number, got {value!r}") \
            from None
    return str(value)


@dataclass
class RunManifest:
    config: TrainConfig
    model_name: str
    output_dir: Path
    data_dir: Optional[Path] = None
    width: int = 64
    layers: int = 50
    eval_workers: int = 1

    @classmethod
    def resolve(cls, model_name, config_path=None, overrides=None):
        """merge every configuration layer into a validated manifest"""
        engine = settings.ENGINE
        values = {
            "algorithm": "BP",
            "batch_size": engine["BATCH_SIZE"],
            "seed": engine["SEED"],
            "precision": engine["PRECISION"],
            "feedback_policy": engine["FEEDBACK_POLICY"],
            "sign_refresh": engine["SIGN_REFRESH"],
            "width": engine["FC_WIDTH"],
            "layers": engine["FC_LAYERS"],
            "eval_workers": engine["EVAL_WORKERS"],
            "output_dir": engine["OUTPUT_DIR"],
        }
        file_values = read_manifest(config_path) if config_path else {}
        model_name = (overrides or {}).get("model") \
            or file_values.get("model") or model_name
        if not model_name:
            raise ConfigurationError("no model given")
        defaults = defaults_for(model_name)
        values["learning_rate"] = defaults.learning_rate
        values["epochs"] = defaults.epochs
        values["data"] = engine["DATA_DIRS"].get(defaults.dataset)

        values.update({k: v for k, v in file_values.items() if v != ""})
        for key, value in (overrides or {}).items():
            if value is not None:
                values[key] = value
        values["model"] = model_name

        coerced = {key: _coerce(key, value) for key, value in values.items()}
        try:
            config = TrainConfig(
                algorithm=coerced["algorithm"],
                learning_rate=coerced["learning_rate"],
                batch_size=coerced["batch_size"],
                epochs=coerced["epochs"],
                seed=coerced["seed"],
                feedback_policy=coerced["feedback_policy"],
                sign_refresh=coerced["sign_refresh"],
                precision=coerced["precision"],
                max_steps=coerced.get("max_steps"),
            )
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc
        data = coerced.get("data")
        return cls(
            config=config,
            model_name=model_name,
            output_dir=Path(coerced["output_dir"]),
            data_dir=Path(data) if data else None,
            width=coerced["width"],
            layers=coerced["layers"],
            eval_workers=coerced["eval_workers"] or 1,
        )

    @property
    def dataset(self):
        return defaults_for(self.model_name).dataset

    def with_algorithm(self, algorithm, output_dir):
        config = replace(self.config, algorithm=algorithm)
        return RunManifest(
            config, self.model_name, Path(output_dir), self.data_dir,
            self.width, self.layers, self.eval_workers,
        )

    def as_dict(self):
        values = {
            "algorithm": self.config.algorithm,
            "model": self.model_name,
            "learning_rate": repr(self.config.learning_rate),
            "batch_size": self.config.batch_size,
            "epochs": self.config.epochs,
            "seed": self.config.seed,
            "feedback_policy": self.config.feedback_policy,
            "sign_refresh": self.config.sign_refresh,
            "precision": self.config.precision,
            "output_dir": str(self.output_dir),
            "data": str(self.data_dir) if self.data_dir else "",
            "eval_workers": self.eval_workers,
        }
        if self.config.max_steps is not None:
            values["max_steps"] = self.config.max_steps
        if self.model_name == "fc50":
            values["width"] = self.width
            values["layers"] = self.layers
        return {key: str(value) for key, value in values.items()}

    def write(self, path=None):
        path = Path(path) if path else self.output_dir / "manifest"
        write_manifest(self.as_dict(), path)
        return path
