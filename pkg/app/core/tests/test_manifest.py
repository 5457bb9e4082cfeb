"""test run manifests"""
import tempfile
from pathlib import Path

from django.test import SimpleTestCase, override_settings

from core.manifest import RunManifest, read_manifest, write_manifest
from engine.exceptions import ConfigurationError

ENGINE = {
    "BATCH_SIZE": 100,
    "SEED": 0,
    "PRECISION": "f32",
    "FEEDBACK_POLICY": "fixed",
    "SIGN_REFRESH": "per_iteration",
    "FC_WIDTH": 64,
    "FC_LAYERS": 50,
    "EVAL_WORKERS": 1,
    "OUTPUT_DIR": "runs-output",
    "DATA_DIRS": {"mnist": "/data/mnist", "cifar10": None},
}


@override_settings(ENGINE=ENGINE)
class ManifestTests(SimpleTestCase):
    """test resolving and storing manifests"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = Path(self.tmp.name) / "manifest"

    def test_model_defaults(self):
        manifest = RunManifest.resolve("mnist-cnn")

        self.assertEqual(manifest.config.algorithm, "BP")
        self.assertEqual(manifest.config.learning_rate, 0.005)
        self.assertEqual(manifest.config.epochs, 150)
        self.assertEqual(manifest.config.batch_size, 100)
        self.assertEqual(manifest.data_dir, Path("/data/mnist"))

    def test_precedence(self):
        """test flags beat the file and the file beats model defaults"""
        self.path.write_text(
            "# tuned\nalgorithm=DFA\nlearning_rate=0.1\nepochs=3\n"
        )
        manifest = RunManifest.resolve(
            "mnist-fc3", config_path=self.path,
            overrides={"epochs": 7, "batch_size": None},
        )

        self.assertEqual(manifest.config.algorithm, "DFA")
        self.assertEqual(manifest.config.learning_rate, 0.1)
        self.assertEqual(manifest.config.epochs, 7)
        self.assertEqual(manifest.config.batch_size, 100)

    def test_write_sorted_and_read_back(self):
        manifest = RunManifest.resolve(
            "fc50", overrides={"width": 16, "layers": 5, "algorithm": "fa"},
        )
        manifest.write(self.path)
        lines = self.path.read_text().splitlines()
        keys = [line.split("=")[0] for line in lines]

        self.assertEqual(keys, sorted(keys))
        self.assertIn("algorithm=FA", lines)
        self.assertIn("width=16", lines)
        again = RunManifest.resolve(None, config_path=self.path)
        self.assertEqual(again.as_dict(), manifest.as_dict())

    def test_width_only_written_for_fc50(self):
        values = RunManifest.resolve("mnist-fc3").as_dict()
        self.assertNotIn("width", values)
        self.assertNotIn("layers", values)

    def test_unknown_key(self):
        write_manifest({"momentum": "0.9"}, self.path)
        with self.assertRaises(ConfigurationError):
            read_manifest(self.path)

    def test_line_without_equals(self):
        self.path.write_text("epochs 3\n")
        with self.assertRaises(ConfigurationError):
            read_manifest(self.path)

    def test_missing_file(self):
        with self.assertRaises(ConfigurationError):
            read_manifest(self.path)

    def test_bad_number(self):
        with self.assertRaises(ConfigurationError):
            RunManifest.resolve("mnist-fc3", overrides={"epochs": "many"})

    def test_no_model(self):
        with self.assertRaises(ConfigurationError):
            RunManifest.resolve(None)

    def test_sign_concordant_only_for_fa(self):
        with self.assertRaises(ConfigurationError):
            RunManifest.resolve("mnist-fc3", overrides={
                "algorithm": "DFA", "feedback_policy": "sign_concordant",
            })
