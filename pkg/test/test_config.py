"""
Tests run configuration loading through the data-processing layering.
"""

import os
import pathlib
import sys
import tempfile
import unittest

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent))

import ivseg.config as config
import ivseg.data_processing.data_interface as data_interface
import ivseg.data_processing.data_provider as data_provider
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)


class TestRunConfig(unittest.TestCase):

    def setUp(self) -> None:
        self.directory = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.directory.name, "run.cfg")

    def tearDown(self) -> None:
        self.directory.cleanup()

    def _write(self, text):
        with open(self.path, "w", encoding="utf-8") as f:
            f.write(text)

        return self.path

    def test_load_with_defaults(self):
        cfg = config.RunConfig.load(self._write("# toy run\nmodel_dim = 32\nheads = 4\nlora_mode = true\n"))
        self.assertEqual(32, cfg.model_dim)
        self.assertEqual(4, cfg.heads)
        self.assertTrue(cfg.lora_mode)
        self.assertEqual(config.RunConfig().total_steps, cfg.total_steps)
        self.assertEqual(config.RunConfig().mode_mix, cfg.mode_mix)

    def test_unknown_key(self):
        with self.assertRaises(config.ConfigError) as context:
            config.RunConfig.load(self._write("model_dim = 32\nlearning_rate = 0.1\n"))

        self.assertIn("learning_rate", str(context.exception))

    def test_unparsable_value(self):
        with self.assertRaises(config.ConfigError):
            config.RunConfig.load(self._write("heads = four\n"))

        with self.assertRaises(config.ConfigError):
            config.RunConfig.load(self._write("ovp_enabled = maybe\n"))

    def test_malformed_line(self):
        with self.assertRaises(config.ConfigError):
            config.RunConfig.load(self._write("model_dim 32\n"))

        with self.assertRaises(config.ConfigError):
            config.RunConfig.load(self._write("seed = 1\nseed = 2\n"))

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            config.RunConfig.load(os.path.join(self.directory.name, "absent.cfg"))

    def test_range_violations_are_listed(self):
        with self.assertRaises(config.ConfigError) as context:
            config.RunConfig.from_rows([("model_dim", "30"), ("heads", "4"), ("warmup_steps", "9"),
                ("total_steps", "9"), ("fusion_mode", "fine")])

        message = str(context.exception)
        self.assertIn("heads=4", message)
        self.assertIn("warmup_steps=9", message)
        self.assertIn("fusion_mode", message)

    def test_mix_validation(self):
        with self.assertRaises(config.ConfigError):
            config.RunConfig().replace(mode_mix="RES:1,VQA:1")

        self.assertEqual({"easy": 0.5, "hard": 0.5}, config.RunConfig().replace(difficulty_mix="easy,hard").difficulties())

    def test_save_load_round_trip(self):
        cfg = config.make_test_config(lr=1.5e-3, vmtf_enabled=False, fusion_mode="global", train_manifest="a/b.csv")
        cfg.save(self.path)
        self.assertEqual(cfg, config.RunConfig.load(self.path))

    def test_test_config_is_valid(self):
        cfg = config.make_test_config()
        self.assertEqual(16, cfg.model_dim)
        self.assertEqual(2, cfg.t_r)

        with self.assertRaises(config.ConfigError):
            config.make_test_config(patch_size=3)


class TestDataInterfaces(unittest.TestCase):

    def setUp(self) -> None:
        self.schema = data_interface.KeySchema({"a": int, "b": float})

    def test_defaulting_chain(self):
        provider = data_provider.RamDataProvider(a="3")
        concrete = data_interface.ConcreteDataInterface(provider, self.schema)
        source = data_interface.DefaultingDataInterface(data_interface.ConstrainedDataInterface(concrete), {"b": 0.5})
        self.assertEqual(3, source.data("a"))
        self.assertEqual(0.5, source.data("b"))

        with self.assertRaises(config.ConfigError):
            source.data("c")

    def test_writes_are_key_checked(self):
        provider = data_provider.RamDataProvider()
        constrained = data_interface.ConstrainedDataInterface(data_interface.ConcreteDataInterface(provider, self.schema))
        constrained.set_data("7", "a")
        self.assertEqual(7, constrained.data("a"))

        with self.assertRaises(config.ConfigError):
            constrained.set_data("1", "c")

    def test_missing_without_default(self):
        concrete = data_interface.ConcreteDataInterface(data_provider.RamDataProvider(), self.schema)

        with self.assertRaises(data_interface.NoDataError):
            data_interface.DefaultingDataInterface(concrete).data("a")

    def test_key_value_parsing(self):
        rows = data_provider.parse_key_value_lines(["a = 1 # one", "", "  b=x y  "])
        self.assertEqual([("a", "1"), ("b", "x y")], rows)


if __name__ == "__main__":
    unittest.main()
