"""
Tests split manifests and the graymap/pixmap codecs.
"""

import os
import pathlib
import sys
import tempfile
import unittest

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent))

import numpy as np

import ivseg.data_processing.image_io as image_io
import ivseg.data_processing.manifest as manifest
import ivseg.synthdata.corpus as corpus
import ivseg.synthdata.instruction as instruction
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)


class TestManifest(unittest.TestCase):

    def setUp(self) -> None:
        self.directory = tempfile.TemporaryDirectory()
        self.samples = corpus.generate_corpus(6, 5, {"easy": 0.5, "hard": 0.5}, {m: 0.25 for m in instruction.MODES},
            3, 16, n_workers=1)

    def tearDown(self) -> None:
        self.directory.cleanup()

    def test_round_trip(self):
        path = manifest.write_split(self.samples, self.directory.name, "train")
        self.assertEqual(manifest.manifest_path(self.directory.name, "train"), path)
        loaded = manifest.load_split(path)
        self.assertEqual([s.sample_id for s in self.samples], [s.sample_id for s in loaded])

        for a, b in zip(self.samples, loaded):
            self.assertEqual((a.mode, a.prompt, a.answer, a.instruction), (b.mode, b.prompt, b.answer, b.instruction))
            np.testing.assert_array_equal(a.clip, b.clip)
            np.testing.assert_array_equal(a.gt_masks, b.gt_masks)

    def test_missing_masks_are_itemized(self):
        path = manifest.write_split(self.samples, self.directory.name, "eval")
        records = manifest.read_manifest(path)
        os.remove(os.path.join(self.directory.name, records[0].mask_paths[0][0]))
        os.remove(os.path.join(self.directory.name, records[-1].mask_paths[-1][-1]))

        with self.assertRaises(manifest.ManifestError) as context:
            manifest.load_split(path)

        self.assertEqual(2, len(context.exception.problems))
        self.assertIn(records[0].sample_id, context.exception.problems[0])

    def test_malformed_lines(self):
        path = os.path.join(self.directory.name, "bad.tsv")

        with open(path, "w", encoding="utf-8") as f:
            f.write("a\tRES\tx.npy\tinstr\tanswer\n")
            f.write("b\tVQA\tx.npy\tinstr\tanswer\tm.pgm\n")

        with self.assertRaises(manifest.ManifestError) as context:
            manifest.read_manifest(path)

        self.assertEqual(2, len(context.exception.problems))

    def test_missing_manifest(self):
        with self.assertRaises(manifest.ManifestError):
            manifest.load_split(os.path.join(self.directory.name, "absent.tsv"))


class TestImageIo(unittest.TestCase):

    def setUp(self) -> None:
        self.directory = tempfile.TemporaryDirectory()

    def tearDown(self) -> None:
        self.directory.cleanup()

    def test_graymap_and_pixmap(self):
        rng = np.random.default_rng(0)
        mask = rng.random((5, 7)) < 0.5
        pgm = os.path.join(self.directory.name, "m.pgm")
        image_io.write_pgm(pgm, mask)
        np.testing.assert_array_equal(mask, image_io.read_mask(pgm))
        pixels = rng.integers(0, 256, (4, 3, 3)).astype(np.uint8)
        ppm = os.path.join(self.directory.name, "p.ppm")
        image_io.write_ppm(ppm, pixels)
        np.testing.assert_array_equal(pixels, image_io.read_ppm(ppm))

    def test_header_comments(self):
        path = os.path.join(self.directory.name, "c.pgm")

        with open(path, "wb") as f:
            f.write(b"P5\n# made by hand\n2 1\n255\n\x00\xff")

        np.testing.assert_array_equal([[0, 255]], image_io.read_pgm(path))

    def test_rejected_files(self):
        path = os.path.join(self.directory.name, "x.pgm")

        with open(path, "wb") as f:
            f.write(b"P6\n1 1\n255\n\x00\x00\x00")

        with self.assertRaises(ValueError):
            image_io.read_pgm(path)

        with open(path, "wb") as f:
            f.write(b"P5\n2 2\n255\n\x00")

        with self.assertRaises(ValueError):
            image_io.read_pgm(path)

        with self.assertRaises(ValueError):
            image_io.write_ppm(path, np.zeros((2, 2)))


if __name__ == "__main__":
    unittest.main()
