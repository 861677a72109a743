"""
Tests panels, overlays and the loss chart.
"""

import os
import pathlib
import sys
import tempfile
import unittest

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent))

import numpy as np

import ivseg.data_processing.image_io as image_io
import ivseg.synthdata.corpus as corpus
import ivseg.synthdata.instruction as instruction
import ivseg.training.rendering as rendering
import ivseg.ut as ut
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)


class TestRendering(unittest.TestCase):

    def setUp(self) -> None:
        self.directory = tempfile.TemporaryDirectory()
        self.sample = corpus.generate_sample(0, 0, {"medium": 1.0}, {instruction.RVOS: 1.0}, 3, 16)
        self.gt = self.sample.union_mask()
        self.prediction = np.roll(self.gt, 1, axis=2)

    def tearDown(self) -> None:
        self.directory.cleanup()

    def test_panel_layout(self):
        frame = self.sample.clip[0]
        out = rendering.panel(frame, self.gt[0], self.prediction[0])
        self.assertEqual((16, 3 * 16 + 2), out.shape)
        np.testing.assert_array_equal(self.gt[0].astype(np.uint8) * 255, out[:, 17:33])
        np.testing.assert_array_equal(self.prediction[0].astype(np.uint8) * 255, out[:, 34:])
        self.assertTrue(np.all(out[:, 16] == rendering.SEPARATOR))

    def test_panel_shape_mismatch(self):
        with self.assertRaises(ValueError):
            rendering.panel(self.sample.clip[0], self.gt[0], self.prediction[0, :8])

    def test_overlay_marks_gt_contour(self):
        out = rendering.overlay(self.sample.clip[0], self.gt[0], np.zeros_like(self.gt[0]))
        self.assertEqual(self.sample.clip[0].shape, out.shape)
        edge = out[self.gt[0]].min(axis=1) == 1.0
        self.assertTrue(edge.any())

    def test_rerun_is_byte_identical(self):
        first = rendering.render_sample(self.sample, self.prediction, os.path.join(self.directory.name, "a"))
        second = rendering.render_sample(self.sample, self.prediction, os.path.join(self.directory.name, "b"))
        self.assertEqual(2 * self.sample.frames, len(first))

        for a, b in zip(first, second):
            with open(a, "rb") as fa, open(b, "rb") as fb:
                self.assertEqual(fa.read(), fb.read())

        np.testing.assert_array_equal(rendering.panel(self.sample.clip[1], self.gt[1], self.prediction[1]),
            image_io.read_pgm(first[2]))

    def test_loss_chart(self):
        trace = ut.Trace()

        for step in range(1, 6):
            trace.tick(step, loss=1.0 / step, dice=0.5 / step)

        path = rendering.loss_chart(trace, os.path.join(self.directory.name, "loss.svg"))

        with open(path, "r", encoding="utf-8") as f:
            content = f.read()

        self.assertIn("<svg", content)
        self.assertIn("dice", content)


if __name__ == "__main__":
    unittest.main()
