"""
Tests the pixel decoder, the segmentation decoder and final mask selection.
"""

import pathlib
import sys
import unittest

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent))

import numpy as np

import ivseg.autograd.tensor as tensor
import ivseg.model.segdec as segdec
import ivseg.model.vmtf as vmtf
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)


class TestSegmentationDecoder(unittest.TestCase):

    def setUp(self) -> None:
        tensor.set_precision("double")
        tensor.reset_graph()
        self.rng = np.random.default_rng(9)
        self.cfg = segdec.DecoderConfig(image_size=16, feature_stride=4, image_dim=3, pixel_dim=4, model_dim=8,
            heads=2, decoder_layers=2, pool_factor=4)
        self.decoder = segdec.SegmentationDecoder(self.cfg, self.rng)
        self.f_img = tensor.Tensor(self.rng.normal(size=(4, 4, 3)))
        self.text = vmtf.MultiGranularityText(tensor.Tensor(self.rng.normal(size=(3, 8))))
        self.e_m = tensor.Tensor(self.rng.normal(size=(5, 8)))

    def test_shapes(self):
        pixels = self.decoder.pixel_decode(self.f_img)
        self.assertEqual((16, 16, 4), pixels.pixel_map.shape)
        self.assertEqual((16, 4), pixels.coarse.shape)
        ms = self.decoder.predict(self.f_img, self.text, self.e_m, pixels)
        self.assertEqual((5, 16, 16), ms.mask_logits.shape)
        self.assertEqual((5,), ms.score_logits.shape)
        self.assertEqual(5, len(ms))

    def test_reused_pixels_match(self):
        pixels = self.decoder.pixel_decode(self.f_img)
        a = self.decoder.predict(self.f_img, self.text, self.e_m, pixels)
        b = self.decoder.predict(self.f_img, self.text, self.e_m)
        np.testing.assert_array_equal(a.mask_logits.data, b.mask_logits.data)

    def test_zero_refined_embeddings_give_even_odds(self):
        pixels = self.decoder.pixel_decode(self.f_img)
        refined = tensor.Tensor(np.zeros((5, self.cfg.pixel_dim)))
        ms = segdec.MaskSet(self.decoder.mask_logits(refined, pixels.pixel_map),
            self.decoder.score_logits(refined, self.text))
        np.testing.assert_array_equal(np.full((5, 16, 16), 0.5), ms.masks.data)
        np.testing.assert_array_equal(np.full(5, 0.5), ms.scores.data)

    def test_scores_ignore_the_order_of_text_rows(self):
        permuted = vmtf.MultiGranularityText(tensor.Tensor(self.text.embeds.data[[2, 0, 1]]))
        pixels = self.decoder.pixel_decode(self.f_img)
        a = self.decoder.predict(self.f_img, self.text, self.e_m, pixels)
        b = self.decoder.predict(self.f_img, permuted, self.e_m, pixels)
        np.testing.assert_allclose(a.score_logits.data, b.score_logits.data, rtol=0, atol=1e-12)
        np.testing.assert_array_equal(a.mask_logits.data, b.mask_logits.data)

    def test_scores_depend_on_pixels_only_through_refinement(self):
        pixels = self.decoder.pixel_decode(self.f_img)
        other = self.decoder.pixel_decode(tensor.Tensor(self.rng.normal(size=(4, 4, 3))))
        refined = self.decoder.refine_mask_embeddings(self.e_m, pixels.pixel_map)
        reference = self.decoder.predict(self.f_img, self.text, self.e_m, pixels)
        ms = segdec.MaskSet(self.decoder.mask_logits(refined, other.pixel_map),
            self.decoder.score_logits(refined, self.text))
        np.testing.assert_array_equal(reference.score_logits.data, ms.score_logits.data)
        self.assertFalse(np.allclose(reference.mask_logits.data, ms.mask_logits.data))

    def test_refinement_is_permutation_equivariant(self):
        pixels = self.decoder.pixel_decode(self.f_img)
        permutation = self.rng.permutation(5)
        base = self.decoder.refine_mask_embeddings(self.e_m, pixels.pixel_map).data
        permuted = self.decoder.refine_mask_embeddings(tensor.Tensor(self.e_m.data[permutation]), pixels.pixel_map)
        np.testing.assert_allclose(base[permutation], permuted.data, rtol=0, atol=1e-12)

    def test_duplicated_pixel_tokens_leave_refinement_unchanged(self):
        tokens = tensor.Tensor(self.rng.normal(size=(4, 8)))
        doubled = tensor.concat([tokens, tokens], axis=0)
        x, y = self.e_m, self.e_m

        for layer in self.decoder.layers:
            x = layer(x, tokens)
            y = layer(y, doubled)

        np.testing.assert_allclose(x.data, y.data, rtol=0, atol=1e-12)

    def test_feature_grid_must_match_stride(self):
        with self.assertRaises(tensor.ShapeError):
            self.decoder.pixel_decode(tensor.Tensor(np.zeros((2, 2, 3))))

    def test_mean_pooling_bounded_by_max(self):
        cfg = segdec.DecoderConfig(image_size=16, feature_stride=4, image_dim=3, pixel_dim=4, model_dim=8, heads=2,
            decoder_layers=1, score_pooling="mean")
        mean_decoder = segdec.SegmentationDecoder(cfg, np.random.default_rng(1))
        max_decoder = segdec.SegmentationDecoder(cfg, np.random.default_rng(1))
        max_decoder.cfg = segdec.DecoderConfig(image_size=16, feature_stride=4, image_dim=3, pixel_dim=4,
            model_dim=8, heads=2, decoder_layers=1, score_pooling="max")
        mean = mean_decoder.predict(self.f_img, self.text, self.e_m).score_logits.data
        top = max_decoder.predict(self.f_img, self.text, self.e_m).score_logits.data
        self.assertTrue(np.all(mean <= top + 1e-12))

    def test_config_validation(self):
        with self.assertRaises(ValueError):
            segdec.DecoderConfig(image_size=16, feature_stride=3)

        with self.assertRaises(ValueError):
            segdec.DecoderConfig(similarity="euclid")


class TestSelectFinal(unittest.TestCase):

    @staticmethod
    def _mask_set(scores):
        logits = -np.ones((len(scores), 2, 2))

        for j in range(len(scores)):
            logits[j].flat[j % 4] = 1.0

        return segdec.MaskSet(tensor.Tensor(logits), tensor.Tensor(scores))

    def test_union_of_confident_proposals(self):
        final = segdec.select_final(self._mask_set([2.0, -2.0, 3.0]), 0.5)
        np.testing.assert_array_equal([[True, False], [True, False]], final)

    def test_best_proposal_when_none_is_confident(self):
        ms = self._mask_set([-3.0, -1.0, -1.0])
        final = segdec.select_final(ms, 0.5)
        np.testing.assert_array_equal([[False, True], [False, False]], final)
        self.assertIs(final, ms.final_mask)

    def test_ties_go_to_the_lowest_index(self):
        final = segdec.select_final(self._mask_set([-1.0, -1.0, -1.0]), 0.5)
        np.testing.assert_array_equal([[True, False], [False, False]], final)

    def test_single_confident_proposal(self):
        final = segdec.select_final(self._mask_set([np.log(9.0)]), 0.5)
        np.testing.assert_array_equal([[True, False], [False, False]], final)


if __name__ == "__main__":
    unittest.main()
