"""
Tests the tape, broadcasting and the individual operations of `ivseg.autograd.tensor`.
"""

import pathlib
import sys
import unittest

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent))

import numpy as np
import scipy.special

import ivseg.autograd.tensor as tensor
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)


class TestTape(unittest.TestCase):

    def setUp(self) -> None:
        tensor.set_precision("double")
        tensor.reset_graph()

    def tearDown(self) -> None:
        tensor.reset_graph()

    def test_backward_accumulates_into_leaves(self):
        a = tensor.Tensor([1.0, 2.0, 3.0], grad_enabled=True)
        loss = tensor.sum(a * a) + tensor.sum(a)
        gradients = tensor.backward(loss)
        np.testing.assert_allclose(a.grad, 2.0 * a.data + 1.0)
        self.assertIn(a, gradients)

    def test_reused_input_sums_contributions(self):
        a = tensor.Tensor(3.0, grad_enabled=True)
        b = a * a
        tensor.backward(b * a)
        self.assertAlmostEqual(float(a.grad), 27.0)

    def test_second_backward_raises(self):
        a = tensor.Tensor([1.0], grad_enabled=True)
        loss = tensor.sum(a * 2.0)
        tensor.backward(loss)

        with self.assertRaises(tensor.GraphError):
            tensor.backward(loss)

    def test_stale_tensor_raises(self):
        a = tensor.Tensor([1.0, 2.0], grad_enabled=True)
        stale = a * 2.0
        tensor.reset_graph()

        with self.assertRaises(tensor.GraphError):
            _ = stale + a

    def test_loss_without_gradient_path_raises(self):
        with self.assertRaises(tensor.GraphError):
            tensor.backward(tensor.sum(tensor.Tensor([1.0, 2.0])))

    def test_non_scalar_loss_raises(self):
        a = tensor.Tensor([1.0, 2.0], grad_enabled=True)

        with self.assertRaises(tensor.ShapeError):
            tensor.backward(a * 2.0)

    def test_no_grad_records_nothing(self):
        a = tensor.Tensor([1.0, 2.0], grad_enabled=True)

        with tensor.no_grad():
            out = a * 3.0

        self.assertFalse(out.grad_enabled)
        self.assertEqual(0, len(tensor.graph()))

    def test_precision_switch(self):
        tensor.set_precision("single")

        try:
            self.assertEqual(np.float32, tensor.Tensor([1.0]).data.dtype)
        finally:
            tensor.set_precision("double")

        self.assertEqual(np.float64, tensor.Tensor([1.0]).data.dtype)

        with self.assertRaises(ValueError):
            tensor.set_precision("half")


class TestBroadcasting(unittest.TestCase):

    def setUp(self) -> None:
        tensor.set_precision("double")
        tensor.reset_graph()

    def test_leading_extent_gradient_is_summed_back(self):
        a = tensor.Tensor(np.ones((2, 3)), grad_enabled=True)
        b = tensor.Tensor([1.0, 2.0, 3.0], grad_enabled=True)
        tensor.backward(tensor.sum(a * b))
        np.testing.assert_allclose(b.grad, [2.0, 2.0, 2.0])
        np.testing.assert_allclose(a.grad, [[1.0, 2.0, 3.0]] * 2)

    def test_unit_extent_gradient_is_summed_back(self):
        a = tensor.Tensor(np.ones((3, 1)), grad_enabled=True)
        b = tensor.Tensor(np.ones((3, 4)))
        tensor.backward(tensor.sum(a + b))
        np.testing.assert_allclose(a.grad, np.full((3, 1), 4.0))

    def test_incompatible_shapes_report_both(self):
        a = tensor.Tensor(np.ones((2, 3)))
        b = tensor.Tensor(np.ones((4,)))

        with self.assertRaises(tensor.ShapeError) as context:
            _ = a + b

        self.assertEqual(((2, 3), (4,)), context.exception.shapes)

    def test_matmul_extent_mismatch(self):
        with self.assertRaises(tensor.ShapeError):
            tensor.matmul(tensor.Tensor(np.ones((2, 3))), tensor.Tensor(np.ones((4, 2))))


class TestOperations(unittest.TestCase):

    def setUp(self) -> None:
        tensor.set_precision("double")
        tensor.reset_graph()
        self.rng = np.random.default_rng(0)

    def test_softmax_mask_gives_exact_zeros(self):
        x = tensor.Tensor(self.rng.normal(size=(2, 4)))
        mask = np.array([[True, False, True, True], [False, False, True, False]])
        p = tensor.softmax(x, mask=mask).data
        self.assertTrue(np.all(p[~mask] == 0.0))
        np.testing.assert_allclose(p.sum(axis=1), 1.0)
        self.assertEqual(1.0, p[1, 2])

    def test_softmax_is_stable_for_large_inputs(self):
        np.testing.assert_array_equal([0.5, 0.5], tensor.softmax(tensor.Tensor(np.array([1000.0, 1000.0]))).data)
        np.testing.assert_allclose([0.25, 0.75], tensor.softmax(tensor.Tensor(np.array([0.0, np.log(3.0)]))).data,
            rtol=0, atol=1e-12)
        x = self.rng.normal(size=(3, 6))
        p = tensor.softmax(tensor.Tensor(x + 1e4), axis=1).data
        self.assertTrue(np.all(np.isfinite(p)))
        np.testing.assert_allclose(1.0, p.sum(axis=1), rtol=0, atol=1e-6)
        np.testing.assert_allclose(scipy.special.softmax(x, axis=1), p, rtol=0, atol=1e-9)

    def test_softmax_fully_hidden_row_raises(self):
        with self.assertRaises(ValueError):
            tensor.softmax(tensor.Tensor(np.zeros((2, 2))), mask=np.array([[True, False], [False, False]]))

    def test_log_softmax_matches_scipy(self):
        x = self.rng.normal(size=(3, 5))
        np.testing.assert_allclose(tensor.log_softmax(tensor.Tensor(x)).data, scipy.special.log_softmax(x, axis=-1))

    def test_gelu_and_sigmoid_match_closed_forms(self):
        x = self.rng.normal(size=7)
        gelu = 0.5 * x * (1.0 + scipy.special.erf(x / np.sqrt(2.0)))
        np.testing.assert_allclose(tensor.gelu(tensor.Tensor(x)).data, gelu)
        np.testing.assert_allclose(tensor.sigmoid(tensor.Tensor(x)).data, scipy.special.expit(x))

    def test_layer_norm_statistics(self):
        out = tensor.layer_norm(tensor.Tensor(self.rng.normal(3.0, 2.0, (4, 16)))).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.std(axis=-1), 1.0, atol=1e-3)

    def test_embedding_gradient_scatters_repeated_ids(self):
        table = tensor.Tensor(np.zeros((4, 2)), grad_enabled=True)
        tensor.backward(tensor.sum(tensor.embedding(table, [1, 1, 3])))
        np.testing.assert_allclose(table.grad, [[0, 0], [2, 2], [0, 0], [1, 1]])

    def test_narrow_and_concat(self):
        a = tensor.Tensor(np.arange(6.0).reshape(3, 2), grad_enabled=True)
        b = tensor.Tensor(np.zeros((0, 2)))
        joined = tensor.concat([a, b], axis=0)
        part = tensor.narrow(joined, 0, 1, 2)
        np.testing.assert_array_equal(part.data, [[2, 3], [4, 5]])
        tensor.backward(tensor.sum(part))
        np.testing.assert_array_equal(a.grad, [[0, 0], [1, 1], [1, 1]])

    def test_narrow_out_of_range(self):
        with self.assertRaises(IndexError):
            tensor.narrow(tensor.Tensor(np.zeros((3, 2))), 0, 2, 2)

    def test_max_gradient_goes_to_argmax(self):
        x = tensor.Tensor([[1.0, 5.0, 2.0], [7.0, 0.0, 3.0]], grad_enabled=True)
        tensor.backward(tensor.sum(tensor.max(x, axis=1)))
        np.testing.assert_array_equal(x.grad, [[0, 1, 0], [1, 0, 0]])


if __name__ == "__main__":
    unittest.main()
