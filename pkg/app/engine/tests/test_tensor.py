"""tests for tensors, rng streams and products"""
import numpy as np
from django.test import SimpleTestCase

from engine.exceptions import ConfigurationError, ContractViolation, DimensionError
from engine.ledger import MemoryLedger, use_ledger
from engine.tensor import (
    Normal,
    Rng,
    Tensor,
    Uniform,
    assign_,
    dtype_for,
    hadamard,
    matmul,
    matmul_transpose_left,
    matmul_transpose_right,
    outer,
    random_fill,
    scaled_subtract_,
)


def tensor(values, tag="t", mutable=False):
    return Tensor(np.array(values, dtype=np.float64), tag, mutable=mutable)


class TensorTests(SimpleTestCase):
    """test tensor construction and ledger reporting"""

    def test_tensor_reports_alloc_and_free(self):
        """test a tensor allocs once and frees once"""
        ledger = MemoryLedger()
        with use_ledger(ledger):
            t = Tensor(np.zeros((2, 3), dtype=np.float32), "activation:a1")
            self.assertEqual(ledger.live_bytes, 24)
            t.free()
            t.free()

        self.assertEqual(ledger.live_bytes, 0)
        self.assertEqual(len(ledger.timeline.events), 2)
        self.assertFalse(t.is_live)

    def test_tensor_without_ledger(self):
        """test tensors work when no ledger is active"""
        t = tensor([1.0, 2.0])
        t.free()
        self.assertEqual(t.nbytes, 16)

    def test_immutable_tensor_is_read_only(self):
        t = tensor([1.0, 2.0])
        with self.assertRaises(ValueError):
            t.data[0] = 3.0

    def test_empty_dimension_raises(self):
        with self.assertRaises(DimensionError):
            Tensor(np.zeros((0, 3)), "t")

    def test_unknown_precision(self):
        with self.assertRaises(ConfigurationError):
            dtype_for("f16")


class RngTests(SimpleTestCase):
    """test seeded streams"""

    def test_same_stream_same_values(self):
        a = Rng(7).substream(2, 3).generator().uniform(size=5)
        b = Rng(7).substream(2, 3).generator().uniform(size=5)
        np.testing.assert_array_equal(a, b)

    def test_streams_are_independent_of_draw_order(self):
        """test a stream does not depend on what was drawn before"""
        root = Rng(7)
        root.substream(1).generator().uniform(size=100)
        first = root.substream(2).generator().uniform(size=3)
        second = Rng(7).substream(2).generator().uniform(size=3)
        np.testing.assert_array_equal(first, second)

    def test_different_streams_differ(self):
        a = Rng(7).substream(1).generator().uniform(size=5)
        b = Rng(7).substream(2).generator().uniform(size=5)
        self.assertFalse(np.array_equal(a, b))

    def test_negative_seed_rejected(self):
        with self.assertRaises(ConfigurationError):
            Rng(-1)

    def test_random_fill_bounds_and_validation(self):
        t = random_fill(Rng(0), (50, 4), Uniform(-0.5, 0.5), tag="w")
        self.assertTrue(np.all(np.abs(t.data) <= 0.5))
        self.assertEqual(t.dtype, np.float32)
        with self.assertRaises(ConfigurationError):
            random_fill(Rng(0), (2, 2), Normal(0.0, 0.0))
        with self.assertRaises(ConfigurationError):
            random_fill(Rng(0), (2, 2), Uniform(1.0, 1.0))


class ProductTests(SimpleTestCase):
    """test matrix products and in-place updates"""

    def test_matmul(self):
        c = matmul(tensor([[1, 2], [3, 4]]), tensor([[5, 6], [7, 8]]))
        np.testing.assert_array_equal(c.data, [[19, 22], [43, 50]])

    def test_matmul_dimension_error(self):
        with self.assertRaises(DimensionError):
            matmul(tensor([[1, 2, 3]]), tensor([[1, 2, 3]]))

    def test_matmul_transpose_left(self):
        a = tensor([[1, 2], [3, 4]])
        b = tensor([[1, 0], [0, 1]])
        c = matmul_transpose_left(a, b, scale=0.5)
        np.testing.assert_array_equal(c.data, 0.5 * a.data.T)

    def test_matmul_transpose_right_with_bias(self):
        x = tensor([[1, 2]])
        w = tensor([[1, 1], [2, 0], [0, 3]])
        b = tensor([1, 1, 1])
        z = matmul_transpose_right(x, w, bias=b)
        np.testing.assert_array_equal(z.data, [[4, 3, 7]])

    def test_matmul_transpose_right_vector(self):
        z = matmul_transpose_right(tensor([1, 2]), tensor([[1, 1], [2, 0]]))
        np.testing.assert_array_equal(z.data, [3, 2])

    def test_matmul_transpose_right_bias_mismatch(self):
        with self.assertRaises(DimensionError):
            matmul_transpose_right(tensor([[1, 2]]), tensor([[1, 1]]),
                                   bias=tensor([1, 2]))

    def test_outer_and_hadamard(self):
        np.testing.assert_array_equal(
            outer(tensor([1, 2]), tensor([3, 4, 5])).data,
            [[3, 4, 5], [6, 8, 10]],
        )
        np.testing.assert_array_equal(
            hadamard(tensor([1, 2]), tensor([3, 4])).data, [3, 8],
        )
        with self.assertRaises(DimensionError):
            hadamard(tensor([1, 2]), tensor([1, 2, 3]))

    def test_scaled_subtract(self):
        """test param 1, grad 1, lr 0.1 gives 0.9"""
        param = tensor([1.0], mutable=True)
        scaled_subtract_(param, tensor([1.0]), 0.1)
        self.assertAlmostEqual(param.data[0], 0.9)

    def test_scaled_subtract_needs_mutable_target(self):
        with self.assertRaises(ContractViolation):
            scaled_subtract_(tensor([1.0]), tensor([1.0]), 0.1)

    def test_assign_keeps_allocation(self):
        ledger = MemoryLedger()
        with use_ledger(ledger):
            target = tensor([0.0, 0.0], mutable=True)
            assign_(target, [1.0, 2.0])
        np.testing.assert_array_equal(target.data, [1.0, 2.0])
        self.assertEqual(len(ledger.timeline.events), 1)
