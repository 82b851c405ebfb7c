"""Tests for basic layers and the residual CNN encoder."""

import numpy as np
import pytest

from trans2unet.nn import (
    BatchNorm2d,
    CnnEncoder,
    Conv2d,
    ConvBlock,
    DenseProjection,
    Dropout,
    Linear,
    ResidualStage,
    conv_block_parameter_count,
    conv_parameter_count,
)
from trans2unet.nn.init import kaiming_uniform, trunc_normal
from trans2unet.tensor import Tensor, ops
from trans2unet.utils.exceptions import ShapeError, ValidationError
from trans2unet.utils.random import stream


class TestInit:
    """Tests for weight initializers."""

    def test_kaiming_bound(self):
        """Test Kaiming uniform values stay within sqrt(6/fan_in)."""
        weights = kaiming_uniform((8, 4, 3, 3), stream(0, "init"))
        assert np.abs(weights).max() <= np.sqrt(6.0 / 36.0)

    def test_trunc_normal_is_truncated(self):
        """Test truncated normal values stay within two deviations."""
        weights = trunc_normal((2000,), stream(0, "init"), std=0.02)
        assert np.abs(weights).max() <= 0.04
        assert weights.std() == pytest.approx(0.0176, abs=0.002)

    def test_same_seed_same_weights(self):
        """Test a seed reproduces the same layer weights."""
        a = Conv2d(3, 4, 3, stream(5, "init"))
        b = Conv2d(3, 4, 3, stream(5, "init"))
        np.testing.assert_array_equal(a.weight.data, b.weight.data)


class TestConv2d:
    """Tests for the convolution layer."""

    def test_parameter_count(self):
        """Test conv and conv-block closed forms match the layers."""
        rng = stream(0, "init")
        assert Conv2d(3, 5, 3, rng).num_parameters() == conv_parameter_count(3, 5, 3) == 140
        assert ConvBlock(3, 5, rng).num_parameters() == conv_block_parameter_count(3, 5, 3) == 150
        assert ConvBlock(3, 5, rng, use_bn=False).num_parameters() == 140

    def test_rejects_even_same_kernel(self):
        """Test even kernels need valid padding."""
        with pytest.raises(ValidationError):
            Conv2d(1, 1, 2, stream(0, "init"))
        assert Conv2d(1, 1, 2, stream(0, "init"), stride=2, padding="valid").kernel == 2

    def test_rejects_unknown_init(self):
        """Test weight_init names are validated."""
        with pytest.raises(ValidationError):
            Conv2d(1, 1, 3, stream(0, "init"), weight_init="xavier")

    def test_conv_block_is_nonnegative(self, rng):
        """Test the ReLU at the end of a conv block."""
        block = ConvBlock(2, 3, stream(0, "init"), dilation=2)
        out = block(Tensor(rng.normal(size=(2, 2, 6, 6))))
        assert out.shape == (2, 3, 6, 6)
        assert out.data.min() >= 0.0


class TestBatchNorm:
    """Tests for the batch-norm layer."""

    def test_fresh_eval_is_affine_only(self):
        """Test eval before training applies gamma and beta to the raw input."""
        bn = BatchNorm2d(2).eval()
        x = np.arange(8, dtype=np.float32).reshape(1, 2, 2, 2)
        np.testing.assert_allclose(bn(Tensor(x)).data, x / np.sqrt(1.0 + 1e-5), rtol=1e-6)

    def test_first_batch_sets_running_stats(self):
        """Test the first training batch replaces the initial statistics."""
        bn = BatchNorm2d(1)
        x = np.array([1.0, 3.0, 5.0, 7.0], dtype=np.float32).reshape(1, 1, 2, 2)
        bn(Tensor(x))
        assert bn.running_mean[0] == pytest.approx(4.0)
        assert bn.running_var[0] == pytest.approx(20.0 / 3.0)
        assert bn.num_batches_tracked[0] == 1.0

    def test_cumulative_average_then_momentum(self):
        """Test the running mean averages early batches and then decays with momentum."""
        bn = BatchNorm2d(1, momentum=0.25)
        for value in (2.0, 4.0, 6.0, 8.0):
            bn(Tensor(np.full((2, 1, 2, 2), value, dtype=np.float32)))
        assert bn.running_mean[0] == pytest.approx(5.0)
        bn(Tensor(np.full((2, 1, 2, 2), 13.0, dtype=np.float32)))
        assert bn.running_mean[0] == pytest.approx(0.75 * 5.0 + 0.25 * 13.0)

    def test_eval_does_not_count_batches(self):
        """Test eval passes leave the statistics and the batch count alone."""
        bn = BatchNorm2d(1)
        bn(Tensor(np.full((2, 1, 2, 2), 3.0, dtype=np.float32)))
        bn.eval()
        bn(Tensor(np.full((2, 1, 2, 2), 50.0, dtype=np.float32)))
        assert bn.running_mean[0] == pytest.approx(3.0)
        assert bn.num_batches_tracked[0] == 1.0

    def test_eval_after_first_batch_matches_batch_statistics(self):
        """Test eval right after one training batch normalizes with that batch's mean."""
        bn = BatchNorm2d(2)
        x = np.random.default_rng(0).normal(2.0, 3.0, size=(4, 2, 3, 3)).astype(np.float32)
        bn(Tensor(x))
        out = bn.eval()(Tensor(x)).data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-5)


class TestLinear:
    """Tests for the linear layer."""

    def test_applies_over_last_axis(self, rng):
        """Test x @ W + b on a token tensor."""
        layer = Linear(4, 3, stream(0, "init"))
        layer.bias.data[:] = [1.0, 2.0, 3.0]
        x = rng.normal(size=(2, 5, 4)).astype(np.float32)
        expected = x @ layer.weight.data + layer.bias.data
        np.testing.assert_allclose(layer(Tensor(x)).data, expected, rtol=1e-5, atol=1e-6)

    def test_rejects_wrong_width(self):
        """Test the input width is checked."""
        with pytest.raises(ShapeError):
            Linear(4, 3, stream(0, "init"))(Tensor(np.zeros((2, 5))))


class TestDropout:
    """Tests for the dropout layer."""

    def test_eval_is_identity(self):
        """Test dropout passes the input through in eval mode."""
        layer = Dropout(0.5).eval()
        x = Tensor(np.ones(4))
        assert layer(x) is x

    def test_rejects_p_one(self):
        """Test p = 1 is invalid."""
        with pytest.raises(ValidationError):
            Dropout(1.0)

    def test_training_without_generator_fails(self):
        """Test a layer left without a generator refuses to draw a mask."""
        with pytest.raises(ValidationError):
            Dropout(0.5)(Tensor(np.ones(4)))

    def test_masks_follow_the_generator(self):
        """Test two layers given equal seeds drop the same elements."""
        first, second = Dropout(0.5), Dropout(0.5)
        first.rng, second.rng = stream(4, "dropout"), stream(4, "dropout")
        x = Tensor(np.ones(64))
        np.testing.assert_array_equal(first(x).data, second(x).data)


class TestDenseProjection:
    """Tests for the multi-source 1×1 projection."""

    def test_matches_concatenated_conv(self, float64, rng):
        """Test slicing the weight per source equals a 1×1 conv on the concatenation."""
        proj = DenseProjection([3, 2], 4, stream(0, "init"))
        proj.bias.data[:] = rng.normal(size=4)
        a = Tensor(rng.normal(size=(2, 3, 4, 4)))
        b = Tensor(rng.normal(size=(2, 2, 4, 4)))
        expected = ops.conv2d(ops.concat([a, b], axis=1), proj.weight, proj.bias, padding="valid")
        np.testing.assert_allclose(proj([a, b]).data, expected.data, rtol=1e-12, atol=1e-12)

    def test_source_count_checked(self):
        """Test the number of sources must match the declared widths."""
        proj = DenseProjection([3, 2], 4, stream(0, "init"))
        with pytest.raises(ShapeError):
            proj([Tensor(np.zeros((1, 3, 2, 2)))])

    def test_rejects_empty_sources(self):
        """Test at least one positive source width is required."""
        with pytest.raises(ValidationError):
            DenseProjection([], 4, stream(0, "init"))


class TestCnnEncoder:
    """Tests for the residual encoder."""

    def test_output_resolutions(self, rng):
        """Test the encoder returns H/8 features and skips at H/2 and H/4."""
        encoder = CnnEncoder(1, [2, 4, 8], stream(0, "init"))
        features, skips = encoder(Tensor(rng.random((2, 1, 16, 16))))
        assert features.shape == (2, 8, 2, 2)
        assert [s.shape for s in skips] == [(2, 2, 8, 8), (2, 4, 4, 4)]
        assert encoder.out_channels == 8

    def test_stage_parameter_count(self):
        """Test the residual stage closed form."""
        stage = ResidualStage(3, 6, stream(0, "init"))
        assert stage.num_parameters() == ResidualStage.parameter_count(3, 6)

    def test_needs_three_widths(self):
        """Test the width list length is validated."""
        with pytest.raises(ValidationError):
            CnnEncoder(1, [2, 4], stream(0, "init"))

    def test_rejects_indivisible_input(self):
        """Test the spatial size must divide by 8."""
        encoder = CnnEncoder(1, [2, 4, 8], stream(0, "init"))
        with pytest.raises(ShapeError):
            encoder(Tensor(np.zeros((1, 1, 12, 12))))
