"""Tests for the module registry and state dicts."""

import numpy as np
import pytest

from trans2unet.nn import BatchNorm2d, ConvBlock, Dropout, Module, ModuleList, Parameter
from trans2unet.utils.exceptions import CheckpointError
from trans2unet.utils.random import stream


class Pair(Module):
    def __init__(self):
        super().__init__()
        self.first = ConvBlock(1, 2, stream(0, "init"))
        self.scale = Parameter(np.ones(3))
        self.blocks = ModuleList([Dropout(0.5), BatchNorm2d(2)])


class TestRegistry:
    """Tests for parameter, buffer and child registration."""

    def test_names_follow_assignment_order(self):
        """Test dotted names walk modules in registration order."""
        names = [name for name, _ in Pair().named_parameters()]
        assert names == [
            "scale",
            "first.conv.weight",
            "first.conv.bias",
            "first.bn.gamma",
            "first.bn.beta",
            "blocks.1.gamma",
            "blocks.1.beta",
        ]

    def test_buffers_are_named(self):
        """Test batch-norm statistics are registered as buffers."""
        names = [name for name, _ in Pair().named_buffers()]
        assert names == [
            "first.bn.running_mean",
            "first.bn.running_var",
            "first.bn.num_batches_tracked",
            "blocks.1.running_mean",
            "blocks.1.running_var",
            "blocks.1.num_batches_tracked",
        ]

    def test_num_parameters(self):
        """Test the count sums every parameter element."""
        # conv 1*2*9+2, bn 2+2, scale 3, second bn 2+2
        assert Pair().num_parameters() == 20 + 4 + 3 + 4

    def test_train_eval_propagates(self):
        """Test mode switches reach every descendant."""
        model = Pair().eval()
        assert all(not module.training for _, module in model.named_modules())
        model.train()
        assert all(module.training for _, module in model.named_modules())

    def test_module_list_indexing(self):
        """Test ModuleList supports len, iteration and indexing."""
        blocks = Pair().blocks
        assert len(blocks) == 2
        assert isinstance(blocks[1], BatchNorm2d)
        assert [type(m).__name__ for m in blocks] == ["Dropout", "BatchNorm2d"]

    def test_set_dropout_rng(self):
        """Test the generator reaches every dropout layer."""
        model = Pair()
        generator = np.random.default_rng(0)
        model.set_dropout_rng(generator)
        assert model.blocks[0].rng is generator

    def test_forward_not_implemented(self):
        """Test calling a bare Module fails clearly."""
        with pytest.raises(NotImplementedError):
            Module()(1)


class TestStateDict:
    """Tests for saving and restoring module state."""

    def test_round_trip(self):
        """Test a state dict restores parameters and buffers into a fresh module."""
        source = Pair()
        source.scale.data[:] = [1.0, 2.0, 3.0]
        source.first.bn.running_mean[:] = [0.5, -0.5]
        target = Pair()
        target.load_state_dict(source.state_dict())
        np.testing.assert_array_equal(target.scale.data, [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(target.first.bn.running_mean, [0.5, -0.5])

    def test_state_dict_holds_copies(self):
        """Test mutating the state dict leaves the module untouched."""
        model = Pair()
        state = model.state_dict()
        state["scale"][:] = 9.0
        np.testing.assert_array_equal(model.scale.data, np.ones(3))

    def test_missing_tensor(self):
        """Test a missing tensor is named in the error."""
        state = Pair().state_dict()
        del state["scale"]
        with pytest.raises(CheckpointError, match="missing.*scale"):
            Pair().load_state_dict(state)

    def test_unexpected_tensor(self):
        """Test an extra tensor is rejected."""
        state = Pair().state_dict()
        state["extra.weight"] = np.zeros(1)
        with pytest.raises(CheckpointError, match="unexpected.*extra.weight"):
            Pair().load_state_dict(state)

    def test_shape_mismatch(self):
        """Test a tensor of the wrong shape is rejected."""
        state = Pair().state_dict()
        state["scale"] = np.zeros(4)
        with pytest.raises(CheckpointError, match="'scale' has shape"):
            Pair().load_state_dict(state)
