"""Tests for the WASP, WASP-KC and ASPP context modules."""

import numpy as np
import pytest

from trans2unet.models import WaspConfig
from trans2unet.nn import (
    Aspp,
    Wasp,
    aspp_parameter_count,
    context_parameter_table,
    dense_skip_parameter_delta,
    wasp_parameter_count,
)
from trans2unet.tensor import Tensor
from trans2unet.utils.exceptions import ShapeError, ValidationError
from trans2unet.utils.random import stream

RATES = (1, 2, 4, 8)


def _kc_copy_of(wasp: Wasp) -> Wasp:
    """WASP-KC whose primary weight slices equal ``wasp`` and whose extra slices are zero."""
    kc = Wasp(wasp.in_channels, wasp.branch_channels, wasp.rates, True, stream(99, "init"))
    state = kc.state_dict()
    for name, value in wasp.state_dict().items():
        if state[name].shape == value.shape:
            state[name] = value
        else:
            widened = np.zeros_like(state[name])
            widened[:, : value.shape[1]] = value
            state[name] = widened
    kc.load_state_dict(state)
    return kc


class TestWasp:
    """Tests for the waterfall module."""

    @pytest.mark.parametrize("dense_skip", [False, True])
    def test_output_shape(self, dense_skip, rng):
        """Test the output has B channels at the input resolution."""
        module = Wasp(6, 4, RATES, dense_skip, stream(0, "init"))
        out = module(Tensor(rng.normal(size=(2, 6, 4, 4))))
        assert out.shape == (2, 4, 4, 4)

    @pytest.mark.parametrize("dense_skip", [False, True])
    @pytest.mark.parametrize("channels", [(8, 4), (32, 32), (5, 7)])
    def test_parameter_count_matches_module(self, dense_skip, channels):
        """Test the closed-form count equals the instantiated module."""
        C, B = channels
        module = Wasp(C, B, RATES, dense_skip, stream(0, "init"))
        assert module.num_parameters() == wasp_parameter_count(C, B, dense_skip)

    @pytest.mark.parametrize("channels", [(8, 4), (32, 32), (5, 7)])
    def test_dense_skip_delta(self, channels):
        """Test WASP-KC adds exactly sum B(2 cin + B) parameters over WASP."""
        C, B = channels
        delta = wasp_parameter_count(C, B, True) - wasp_parameter_count(C, B, False)
        assert delta == dense_skip_parameter_delta(C, B)
        assert delta == B * (2 * C + B) + 3 * B * (3 * B)

    def test_zeroed_dense_slices_reproduce_wasp(self, rng):
        """Test WASP-KC with zero extra slices equals WASP bit for bit."""
        wasp = Wasp(6, 4, RATES, False, stream(3, "init"))
        kc = _kc_copy_of(wasp)
        wasp.eval()
        kc.eval()
        for _ in range(20):
            x = Tensor(rng.normal(size=(2, 6, 8, 8)))
            np.testing.assert_array_equal(kc(x).data, wasp(x).data)

    def test_zeroed_dense_slices_reproduce_wasp_in_training(self, rng):
        """Test the equality also holds with batch statistics."""
        wasp = Wasp(6, 4, RATES, False, stream(3, "init"))
        kc = _kc_copy_of(wasp)
        x = Tensor(rng.normal(size=(2, 6, 8, 8)))
        np.testing.assert_array_equal(kc(x).data, wasp(x).data)

    def test_units_chain_through_atrous_features(self):
        """Test unit i > 1 reads B channels from the previous unit."""
        module = Wasp(6, 4, RATES, True, stream(0, "init"))
        assert module.units[0].atrous.conv.in_channels == 6
        assert all(unit.atrous.conv.in_channels == 4 for unit in list(module.units)[1:])
        assert [unit.atrous.conv.dilation for unit in module.units] == list(RATES)

    @pytest.mark.parametrize("rates", [(1, 2, 4), (1, 2, 2, 4), (0, 1, 2, 3), (8, 4, 2, 1)])
    def test_rejects_bad_rates(self, rates):
        """Test exactly four positive increasing rates are required."""
        with pytest.raises(ValidationError):
            Wasp(4, 4, rates, False, stream(0, "init"))

    def test_rejects_wrong_channels(self):
        """Test the input channel count is checked."""
        module = Wasp(4, 4, RATES, False, stream(0, "init"))
        with pytest.raises(ShapeError):
            module(Tensor(np.zeros((1, 3, 4, 4))))

    def test_from_config(self):
        """Test construction from a WaspConfig."""
        module = Wasp.from_config(WaspConfig(in_channels=8, branch_channels=4), stream(0, "init"))
        assert module.dense_skip
        assert module.branch_channels == 4


class TestAspp:
    """Tests for the parallel pyramid module."""

    def test_output_shape_and_count(self, rng):
        """Test shape and closed-form parameter count."""
        module = Aspp(6, 4, RATES, stream(0, "init"))
        assert module(Tensor(rng.normal(size=(2, 6, 4, 4)))).shape == (2, 4, 4, 4)
        assert module.num_parameters() == aspp_parameter_count(6, 4)


class TestContextTable:
    """Tests for the context-module comparison table."""

    def test_table_rows(self):
        """Test the table lists ASPP, WASP and WASP-KC counts."""
        table = context_parameter_table(WaspConfig(in_channels=32, branch_channels=32))
        assert list(table["module"]) == ["aspp", "wasp", "wasp_kc"]
        counts = dict(zip(table["module"], table["parameters"]))
        assert counts["wasp_kc"] - counts["wasp"] == dense_skip_parameter_delta(32, 32)
        assert counts["aspp"] == aspp_parameter_count(32, 32)
