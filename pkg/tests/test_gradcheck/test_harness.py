"""Tests for finite-difference gradient checking."""

import numpy as np
import pytest

from trans2unet.gradcheck import (
    SUITES,
    GradCheckResult,
    check_gradients,
    relative_error,
    require_passing,
    resolve_suites,
    run_suite,
    run_suites,
    suite_names,
)
from trans2unet.gradcheck.suites import MODEL_ENTRIES
from trans2unet.tensor import Tensor, ops
from trans2unet.utils.exceptions import GradientCheckError, ValidationError
from trans2unet.utils.random import stream

MODEL_SUITES = {"unet_branch", "transunet_branch", "micro_model"}


class TestHarness:
    """Tests for the comparison itself."""

    def test_relative_error_floor(self):
        """Test tiny gradients are compared against the 1e-3 floor."""
        assert relative_error(1e-7, 0.0) == pytest.approx(1e-4)
        assert relative_error(2.0, 1.0) == pytest.approx(0.5)

    def test_correct_gradient_passes(self, float64, rng):
        """Test an exact gradient passes."""
        x = Tensor(rng.normal(size=5), requires_grad=True)
        result = check_gradients("square", lambda: ops.sum(ops.mul(x, x)), {"x": x}, rng)
        assert result.passed
        assert result.entries == 5

    def test_corrupted_gradient_fails(self, float64, rng):
        """Test perturbing the analytic gradient is detected."""
        x = Tensor(rng.normal(size=5), requires_grad=True)
        result = check_gradients(
            "square", lambda: ops.sum(ops.mul(x, x)), {"x": x}, rng, corrupt=True
        )
        assert not result.passed
        assert result.worst_input == "x"

    def test_inputs_are_restored(self, float64, rng):
        """Test perturbed entries are put back after checking."""
        values = rng.normal(size=(2, 3))
        x = Tensor(values.copy(), requires_grad=True)
        check_gradients("tanh-like", lambda: ops.sum(ops.gelu(x)), {"x": x}, rng)
        np.testing.assert_array_equal(x.data, values)

    def test_sampling_budget(self, float64, rng):
        """Test max_entries limits the checked entries per input."""
        x = Tensor(rng.normal(size=40), requires_grad=True)
        result = check_gradients("sum", lambda: ops.sum(x), {"x": x}, rng, max_entries=7)
        assert result.entries == 7


class TestSuites:
    """Tests for the registered suites."""

    @pytest.mark.parametrize("name", suite_names())
    def test_suite_passes(self, name):
        """Test every registered operation, block and model matches finite differences."""
        result = run_suite(name, seed=0)
        assert result.passed, f"{name}: {result.max_rel_error:.3e}"
        assert result.entries > 0
        if name in MODEL_SUITES:
            # every parameter tensor is visited, up to the model budget each
            _, inputs = SUITES[name].build(stream(0, "gradcheck"))
            assert len(inputs) > 10
            assert result.entries == sum(min(t.data.size, MODEL_ENTRIES) for t in inputs.values())

    @pytest.mark.parametrize("name", ["add", "matmul", "conv2d", "softmax", "layernorm"])
    def test_corruption_detected(self, name):
        """Test the self-test mode fails fully checked suites."""
        assert not run_suite(name, seed=0, corrupt=True).passed

    def test_registry_covers_context_modules(self):
        """Test both context variants and ASPP have suites."""
        assert {"wasp", "wasp_kc", "aspp", "transformer_block"} <= set(suite_names())

    def test_resolve(self):
        """Test "all" expands and unknown names are rejected."""
        assert resolve_suites("all") == suite_names()
        assert resolve_suites("relu") == ["relu"]
        with pytest.raises(ValidationError, match="Unknown gradient-check suite"):
            resolve_suites("tanh")

    def test_deterministic(self):
        """Test a suite result depends only on the seed."""
        first, second = run_suites(["conv2d", "conv2d"], seed=3)
        assert first.max_rel_error == second.max_rel_error

    def test_require_passing(self):
        """Test failures are collected into one error."""
        ok = GradCheckResult(name="a", max_rel_error=1e-8, entries=1)
        bad = GradCheckResult(name="b", max_rel_error=0.5, entries=1)
        require_passing([ok])
        with pytest.raises(GradientCheckError, match="b"):
            require_passing([ok, bad])
