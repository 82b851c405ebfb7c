"""Tests for the flat key = value configuration format."""

import pytest

from trans2unet.processors import (
    flatten_config,
    format_flat,
    format_value,
    parse_flat,
    parse_override,
    unflatten_config,
)
from trans2unet.utils.exceptions import ConfigValidationError


class TestFlatten:
    """Tests for nesting and flattening."""

    def test_flatten(self):
        """Test nested sections become dotted keys and lists stay leaves."""
        flat = flatten_config({"seed": 7, "wasp": {"dilation_rates": [1, 2, 4, 8]}})
        assert flat == {"seed": 7, "wasp.dilation_rates": [1, 2, 4, 8]}

    def test_unflatten(self):
        """Test dotted keys are regrouped into sections."""
        nested = unflatten_config({"seed": "7", "vit.layers": "2", "vit.heads": "4"})
        assert nested == {"seed": "7", "vit": {"layers": "2", "heads": "4"}}

    def test_unflatten_value_section_clash(self):
        """Test a key cannot be both a value and a section."""
        with pytest.raises(ConfigValidationError):
            unflatten_config({"vit": "1", "vit.layers": "2"})
        with pytest.raises(ConfigValidationError):
            unflatten_config({"vit.layers": "2", "vit": "1"})


class TestFormat:
    """Tests for rendering values and text."""

    @pytest.mark.parametrize(
        "value,text",
        [(True, "true"), (False, "false"), ([1, 2, 4, 8], "1,2,4,8"), (0.0003, "0.0003"), (32, "32")],
    )
    def test_format_value(self, value, text):
        """Test booleans, lists, floats and integers."""
        assert format_value(value) == text

    def test_format_flat(self):
        """Test the header is commented and keys keep their order."""
        text = format_flat({"b": 1, "a": True}, header="title")
        assert text == "# title\nb = 1\na = true\n"


class TestParse:
    """Tests for parsing text and overrides."""

    def test_parse_flat(self):
        """Test comments, blank lines and spacing are ignored."""
        text = "# header\n\ninput_size=32\nvit.layers = 2   # inline\n"
        assert parse_flat(text) == {"input_size": "32", "vit.layers": "2"}

    @pytest.mark.parametrize(
        "text,key",
        [("input_size 32", "input_size 32"), (" = 3", "<empty>"), ("a = 1\na = 2", "a")],
    )
    def test_parse_errors(self, text, key):
        """Test malformed lines, empty keys and duplicates name the offender."""
        with pytest.raises(ConfigValidationError) as exc_info:
            parse_flat(text)
        assert exc_info.value.key == key

    def test_parse_override(self):
        """Test command-line overrides split on the first '='."""
        assert parse_override("loss.kind=bce") == ("loss.kind", "bce")
        assert parse_override(" a = b=c ") == ("a", "b=c")
        with pytest.raises(ConfigValidationError):
            parse_override("=1")
