"""Unit tests for the log summarizer."""

import doctest
from pathlib import Path

import numpy as np
import pytest

from gora_desk.utils import summarizer as summarizer_module
from gora_desk.utils.summarizer import LogSummarizer


class TestLogSummarizer:
    """Test the LogSummarizer class."""

    @pytest.fixture
    def summarizer(self):
        """Create a summarizer instance."""
        return LogSummarizer()

    def test_summarize_array_empty(self, summarizer):
        """Test summarizing a missing array."""
        assert summarizer.summarize_array(None) == "[empty]"

    def test_summarize_array_shape_and_norm(self, summarizer):
        """Test arrays are described by shape, dtype and Frobenius norm."""
        assert summarizer.summarize_array(np.eye(3)) == "[ndarray 3x3 float64 fro=1.732e+00]"
        assert summarizer.summarize_array(np.zeros((64, 8))) == (
            "[ndarray 64x8 float64 fro=0.000e+00]"
        )

    def test_summarize_array_non_numeric(self, summarizer):
        """Test non-numeric arrays omit the norm."""
        assert summarizer.summarize_array(np.array(["a", "b"])) == "[ndarray 2 <U1]"

    def test_summarize_sequence(self, summarizer):
        """Test short sequences are kept and long ones collapsed."""
        assert summarizer.summarize_sequence([1, 2, 3]) == [1, 2, 3]
        assert summarizer.summarize_sequence(list(range(95))) == "[list_with_95_items]"

    def test_fingerprint_is_stable(self, summarizer):
        """Test fingerprints are deterministic and short."""
        assert summarizer.fingerprint(None) == "[empty]"
        assert summarizer.fingerprint(b"") == "[empty]"
        first = summarizer.fingerprint(b"GMAT payload")
        assert first == summarizer.fingerprint(b"GMAT payload")
        assert first.startswith("sha_")
        assert len(first) == len("sha_") + 6
        assert first != summarizer.fingerprint(b"GMAT payload 2")

    def test_summarize_value_types(self, summarizer):
        """Test scalar, path and numpy scalar handling."""
        assert summarizer.summarize_value(3) == 3
        assert summarizer.summarize_value("gora") == "gora"
        assert summarizer.summarize_value(None) is None
        assert summarizer.summarize_value(np.float64(0.5)) == 0.5
        assert isinstance(summarizer.summarize_value(np.int64(4)), int)
        assert summarizer.summarize_value(Path("runs/a")) == "runs/a"
        assert summarizer.summarize_value(object()) == "[object]"

    def test_summarize_dict_recursive(self, summarizer):
        """Test nested dictionaries are summarized recursively."""
        data = {
            "G": np.ones((2, 2)),
            "step": 3,
            "nested": {"ranks": {0: 8, 1: 4}, "trace": list(range(20))},
        }
        result = summarizer.summarize_dict(data)
        assert result["G"] == "[ndarray 2x2 float64 fro=2.000e+00]"
        assert result["step"] == 3
        assert result["nested"]["ranks"] == {"0": 8, "1": 4}
        assert result["nested"]["trace"] == "[list_with_20_items]"

    def test_summarize_dict_does_not_mutate(self, summarizer):
        """Test the input dictionary is left untouched."""
        grad = np.ones((3, 3))
        data = {"G": grad, "layers": [0, 1]}
        summarizer.summarize_dict(data)
        assert data["G"] is grad
        assert data["layers"] == [0, 1]

    def test_custom_inline_limit(self):
        """Test the inline limit is configurable."""
        summarizer = LogSummarizer(max_inline_items=2)
        assert summarizer.summarize_sequence([1, 2]) == [1, 2]
        assert summarizer.summarize_sequence([1, 2, 3]) == "[list_with_3_items]"


class TestSummarizerDocExamples:
    """Test the usage examples in the summarizer's docstrings."""

    def test_docstring_examples_run(self):
        """Test every docstring example executes and prints what it shows."""
        results = doctest.testmod(summarizer_module, verbose=False)
        assert results.attempted >= 8
        assert results.failed == 0
