"""Log summarization utilities for numerical payloads.

Stage arguments and results routinely carry whole matrices. Writing those
verbatim into JSON log lines makes the logs unreadable and huge, so the
summarizer replaces arrays and long sequences with compact descriptors while
keeping scalars intact.

Example:
    >>> summarizer = LogSummarizer(max_inline_items=4)
    >>> summarizer.summarize_array(np.eye(3))
    '[ndarray 3x3 float64 fro=1.732e+00]'
    >>> summarizer.summarize_sequence(list(range(95)))
    '[list_with_95_items]'
    >>> summarizer.summarize_sequence((1, 2))
    [1, 2]
"""

import hashlib
from pathlib import Path
from typing import Any

import numpy as np


class LogSummarizer:
    """Replaces bulky values in log payloads with short descriptors.

    Attributes:
        max_inline_items: Sequences up to this length are logged as-is.
    """

    def __init__(self, max_inline_items: int = 8):
        """Initialize the summarizer.

        Args:
            max_inline_items: Longest list/tuple that is kept inline.
        """
        self.max_inline_items = max_inline_items

    def summarize_array(self, array: np.ndarray | None) -> str:
        """Describe an array by shape, dtype and Frobenius norm.

        Examples:
            >>> LogSummarizer().summarize_array(np.zeros((64, 8)))
            '[ndarray 64x8 float64 fro=0.000e+00]'
            >>> LogSummarizer().summarize_array(None)
            '[empty]'
        """
        if array is None:
            return "[empty]"

        shape = "x".join(str(d) for d in array.shape) or "scalar"
        if array.size and np.issubdtype(array.dtype, np.number):
            norm = float(np.linalg.norm(array.astype(np.float64).ravel()))
            return f"[ndarray {shape} {array.dtype} fro={norm:.3e}]"
        return f"[ndarray {shape} {array.dtype}]"

    def summarize_sequence(self, values: list[Any] | tuple[Any, ...]) -> Any:
        """Keep short sequences, collapse long ones to a length marker."""
        if len(values) <= self.max_inline_items:
            return [self.summarize_value(v) for v in values]
        return f"[list_with_{len(values)}_items]"

    def fingerprint(self, payload: bytes | None) -> str:
        """Short content hash, traceable across log lines.

        The hash is the first 6 hex digits of SHA-256; empty payloads give
        the same marker as a missing array.

        Examples:
            >>> len(LogSummarizer().fingerprint(b"GMAT"))
            10
            >>> LogSummarizer().fingerprint(b"")
            '[empty]'
        """
        if not payload:
            return "[empty]"
        return f"sha_{hashlib.sha256(payload).hexdigest()[:6]}"

    def summarize_value(self, value: Any) -> Any:
        """Summarize a single value of any supported type."""
        if isinstance(value, np.ndarray):
            return self.summarize_array(value)
        if isinstance(value, np.generic):
            return value.item()
        if isinstance(value, dict):
            return self.summarize_dict(value)
        if isinstance(value, (list, tuple)):
            return self.summarize_sequence(value)
        if isinstance(value, bytes):
            return self.fingerprint(value)
        if isinstance(value, Path):
            return str(value)
        if isinstance(value, (str, int, float, bool, type(None))):
            return value
        return f"[{type(value).__name__}]"

    def summarize_dict(self, data: dict[str, Any]) -> dict[str, Any]:
        """Summarize a dictionary recursively.

        Returns a new dictionary; the input is never modified.

        Examples:
            >>> LogSummarizer().summarize_dict({"G": np.ones((2, 2)), "step": 3})
            {'G': '[ndarray 2x2 float64 fro=2.000e+00]', 'step': 3}
        """
        return {str(key): self.summarize_value(value) for key, value in data.items()}
