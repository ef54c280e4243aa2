"""Seeded random generation.

Every random draw in a run is traced back to one root seed. Sub-streams are
derived from (root, purpose tag, ids...) so that the order in which layers or
workers are processed never changes what they receive.
"""

import hashlib

import numpy as np

from ..errors import ConfigError
from .linalg import Matrix

SEED_MASK = (1 << 64) - 1


def derive_seed(root: int, tag: str, *ids: int) -> int:
    """Derive a 64-bit child seed from a root seed, a purpose tag and ids.

    Examples:
        >>> derive_seed(7, "init_A", 2) == derive_seed(7, "init_A", 2)
        True
        >>> derive_seed(7, "init_A", 2) == derive_seed(7, "init_A", 3)
        False
    """
    key = ":".join([str(root & SEED_MASK), tag, *(str(i) for i in ids)])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class Rng:
    """Counter-based generator (Philox) with an explicit 64-bit seed.

    Attributes:
        seed: The 64-bit seed this stream was created from.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & SEED_MASK
        self._generator = np.random.Generator(np.random.Philox(self.seed))

    def spawn(self, tag: str, *ids: int) -> "Rng":
        """Independent child stream for (tag, ids)."""
        return Rng(derive_seed(self.seed, tag, *ids))

    def uniform(self, rows: int, cols: int) -> Matrix:
        """Uniform samples on [0, 1)."""
        return self._generator.random((rows, cols), dtype=np.float64)

    def gaussian(self, rows: int, cols: int) -> Matrix:
        """Standard normal samples via the basic Box-Muller transform."""
        n = rows * cols
        pairs = (n + 1) // 2
        # 1 - U lies in (0, 1], keeping log finite
        u1 = 1.0 - self._generator.random(pairs, dtype=np.float64)
        u2 = self._generator.random(pairs, dtype=np.float64)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        z = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
        return z.ravel()[:n].reshape(rows, cols)

    def permutation(self, n: int) -> np.ndarray:
        """Random permutation of range(n)."""
        return self._generator.permutation(n)


def sample_gaussian(rng: Rng, rows: int, cols: int) -> Matrix:
    """I.i.d. standard normal matrix."""
    return rng.gaussian(rows, cols)


def kaiming_bound(fan_in: int) -> float:
    """Kaiming-uniform bound for negative slope a = sqrt(5).

    gain = sqrt(2 / (1 + a^2)) = sqrt(1/3), bound = gain * sqrt(3 / fan_in),
    which reduces to 1 / sqrt(fan_in).
    """
    if fan_in <= 0:
        raise ConfigError(f"fan_in must be positive, got {fan_in}")
    return 1.0 / np.sqrt(fan_in)


def sample_kaiming_uniform(rng: Rng, rows: int, cols: int, fan_in: int) -> Matrix:
    """I.i.d. uniform matrix on [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = kaiming_bound(fan_in)
    return bound * (2.0 * rng.uniform(rows, cols) - 1.0)
