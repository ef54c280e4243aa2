"""Low-rank adapters and their checkpoints."""

from .checkpoint import (
    adapter_bytes,
    load_adapters,
    read_adapters,
    save_adapters,
    write_adapters,
)
from .state import (
    AdapterSet,
    AdapterState,
    ScalingMode,
    adapter_forward,
    adapter_grads,
    delta,
    merge,
)

__all__ = [
    "AdapterSet",
    "AdapterState",
    "ScalingMode",
    "adapter_bytes",
    "adapter_forward",
    "adapter_grads",
    "delta",
    "load_adapters",
    "merge",
    "read_adapters",
    "save_adapters",
    "write_adapters",
]
