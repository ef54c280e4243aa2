"""gora-desk package.

Desk-scale gradient-driven rank allocation and initialization for low-rank
adapters: probe the frozen network for averaged gradients, allocate adapter
ranks from gradient importance, initialize B through a pseudo-inverse
projection of the gradient, and train.

Key components:
- numerics: dense linear algebra, seeded sampling, GMAT container
- netcore: feedforward network with exact gradients and synthetic tasks
- adapter: adapter state, factored forward, gradients, checkpoints
- probe: N-batch gradient accumulation with adaptive early stopping
- allocate: importance metrics and rank plans
- gorainit: pseudo-inverse initialization and diagnostics
- trainkit: optimizers, schedule, training loop, gamma search
- ddpsim: simulated data-parallel probe and broadcast
- cli: run configs, pipeline stages, verification suites, reports
- logging_config: structured JSON logging with array summaries
"""

try:
    from ._version import __version__
except ImportError:
    __version__ = "0.1.0"
