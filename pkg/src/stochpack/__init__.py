"""Online stochastic bin packing: primal-dual heuristics, baselines, waste LP and simulators."""

__version__ = "0.1.0"
