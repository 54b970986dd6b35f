"""Deterministic cycle-approximate simulator of a tiled RV64/RVV multicore.

Tiles carry an in-order scalar+vector core, private L1I/L1D, a private L1.5
write-back cache acting as the coherence endpoint, and one slice of a shared,
directory-coherent L2. Three mesh NoCs move requests, grants and acks. A
single discrete-event queue drives everything, so runs are bit-reproducible
and checkpointable.
"""

__version__ = "0.1.0"

from .config import SimConfig, Latencies, ValidatedConfig, standalone_config

__all__ = ["SimConfig", "Latencies", "ValidatedConfig", "standalone_config", "__version__"]
