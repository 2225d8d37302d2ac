"""LEO satellite-edge-computing network simulator with THz inter-satellite
links and an embedded on-policy GCN actor-critic resource allocator."""

__version__ = "0.1.0"
