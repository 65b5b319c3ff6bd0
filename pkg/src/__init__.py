"""
cluster-fed-flow

A simulator for clustered federated learning: warm-up signatures, fused
client proximity, threshold clustering and per-cluster dual-encoder models
that share knowledge along a complementarity graph.
"""

__version__ = "0.1.0"
__description__ = "Clustered federated learning simulator with dual encoders and cross-cluster sharing"

from .cli import cli, main

__all__ = ["cli", "main"]
