"""Prototype-based federated learning with soft pooling and BFT prototype filtering."""
__version__ = "0.1.0"
