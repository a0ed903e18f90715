"""Proof-of-useful-work blockchain where mining trains a grammar-derived
neural network, simulated deterministically at desk scale."""

__version__ = "0.1.0"
