"""Simulated Bitcoin-to-target-chain wrapping protocol with SPV and optimistic bridges."""

__version__ = "0.1.0"
