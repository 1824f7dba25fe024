"""Deterministic simulator and risk-analysis toolkit for a multi-chain
crypto-collateral-backed stablecoin."""

__version__ = "0.1.0"
