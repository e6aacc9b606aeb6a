"""Causal question answering over small binary causal Bayesian networks."""
from __future__ import annotations

__version__ = "0.1.0"
