"""Markov chains in random environments: certificates, rates, coupling, mixing."""

__version__ = "0.1.0"
