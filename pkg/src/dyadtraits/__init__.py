"""Persona-conditioned dyadic debate generation and trait-adherence evaluation."""

__version__ = "0.1.0"
