"""Numerical laboratory for determining functionals of dissipative parabolic equations."""

__version__ = "0.1.0"
