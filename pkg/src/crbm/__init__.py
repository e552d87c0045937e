"""Reduced-basis solver for parametrized Nitsche contact with EIM hyper-reduction."""

__version__ = "0.1.0"
