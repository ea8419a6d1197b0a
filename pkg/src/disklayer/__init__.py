"""Diffusive-limit toolkit for the scaled neutron transport equation on the unit disk."""

__all__ = ["core", "transport", "milne", "macro", "layers", "experiments", "cli"]
__version__ = "0.1.0"
