"""Lowest-order Raviart-Thomas and Crouzeix-Raviart elements with flux recovery."""

__version__ = "0.1.0"
