"""Simulate a two-observer laboratory with unitary measurement and reset.

Born-rule queries, hidden-variable trajectory ensembles on the lab basis, a
one-dimensional Bohmian guidance demonstrator, and a small text format for
describing experiments.
"""

__version__ = "0.1.0"
