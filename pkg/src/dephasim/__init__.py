"""Desk-scale toolkit for qubit dephasing near a flux sweet spot under
telegraph (two-level-fluctuator) noise: analytic filter-function predictions,
stochastic-Schrodinger ensembles, exact single-fluctuator solutions, and
Floquet engineering of drive-protected operating points."""

__version__ = "0.1.0"
