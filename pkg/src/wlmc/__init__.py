"""Worldline Monte Carlo estimation of Euclidean propagators.

Gaussian loop ensembles pinned at both ends are rescaled onto arbitrary
endpoints and times, weighted by the exponentiated line integral of the
potential, and averaged into kernel estimates from which bound-state
energies are extracted.
"""

__version__ = "0.1.0"

from . import analysis, analytic, estimator, loopgen, potentials

__all__ = ["analysis", "analytic", "estimator", "loopgen", "potentials",
           "__version__"]
