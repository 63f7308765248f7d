"""Semilinear heat equations u_t = Δu + f(u) with integrable initial data.

Spectral heat propagation on a periodic box, envelope-based well-posedness
classification, monotone iteration of the variation-of-constants operator,
and experiment procedures checking comparison, continuous dependence and
global small-data behaviour.
"""

__version__ = "0.1.0"
