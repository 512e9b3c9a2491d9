"""Minimizing-movement schemes for entropy-driven flows with general convex transport costs."""

__version__ = "0.1.0"
