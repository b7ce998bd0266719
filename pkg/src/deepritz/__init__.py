"""Deep Ritz solver for 2D linear elasticity with adaptive quadrature refinement."""

__version__ = "0.1.0"
