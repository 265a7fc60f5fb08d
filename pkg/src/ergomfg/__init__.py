"""Numerical solvers for first-order mean field games on the flat torus."""
