"""Variational discretization of control-constrained elliptic optimal control
problems, solved by semismooth Newton iterations on the adjoint."""

__version__ = "0.1.0"
