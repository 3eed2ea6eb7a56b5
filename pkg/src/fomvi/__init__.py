"""First-order and value-iteration solvers for s-rectangular robust MDPs."""

__version__ = "0.1.0"
