"""A desk-scale laboratory for speculative-execution security of µASM programs."""

__version__ = "0.1.0"
