"""Relativistic Vlasov-Poisson Landau damping toolkit."""

__version__ = "0.1.0"
