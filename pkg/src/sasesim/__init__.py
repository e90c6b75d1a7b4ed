"""Chaotic SASE-FEL pulse synthesis and a stochastic resonant-Auger two-level solver."""
__version__ = "0.1.0"
