"""Multi-BS trajectory PMBM tracking with target handover."""

__version__ = "0.1.0"
