"""Deep-unfolded joint activity and data detection for grant-free cell-free uplink."""

__version__ = "0.1.0"
