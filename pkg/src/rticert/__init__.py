"""Real-time iteration NMPC simulation and stability certification toolkit."""

__version__ = "0.1.0"
