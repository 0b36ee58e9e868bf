"""Map-aware multi-agent trajectory prediction with kinematic decoding."""

__version__ = "0.1.0"
