"""Sand-dust image restoration laboratory."""

__version__ = "0.1.0"
