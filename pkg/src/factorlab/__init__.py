"""Cost-aware equity factor research engine: long-short versus hedged
long-only portfolio construction, verified on synthetic markets and public
monthly factor data."""

__version__ = "0.1.0"
