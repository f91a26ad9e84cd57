"""Data-driven Youla-Kucera control with Hankel internal models."""
__version__ = "0.1.0"
