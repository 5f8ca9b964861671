"""lftlab: a desk-scale laboratory for lightweight fine-tuning of
transformer-based neural ranking models."""

__version__ = "0.1.0"
