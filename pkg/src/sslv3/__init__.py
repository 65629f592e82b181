"""Quality-aware video classification with a self-supervised quality head."""

__version__ = "0.1.0"
