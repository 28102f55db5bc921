"""Compositional visual coherence model for complementary item recommendation."""

__version__ = "0.1.0"
