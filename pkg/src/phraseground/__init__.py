"""Phrase-aware 3D referential grounding on synthetic scenes."""

__version__ = "0.1.0"
