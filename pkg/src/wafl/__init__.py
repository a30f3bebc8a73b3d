"""Word-anchored temporal forgery localization at desk scale."""

__version__ = "0.1.0"
