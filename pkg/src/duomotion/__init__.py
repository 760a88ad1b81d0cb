"""Online two-person co-speech motion synthesis."""

__version__ = "0.1.0"
