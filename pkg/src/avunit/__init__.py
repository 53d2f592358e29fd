"""avunit: toy-scale audio-visual speech translation via discrete units."""

__version__ = "0.1.0"
