"""Source-separated stems as stacked spectrogram inputs for genre classification."""

__version__ = "0.1.0"
