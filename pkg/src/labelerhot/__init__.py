"""Labeler-hot epileptiform event detection on single EEG channels."""

__version__ = "0.1.0"
