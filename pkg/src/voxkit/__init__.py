"""voxkit: build and evaluate single-speaker speech synthesis corpora."""

__version__ = "0.1.0"
