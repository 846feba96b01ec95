"""Budget-aware active label correction for semantic-segmentation datasets."""

__version__ = "0.1.0"
