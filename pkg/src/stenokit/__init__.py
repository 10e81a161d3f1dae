"""Data, augmentation, pseudo-labelling and scoring tools for stenosis instance segmentation."""

__version__ = "0.1.0"
