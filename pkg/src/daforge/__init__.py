"""Two-stage transfer learning for small, imbalanced wafer-map datasets."""
__version__ = "0.1.0"
