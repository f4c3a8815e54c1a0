"""Sparse logistic principal components analysis for binary data"""

__version__ = "0.1.0"
