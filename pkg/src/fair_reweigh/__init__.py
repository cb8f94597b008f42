"""Influence-based sample reweighing for fairer logistic regression."""

__version__ = "0.1.0"
