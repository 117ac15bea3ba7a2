"""Desk-scale laboratory for the train/test resolution discrepancy and its fine-tuning correction."""

__version__ = "0.1.0"
