"""Numpy model, autodiff, training and gradient checks."""
