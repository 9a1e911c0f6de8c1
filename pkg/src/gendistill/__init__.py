"""Distill image-classification datasets into a conditional generative model,
then synthesize and evaluate distilled datasets of arbitrary size."""

__version__ = "0.1.0"
