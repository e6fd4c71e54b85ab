"""Bioscatter segmentation in weather-radar sweeps: band-threshold noisy
labels, U-Net pretraining and fine-tuning, and pixel-level evaluation."""

__version__ = "0.1.0"
