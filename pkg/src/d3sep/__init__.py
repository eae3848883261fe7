"""Multidilated dense convolutional networks for spectrogram source
separation, with an exact receptive-field analyzer and a desk-scale
training/evaluation pipeline."""

__version__ = "0.1.0"
