"""Desk-scale benchmarking toolkit for weakly supervised whole-slide-image
classification: relative-performance scoring over seed ensembles, paired
bootstrap comparisons, bag classifiers with hand-derived gradients, stain
normalisation and augmentation preprocessing with a feature cache, and
latent-space displacement analysis."""

__version__ = "0.1.0"
