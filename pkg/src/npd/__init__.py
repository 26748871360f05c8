"""Adversarial multi-label emotion detection toolkit.

A from-scratch training stack: reverse-mode autodiff, skip-gram embedding
pretraining, an LSTM encoder with per-attribute attention pooling and
gradient-reversed gender/location discriminators, AdaGrad training, F1
evaluation, and a planted-correlation synthetic corpus generator for
desk-scale ablation studies.
"""

__version__ = "0.1.0"
