"""
Segmentation Ensemble Toolkit

Fusion of multi-model organ segmentations (logit sum, softmax sum, majority
vote, STAPLE), surface-distance evaluation and statistical ranking.
"""

__version__ = "1.0.0"
