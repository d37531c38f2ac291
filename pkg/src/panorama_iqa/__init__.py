"""
Panorama IQA Toolkit - no-reference quality assessment for 360-degree images

Samples distortion-free tangent viewports from saliency-weighted regions of an
equirectangular panorama, scores them with a small vision transformer and
reports agreement with subjective scores.
"""

__version__ = "0.1.0"
