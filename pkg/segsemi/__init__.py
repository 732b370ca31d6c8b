"""
segsemi: semi-supervised temporal action segmentation
"""

__version__ = "1.0.0"
