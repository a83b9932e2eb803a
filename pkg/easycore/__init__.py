"""
EasyCore - AIGN hardness scoring and coreset selection
Easy-sample coresets, PGD/TRADES robustness and decision-boundary geometry
on desk-scale residual MLPs.
Version: 0.1.0
"""

import logging

__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())
