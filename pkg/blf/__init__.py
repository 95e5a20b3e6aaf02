"""
blf-py: Bayesian spatial label fusion
Chromatic Gibbs sampling of spatially varying rater reliabilities
"""

__version__ = "1.0.0"
__author__ = "blf-py"
__description__ = "Bayesian label fusion with spatial sensitivity/specificity fields"
