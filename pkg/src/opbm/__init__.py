"""Outlier-aware position-based click modeling for counterfactual learning to rank.

The package covers the full experimentation loop: ranking corpora with graded
relevance (`corpus`), interquartile-rule outlier detection over observable
result features (`outliers`), biased click simulation under position and
outlier effects (`clicksim`), regression-based EM propensity estimation
(`propensity_em`), inverse-propensity-weighted ranker training (`ranker`),
evaluation metrics (`metrics`), click-log analytics (`loglab`) and a CLI that
wires the stages into reproducible experiments (`cli`).
"""

__version__ = "0.1.0"
