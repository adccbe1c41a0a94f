"""Multi-hop QA with pseudo-evidentiality: set construction, a debiased reader,
a counterfactual-saliency interpreter and evaluation on synthetic bridge questions."""

__version__ = "0.1.0"
