"""GP Bayesian optimization with hybrid repeat/multi-point sampling."""
