"""Likelihood training, enhancement, optimizers and gradient checks."""
