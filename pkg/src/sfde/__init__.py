"""Euler-type schemes for stochastic functional differential equations."""
