"""Probabilistic safety certification toolkit."""
