"""Sequentially doubly robust estimation of the longitudinal G-formula."""
__version__ = "0.1.0"
