"""Zero-inflated extended-GPD regression with graph convolutional networks."""
__version__ = "0.1.0"
