"""Graph-conditioned vision-language change detection on a from-scratch autograd engine."""

__version__ = "0.1.0"
