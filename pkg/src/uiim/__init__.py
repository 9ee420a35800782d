"""Dialog act classification with universality/individuality feature fusion."""

__version__ = "0.1.0"
