"""Two-stream spatiotemporal video question answering on a numpy autodiff engine."""

__version__ = "0.1.0"
