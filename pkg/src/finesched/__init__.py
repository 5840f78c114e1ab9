"""Fine-grained inference-serving scheduler, simulator and live mock runtime."""

__version__ = "0.1.0"
