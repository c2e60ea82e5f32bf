"""Sign-agnostic learning of implicit surfaces from raw geometry."""

__version__ = "0.1.0"
