"""Contact-driven adaptive motion planning for serial arms."""

__version__ = "0.1.0"
