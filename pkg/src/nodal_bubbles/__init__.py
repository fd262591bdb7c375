"""Sign-changing bubbles of the critical Yamabe equation and their blow-up obstructions."""

__version__ = "0.1.0"
