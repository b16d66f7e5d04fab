"""Self-supervised cycle-consistent unpaired image translation."""

__version__ = "0.1.0"
