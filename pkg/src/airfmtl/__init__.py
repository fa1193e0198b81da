"""Over-the-air federated multi-task learning over a MIMO multiple-access uplink."""

__version__ = "0.1.0"
