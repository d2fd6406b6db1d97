"""Safe model-based RL with imagination shielding and MPC action replacement."""

__version__ = "0.1.0"
