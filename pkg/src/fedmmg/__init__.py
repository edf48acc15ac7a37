"""Federated PPO agents for multi-microgrid energy management."""

__version__ = "0.1.0"
