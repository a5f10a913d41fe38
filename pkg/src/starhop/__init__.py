"""Multi-hop STAR-RIS downlink simulator with multi-agent Q-learning."""

__version__ = "0.1.0"
