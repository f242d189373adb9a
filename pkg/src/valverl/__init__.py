"""Graded-learning DDPG valve control workbench with a filtered-PID baseline."""

__version__ = "0.1.0"
