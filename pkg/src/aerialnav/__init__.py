"""Value-shaped, verifiable-reward RL fine-tuning for goal-conditioned drone navigation."""

__version__ = "0.1.0"
