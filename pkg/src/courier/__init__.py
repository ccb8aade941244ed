"""Grid message-delivery lab: game catalog, simulator, text manuals, and
entity-grounding agents trained with policy-gradient RL."""

__version__ = "0.1.0"
