"""protoep: episodic few-shot relation classification with cross-attention
prototypes and contrastive learning, built on a small autodiff core."""

__version__ = "0.1.0"
