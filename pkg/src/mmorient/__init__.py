"""Multimodal-multitask learner: two-stage monomodal attention, cross-modal
relation graphs with inductive feature reconstruction, task-feature fusion,
and multitask softmax heads, all with hand-written gradients."""

from .cmrl import kernel_available

__version__ = "0.1.0"

__all__ = ["kernel_available", "__version__"]
