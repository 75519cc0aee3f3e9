"""Multimodal knowledge distillation: synthetic data, teacher training, distillation
with a modality-level Gram relation loss, and relation tracing."""

from ._core import *  # noqa: F401,F403
