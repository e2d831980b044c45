"""Capture multi-modal model internals as engine trace bundles."""

from .capture import CacheEvictionError, CaptureError, TraceCapturer
from .toy_model import ANSWER_TOKENS, SLOTS_PER_FRAME, TOKEN_ANSWERS, TinyVideoQA

__version__ = "0.1.0"
