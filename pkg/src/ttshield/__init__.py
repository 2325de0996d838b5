"""Tensor-train obfuscation of clinical risk models, with a membership-inference
harness, DP baselines, and TT interpretability tools."""

__version__ = "0.1.0"
