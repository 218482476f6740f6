"""Event-driven multi-modal financial forecasting with counterfactual causal training."""

__version__ = "0.1.0"
