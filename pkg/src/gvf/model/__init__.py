"""Fiber bundle layout, whitening and the mixture-of-experts flow model."""

from .bundle import BundleConfig, Modality, default_bundle
from .network import (GvfModel, flow_field, flow_values, mixing_operator, moe_forward, permute_fiber,
                      set_gradient_flow, spectral_normalize)
from .whitening import WhiteningTransform, cross_block_residual, whiten_fit

__all__ = [
    "BundleConfig", "GvfModel", "Modality", "WhiteningTransform", "cross_block_residual", "default_bundle",
    "flow_field", "flow_values", "mixing_operator", "moe_forward", "permute_fiber", "set_gradient_flow",
    "spectral_normalize", "whiten_fit",
]
