"""Vector-valued risk fields and edge flows on multimodal simplicial complexes."""

__version__ = "0.1.0"
