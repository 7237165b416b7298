"""Topic-model-assisted active learning for document annotation."""

__version__ = "0.1.0"
