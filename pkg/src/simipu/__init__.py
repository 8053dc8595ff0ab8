"""simipu: multi-modal contrastive pre-training on paired point clouds and images."""

__version__ = "0.1.0"
