"""Graph and debiased contrastive learning for GNN collaborative filtering, on a numpy autodiff tape."""

__version__ = "0.1.0"
