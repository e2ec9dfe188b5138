"""Fusion algorithms: NaiveFuse, KineFuse and AdaDeepFuse."""
from .ada import (AdaFuseModel, FusionConfig, ada_forward, ada_fuse, ada_loss, init_model, load_model,
                  save_model, train_ada)
from .screening import kine_fuse, naive_fuse, screen

__all__ = [
    "AdaFuseModel", "FusionConfig", "ada_forward", "ada_fuse", "ada_loss", "init_model", "kine_fuse",
    "load_model", "naive_fuse", "save_model", "screen", "train_ada",
]
