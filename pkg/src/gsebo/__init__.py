"""Bi-level learning of per-edge connection strengths for graph neural networks."""
from .bilevel import TrainConfig, TrainHistory, train_gsebo, train_vanilla
from .dataio import load_bundle, save_bundle
from .exceptions import BundleFormatError, ContractError, DivergenceError
from .graph import DatasetBundle, DataSplit, Graph, generate_sbm, inject_inter_class_edges
from .models import BackboneConfig, ModelState, forward, init_model

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig",
    "BundleFormatError",
    "ContractError",
    "DataSplit",
    "DatasetBundle",
    "DivergenceError",
    "GSEBOClassifier",
    "Graph",
    "ModelState",
    "TrainConfig",
    "TrainHistory",
    "forward",
    "generate_sbm",
    "init_model",
    "inject_inter_class_edges",
    "load_bundle",
    "save_bundle",
    "train_gsebo",
    "train_vanilla",
]


def __getattr__(name):
    # scikit-learn is only imported when the estimator is actually used
    if name == "GSEBOClassifier":
        from .estimator import GSEBOClassifier

        return GSEBOClassifier
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
