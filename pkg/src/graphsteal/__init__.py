"""Model-stealing attacks on graph-classification GNNs, with a numpy GNN engine."""

from .attacks import STRATEGIES, AttackConfig
from .gnn import GnnModel, ModelConfig, init_model
from .graph import Dataset, Graph, graph_from_edges, make_graph
from .steal import LoopConfig, RunReport, run_attack, train_target

__version__ = "0.1.0"

__all__ = ["STRATEGIES", "AttackConfig", "GnnModel", "ModelConfig", "init_model", "Dataset", "Graph",
           "graph_from_edges", "make_graph", "LoopConfig", "RunReport", "run_attack", "train_target"]
