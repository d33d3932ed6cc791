"""Star-graph DDGNN for sparse radar point-cloud activity recognition.

Per-frame point clouds become small graphs (star graphs by default), a
two-layer GraphConv stack embeds each frame, and a Bi-LSTM over the frame
embeddings feeds a linear classifier. Everything is plain numpy with
hand-written backward passes.
"""

from .graph import CenterKind, CenterMode, FrameGraph, GraphSequence, GraphSpec, GraphType, build_frame_graph, build_sequence
from .model import DdgnnConfig, DdgnnModel, forward, load_checkpoint, predict, save_checkpoint
from .pointcloud import Point3, PointFrame, PointSequence, RangeBounds, dbscan, preprocess_sequence
from .train import EvalReport, TrainResult, evaluate, train

__all__ = [
    "CenterKind", "CenterMode", "FrameGraph", "GraphSequence", "GraphSpec", "GraphType",
    "build_frame_graph", "build_sequence", "DdgnnConfig", "DdgnnModel", "forward", "load_checkpoint",
    "predict", "save_checkpoint", "Point3", "PointFrame", "PointSequence", "RangeBounds", "dbscan",
    "preprocess_sequence", "EvalReport", "TrainResult", "evaluate", "train",
]
