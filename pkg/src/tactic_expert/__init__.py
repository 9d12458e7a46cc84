"""Symmetry-aware spatio-temporal graph transformer with routed tactic experts."""
from .config import Config
from .data import BallTransitionTensor, GameSequence, PlayerFrame, ingest_jsonl, write_jsonl
from .symmetry import D2, FLIP_X, FLIP_Y, IDENTITY, ROT180, SymmetryElement, augment_d2
from .model import TacticExpertModel
from .training import evaluate, fit

__version__ = "0.1.0"

__all__ = [
    "Config", "BallTransitionTensor", "GameSequence", "PlayerFrame", "ingest_jsonl", "write_jsonl",
    "D2", "IDENTITY", "FLIP_X", "FLIP_Y", "ROT180", "SymmetryElement", "augment_d2",
    "TacticExpertModel", "evaluate", "fit",
]
