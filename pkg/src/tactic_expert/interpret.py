"""Similarity, attention and difference maps for one slice of one sequence."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .embedding import prepare_inputs
from .errors import ValidationError
from .moe import similarity_vector


@dataclass
class Heatmaps:
    player_ids: list
    similarity: np.ndarray  # (a) cosine of initial node embeddings
    attention: np.ndarray  # (b) first-layer spatial attention, identity view
    difference: np.ndarray  # (c) = b - a
    expert: int

    def write(self, out_dir, stem="heatmap"):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for tag, M in (("a_similarity", self.similarity), ("b_attention", self.attention),
                       ("c_difference", self.difference)):
            p = out_dir / f"{stem}_{tag}.csv"
            write_matrix(p, M, self.player_ids)
            paths.append(p)
        return paths


def write_matrix(path, M, ids):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["player_id", *ids])
        for pid, row in zip(ids, M):
            # repr round-trips float64 exactly
            w.writerow([pid, *(repr(float(v)) for v in row)])


def read_matrix(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    ids = rows[0][1:]
    M = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return ids, M


def cosine_matrix(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    U = X / np.maximum(np.linalg.norm(X, axis=1, keepdims=True), 1e-300)
    C = U @ U.T
    np.fill_diagonal(C, 1.0)
    return C


def heatmaps(model, seq, t: int) -> Heatmaps:
    if not 0 <= t < seq.T:
        raise ValidationError(f"slice {t} outside [0, {seq.T})")
    dtype = next(model.parameters()).dtype
    vf, pj = prepare_inputs(seq, model.cfg.k_eigs)
    vf = torch.as_tensor(vf, dtype=dtype)[None]
    pj = torch.as_tensor(pj, dtype=dtype)[None]
    sims = torch.as_tensor(similarity_vector(seq), dtype=dtype)[None]
    with torch.no_grad():
        e = int(model.route(sims)[0])
        expert = model.experts[e]
        X = expert.embed(vf, pj, model.ablations)[0, 0, t].double().numpy()
        emb = model.encode_with(e, vf, pj)
        A = emb.attention[0][0, t].double().numpy()
    a = cosine_matrix(X)
    return Heatmaps(list(seq.player_ids), a, A, A - a, e)


def dependency_witnesses(maps: Heatmaps, a_max=0.2, b_min=0.5):
    """Off-diagonal (i, j) with low embedding similarity but high attention."""
    n = len(maps.player_ids)
    off = ~np.eye(n, dtype=bool)
    hits = np.argwhere(off & (maps.similarity < a_max) & (maps.attention > b_min))
    return [(maps.player_ids[i], maps.player_ids[j]) for i, j in hits]
