"""Tactic-similarity routing over a pool of independent experts."""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ValidationError
from .synth import N_TACTICS, sequence_descriptor, templates


def template_descriptors() -> np.ndarray:
    return np.stack([t.descriptor for t in templates()])


def cosine_similarities(desc: np.ndarray, bank: np.ndarray) -> np.ndarray:
    """Cosine of ``desc`` against each row of ``bank``; zero-norm rows give 0."""
    desc = np.asarray(desc, dtype=float)
    nd = np.linalg.norm(desc)
    nb = np.linalg.norm(bank, axis=1)
    out = np.zeros(len(bank))
    ok = (nb > 0) & (nd > 0)
    out[ok] = (bank[ok] @ desc) / (nb[ok] * nd)
    return np.clip(out, -1.0, 1.0)


def similarity_vector(seq) -> np.ndarray:
    """Similarity of the sequence's t=0 layout to each of the 12 tactic templates."""
    return cosine_similarities(sequence_descriptor(seq), template_descriptors())


def partition_label(sim: np.ndarray, n_experts: int) -> int:
    """Expert that the data partition assigns to a similarity vector."""
    return int(np.argmax(sim)) % n_experts


class Router(nn.Module):
    """Two fully connected layers with a rectifier between them."""

    def __init__(self, n_experts: int = 5, n_templates: int = N_TACTICS, hidden: int = 32):
        super().__init__()
        if n_experts < 2:
            raise ValidationError("a router needs at least two experts")
        self.n_experts = n_experts
        self.fc1 = nn.Linear(n_templates, hidden)
        self.fc2 = nn.Linear(hidden, n_experts)

    def forward(self, sim: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.relu(self.fc1(sim)))


def route(sim, router: Router) -> int:
    """Top-1 expert; ties resolve to the lowest index."""
    with torch.no_grad():
        x = torch.as_tensor(np.asarray(sim), dtype=router.fc1.weight.dtype)
        logits = router(x).cpu().numpy()
    return int(np.flatnonzero(logits == logits.max())[0])


def infonce_from_similarities(pos, neg, tau: float, mask=None):
    """Mean over anchors of -log softmax(pos / tau) against ``neg`` / tau.

    pos (B,), neg (B, K); ``mask`` (B, K) marks which negatives exist.
    """
    if tau <= 0:
        raise ValidationError(f"temperature must be > 0, got {tau}")
    pos = torch.as_tensor(pos)
    neg = torch.as_tensor(neg, dtype=pos.dtype)
    logits = torch.cat([pos.unsqueeze(-1), neg], dim=-1) / tau
    if mask is not None:
        keep = torch.cat([torch.ones_like(mask[:, :1]), mask], dim=-1)
        logits = logits.masked_fill(~keep, float("-inf"))
    return -(logits[:, 0] - torch.logsumexp(logits, dim=-1)).mean()


def infonce_loss(anchors, positives, negatives, tau: float = 0.1, mask=None):
    """InfoNCE with cosine similarity; negatives have shape (B, K, dim)."""
    if tau <= 0:
        raise ValidationError(f"temperature must be > 0, got {tau}")
    pos = F.cosine_similarity(anchors, positives, dim=-1)
    neg = F.cosine_similarity(anchors.unsqueeze(1), negatives, dim=-1)
    return infonce_from_similarities(pos, neg, tau, mask)


def sample_negatives(expert_of: np.ndarray, K: int, rng: np.random.Generator):
    """For each item, up to K indices of items owned by other experts.

    Returns (index (B, K) int array, mask (B, K) bool array); sampling is
    uniform without replacement.
    """
    if K < 1:
        raise ValidationError("K must be >= 1")
    expert_of = np.asarray(expert_of)
    B = len(expert_of)
    idx = np.zeros((B, K), dtype=np.int64)
    mask = np.zeros((B, K), dtype=bool)
    for i in range(B):
        pool = np.flatnonzero(expert_of != expert_of[i])
        if len(pool) == 0:
            continue
        take = rng.choice(pool, size=min(K, len(pool)), replace=False)
        idx[i, :len(take)] = take
        mask[i, :len(take)] = True
    return idx, mask


def expert_separation(embeddings: np.ndarray, labels: np.ndarray) -> dict:
    """Mean intra- vs inter-expert cosine similarity and cosine silhouette."""
    from sklearn.metrics import silhouette_score

    X = np.asarray(embeddings, dtype=float)
    labels = np.asarray(labels)
    U = X / np.maximum(np.linalg.norm(X, axis=1, keepdims=True), 1e-12)
    C = U @ U.T
    same = labels[:, None] == labels[None, :]
    off = ~np.eye(len(X), dtype=bool)
    intra = float(C[same & off].mean()) if (same & off).any() else float("nan")
    inter = float(C[~same].mean()) if (~same).any() else float("nan")
    sil = float(silhouette_score(X, labels, metric="cosine")) if len(set(labels.tolist())) > 1 else float("nan")
    return {"intra_cosine": intra, "inter_cosine": inter, "silhouette": sil}
