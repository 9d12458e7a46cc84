"""Initial spatio-temporal embedding: feature projection plus two positional codes.

The embedded tensor of one view is ``X_data + X_lap + X_pe`` where
``X_data`` is a two-stage projection of the encoded player features,
``X_lap`` projects ``X_data`` onto the low-frequency Laplacian eigenbasis of
a pass-affinity graph built at t=0, and ``X_pe`` is a normalized sinusoidal
code over the flattened (t, n) order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .data import CHANNEL_SLICES, FEATURE_WIDTH, GameSequence, encode_frames
from .errors import NumericError, ValidationError
from .symmetry import D2, FEATURE_SIGNS, SymmetryElement

ADJ_EPS = 1e-6
# team / position / head sub-embedding used for pass affinity
AFFINITY_COLUMNS = np.r_[CHANNEL_SLICES["team"], CHANNEL_SLICES["position"], CHANNEL_SLICES["head"]]


@dataclass(frozen=True, eq=False)
class GraphStructure:
    adjacency: np.ndarray

    def __post_init__(self):
        A = self.adjacency
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValidationError("adjacency must be square")
        if not np.array_equal(A, A.T) or np.any(np.diag(A) != 0) or np.any(A < 0):
            raise ValidationError("adjacency must be symmetric, nonnegative, with zero diagonal")

    @property
    def N(self):
        return self.adjacency.shape[0]


def adjacency_from_embeddings(E: np.ndarray, eps: float = ADJ_EPS) -> GraphStructure:
    """Clamped cosine affinity with an epsilon floor on every off-diagonal entry."""
    E = np.asarray(E, dtype=float)
    if E.shape[0] < 2:
        raise ValidationError("need at least two nodes")
    norms = np.linalg.norm(E, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    U = E / safe[:, None]
    C = np.clip(U @ U.T, 0.0, None)
    zero = norms == 0
    C[zero, :] = 0.0
    C[:, zero] = 0.0
    A = C + eps
    A = 0.5 * (A + A.T)
    np.fill_diagonal(A, 0.0)
    return GraphStructure(A)


def build_adjacency(frame_features: np.ndarray, eps: float = ADJ_EPS) -> GraphStructure:
    """Affinity graph from one time slice of encoded features (N x FEATURE_WIDTH)."""
    return adjacency_from_embeddings(np.asarray(frame_features)[:, AFFINITY_COLUMNS], eps)


def normalized_laplacian(A: np.ndarray) -> np.ndarray:
    deg = A.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    L = np.eye(len(A)) - inv_sqrt[:, None] * A * inv_sqrt[None, :]
    return 0.5 * (L + L.T)


def _fix_signs(U: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    U = U.copy()
    for j in range(U.shape[1]):
        nz = np.flatnonzero(np.abs(U[:, j]) > tol)
        if len(nz) and U[nz[0], j] < 0:
            U[:, j] = -U[:, j]
    return U


def laplacian_spectrum(graph: GraphStructure):
    """Ascending eigenvalues and sign-fixed eigenvectors of the normalized Laplacian."""
    L = normalized_laplacian(graph.adjacency)
    try:
        lam, U = np.linalg.eigh(L)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed: {exc}") from None
    return lam, _fix_signs(U)


def laplacian_basis(graph: GraphStructure, k: int, tol: float = 1e-10) -> np.ndarray:
    """Eigenvectors of the ``k`` smallest nonzero eigenvalues, N x k."""
    if not 1 <= k <= graph.N - 1:
        raise ValidationError(f"k must be in [1, N-1] = [1, {graph.N - 1}], got {k}")
    lam, U = laplacian_spectrum(graph)
    nonzero = np.flatnonzero(lam > tol)
    if len(nonzero) < k:
        raise NumericError(f"only {len(nonzero)} nonzero eigenvalues, need {k}")
    return U[:, nonzero[:k]]


def laplacian_projector(graph: GraphStructure, k: int) -> np.ndarray:
    U = laplacian_basis(graph, k)
    return U @ U.T


def laplacian_pe(graph: GraphStructure, x_slice, k: int):
    """Project an N x D node-feature slice onto the retained eigenbasis.

    Returns ``U U^T x`` (N x D), which is independent of the eigenvector
    sign convention and permutes with the nodes.
    """
    P = laplacian_projector(graph, k)
    if isinstance(x_slice, torch.Tensor):
        return torch.as_tensor(P, dtype=x_slice.dtype) @ x_slice
    return P @ np.asarray(x_slice)


def sinusoidal_raw(n_positions: int, d: int) -> np.ndarray:
    if d % 2:
        raise ValidationError(f"sinusoidal width must be even, got {d}")
    pos = np.arange(n_positions, dtype=float)[:, None]
    i = np.arange(d // 2, dtype=float)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d)
    pe = np.empty((n_positions, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def sinusoidal_pe(n_positions: int, d: int) -> np.ndarray:
    """Sinusoidal code standardized to mean 0 and std 0.1 over the whole tensor."""
    pe = sinusoidal_raw(n_positions, d)
    return (pe - pe.mean()) / (pe.std() * 10.0)


def node_sequence_pe(T: int, N: int, d: int) -> np.ndarray:
    """T x N x d code using flattened position t*N + n."""
    return sinusoidal_pe(T * N, d).reshape(T, N, d)


# ---------------------------------------------------------------- inputs


def view_features(feats: np.ndarray) -> np.ndarray:
    """Encoded features (T, N, F) -> (4, T, N, F), in D2 order."""
    return feats[None] * FEATURE_SIGNS[:, None, None, :]


def view_projectors(view_feats: np.ndarray, k: int) -> np.ndarray:
    """(4, N, N) Laplacian projectors, adjacency taken from each view's t=0 slice."""
    return np.stack([laplacian_projector(build_adjacency(v[0]), k) for v in view_feats])


@dataclass(frozen=True)
class ViewBundle:
    views: dict

    def __post_init__(self):
        if set(self.views) != set(D2):
            raise ValidationError("a view bundle needs exactly one tensor per D2 element")

    def stacked(self) -> torch.Tensor:
        return torch.stack([self.views[g] for g in D2])

    @classmethod
    def from_stacked(cls, x) -> "ViewBundle":
        return cls({g: x[g.index] for g in D2})

    def relabeled(self, g_prime: SymmetryElement) -> "ViewBundle":
        """views[h] <- views[h . g_prime]"""
        from .symmetry import compose

        return ViewBundle({h: self.views[compose(h, g_prime)] for h in D2})

    def __getitem__(self, g):
        return self.views[g]


class FeatureEmbedding(nn.Module):
    """Learnable part of the input layer (one per expert)."""

    def __init__(self, d_model: int = 64, d: int = 32, k_eigs: int = 4, n_features: int = FEATURE_WIDTH):
        super().__init__()
        if d > d_model:
            raise ValidationError(f"reduced width d={d} exceeds D={d_model}")
        if d % 2:
            raise ValidationError("d must be even for the sinusoidal code")
        if k_eigs < 1:
            raise ValidationError("k_eigs must be >= 1")
        self.k_eigs = k_eigs
        self.d = d
        self.feat = nn.Linear(n_features, d_model)
        self.reduce = nn.Linear(d_model, d)

    def embed_features(self, x: torch.Tensor) -> torch.Tensor:
        return self.feat(x)

    def data_embedding(self, x: torch.Tensor) -> torch.Tensor:
        return self.reduce(torch.tanh(self.feat(x)))

    def forward(self, view_feats, projectors, pe, use_lap=True, use_pe=True, return_parts=False):
        """view_feats (..., 4, T, N, F), projectors (..., 4, N, N), pe (T, N, d)."""
        x_data = self.data_embedding(view_feats)
        if use_lap:
            x_lap = torch.einsum("...vnm,...vtmd->...vtnd", projectors, x_data)
        else:
            x_lap = torch.zeros_like(x_data)
        x_pe = pe if use_pe else torch.zeros_like(pe)
        out = x_data + x_lap + x_pe
        if return_parts:
            return out, (x_data, x_lap, x_pe.expand_as(x_data))
        return out


def prepare_inputs(seq_or_feats, k_eigs: int):
    """Param-free inputs of one sequence: ((4, T, N, F) features, (4, N, N) projectors)."""
    feats = encode_frames(seq_or_feats) if isinstance(seq_or_feats, GameSequence) else np.asarray(seq_or_feats)
    vf = view_features(feats)
    return vf, view_projectors(vf, k_eigs)


def make_view_bundle(seq_or_feats, params: FeatureEmbedding, use_lap=True, use_pe=True) -> ViewBundle:
    vf, proj = prepare_inputs(seq_or_feats, params.k_eigs)
    dtype = params.feat.weight.dtype
    T, N = vf.shape[1:3]
    pe = torch.as_tensor(node_sequence_pe(T, N, params.d), dtype=dtype)
    out = params(torch.as_tensor(vf, dtype=dtype), torch.as_tensor(proj, dtype=dtype), pe, use_lap, use_pe)
    return ViewBundle.from_stacked(out)
