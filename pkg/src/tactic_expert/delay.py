"""Short-term delay-effect patterns.

A bank of window-shaped centroids is fitted with k-Shape on sliding windows
of the embedded tensor.  At attention time every node's recent history is
scored against the bank and the softmax-weighted, projected patterns are
added to that node's key.

Shape-based distance uses circular cross-correlation over time with the
channel axis contracted, so a series and any circular shift of it are at
distance zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ValidationError
from .ops import softmax


def zscore(X: np.ndarray, axis: int = -2) -> np.ndarray:
    """Per-channel z-normalization along the time axis; flat channels map to 0."""
    X = np.asarray(X, dtype=float)
    mu = X.mean(axis=axis, keepdims=True)
    sd = X.std(axis=axis, keepdims=True)
    return np.where(sd > 1e-12, (X - mu) / np.where(sd > 1e-12, sd, 1.0), 0.0)


def _as_series(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def ncc_c(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Normalized circular cross-correlation, entry w pairs x[t] with y[t - w]."""
    x, y = _as_series(x), _as_series(y)
    denom = np.linalg.norm(x) * np.linalg.norm(y)
    if denom == 0:
        return np.zeros(len(x))
    cc = np.fft.ifft(np.fft.fft(x, axis=0) * np.conj(np.fft.fft(y, axis=0)), axis=0).real.sum(axis=1)
    return cc / denom


def sbd(x, y) -> tuple[float, int]:
    """Shape-based distance and the circular shift of ``y`` that best matches ``x``."""
    cc = ncc_c(x, y)
    w = int(np.argmax(cc))
    return float(1.0 - cc[w]), w


def _sbd_matrix(X: np.ndarray, C: np.ndarray):
    """All-pairs SBD between (n, S, ch) series and (k, S, ch) centroids."""
    FX = np.fft.fft(X, axis=1)
    FC = np.fft.fft(C, axis=1)
    cc = np.fft.ifft(np.einsum("isc,jsc->ijs", FX, np.conj(FC)), axis=2).real
    nx = np.linalg.norm(X.reshape(len(X), -1), axis=1)
    nc = np.linalg.norm(C.reshape(len(C), -1), axis=1)
    denom = nx[:, None] * nc[None, :]
    ncc = np.where(denom[..., None] > 0, cc / np.where(denom > 0, denom, 1.0)[..., None], 0.0)
    best = ncc.argmax(axis=2)
    dist = 1.0 - np.take_along_axis(ncc, best[..., None], axis=2)[..., 0]
    return dist, best


def _extract_shape(members: np.ndarray, centroid: np.ndarray) -> np.ndarray:
    """Top eigenvector of the aligned scatter matrix, re-z-normalized."""
    if not np.any(centroid):
        aligned = members
    else:
        _, shifts = _sbd_matrix(centroid[None], members)
        # shift w aligns members[j] to the centroid via roll by w
        aligned = np.stack([np.roll(m, s, axis=0) for m, s in zip(members, shifts[0])])
    Y = aligned.reshape(len(aligned), -1)
    # members are time-centered per channel, so the centering projector is the identity on span(Y)
    _, _, vt = np.linalg.svd(Y, full_matrices=False)
    c = vt[0].reshape(members.shape[1:])
    if (Y @ c.ravel()).sum() < 0:
        c = -c
    return zscore(c, axis=0)


@dataclass
class KShapeResult:
    centroids: np.ndarray  # (k, S, channels)
    labels: np.ndarray
    inertia: float
    n_iter: int


def kshape_cluster(windows, n_clusters: int, max_iter: int = 100, seed: int = 0) -> KShapeResult:
    """k-Shape on a list of (S, channels) series (1-D series are allowed).

    Initial centroids are drawn k-means++ style under SBD; iteration stops
    when the labels no longer change.
    """
    X = np.stack([_as_series(w) for w in windows])
    n = len(X)
    if n_clusters < 1:
        raise ValidationError("n_clusters must be >= 1")
    if n_clusters > n:
        raise ValidationError(f"n_clusters={n_clusters} exceeds the number of windows ({n})")
    X = zscore(X, axis=1)
    rng = np.random.default_rng(seed)

    idx = [int(rng.integers(n))]
    for _ in range(1, n_clusters):
        d, _ = _sbd_matrix(X, X[idx])
        p = d.min(axis=1) ** 2
        if p.sum() <= 0:
            remaining = np.setdiff1d(np.arange(n), idx)
            idx.append(int(rng.choice(remaining)))
        else:
            idx.append(int(rng.choice(n, p=p / p.sum())))
    C = X[idx].copy()
    labels = _sbd_matrix(X, C)[0].argmin(axis=1)

    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        for j in range(n_clusters):
            members = X[labels == j]
            if len(members) == 0:
                d, _ = _sbd_matrix(X, C)
                far = int(d[np.arange(n), labels].argmax())
                labels[far] = j
                members = X[far:far + 1]
            C[j] = _extract_shape(members, C[j])
        dist, _ = _sbd_matrix(X, C)
        new = dist.argmin(axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
    dist, _ = _sbd_matrix(X, C)
    inertia = float((dist[np.arange(n), labels] ** 2).mean())
    return KShapeResult(C, labels, inertia, n_iter)


def sliding_windows(x: np.ndarray, S: int) -> np.ndarray:
    """(T, N, d) -> (T-S+1, S, N*d) windows."""
    T = x.shape[0]
    if T < S:
        raise ValidationError(f"sequence length {T} shorter than window {S}")
    flat = x.reshape(T, -1)
    return np.stack([flat[t:t + S] for t in range(T - S + 1)])


@dataclass
class PatternBank:
    patterns: torch.Tensor  # (N_p, S, N, d)

    def __post_init__(self):
        if self.patterns.ndim != 4:
            raise ValidationError("patterns must have shape (N_p, S, N, d)")
        if self.n_patterns < 1 or self.window < 2:
            raise ValidationError("need N_p >= 1 and S >= 2")
        if not torch.isfinite(self.patterns).all():
            raise ValidationError("pattern bank contains non-finite values")

    @property
    def n_patterns(self):
        return self.patterns.shape[0]

    @property
    def window(self):
        return self.patterns.shape[1]

    @classmethod
    def zeros(cls, n_patterns, window, N, d, dtype=torch.float32):
        return cls(torch.zeros(n_patterns, window, N, d, dtype=dtype))


def fit_bank(embedded, n_patterns: int = 8, window: int = 5, max_iter: int = 100, seed: int = 0,
             dtype=torch.float32) -> PatternBank:
    """Fit a bank from identity-view embedded tensors, each (T, N, d)."""
    embedded = [np.asarray(e, dtype=float) for e in embedded]
    N, d = embedded[0].shape[1:]
    wins = np.concatenate([sliding_windows(e, window) for e in embedded])
    res = kshape_cluster(list(wins), n_patterns, max_iter=max_iter, seed=seed)
    return PatternBank(torch.as_tensor(res.centroids.reshape(n_patterns, window, N, d), dtype=dtype))


# ------------------------------------------------------------- matching


def match_patterns(history, patterns, W_u, W_m, W_c):
    """Delay summary of one node.

    history (S, C) recent window of the node; patterns (N_p, S, d) the bank
    slice for that node; returns (summary (d',), weights (N_p,)).
    """
    u = history.reshape(-1) @ W_u
    flat = patterns.reshape(patterns.shape[0], -1)
    m = flat @ W_m
    w = torch.softmax(m @ u, dim=0)
    return w @ (flat @ W_c), w


def augment_keys(keys: torch.Tensor, summaries: torch.Tensor) -> torch.Tensor:
    if keys.shape != summaries.shape:
        raise ValidationError(f"key shape {tuple(keys.shape)} != summary shape {tuple(summaries.shape)}")
    return keys + summaries


def padded_history(x: torch.Tensor, S: int) -> torch.Tensor:
    """Left-pad (..., T, N, C) along T with S-1 copies of the first slice."""
    first = x[..., :1, :, :].expand(*x.shape[:-3], S - 1, *x.shape[-2:])
    return torch.cat([first, x], dim=-3)


class DelayMatcher(nn.Module):
    """Per-layer delay projections.

    ``history_scores`` maps an input tensor to u for every (t, n) using the
    window ending at t; the pattern side (m_i and its value projection) is
    shared by the whole layer.
    """

    def __init__(self, in_width: int, d: int, d_head: int, window: int, d_match: int | None = None):
        super().__init__()
        d_match = d_match or d_head
        self.window = window
        self.W_u = nn.Parameter(torch.randn(window, in_width, d_match) / np.sqrt(window * in_width))
        self.W_m = nn.Parameter(torch.randn(window * d, d_match) / np.sqrt(window * d))
        self.W_c = nn.Parameter(torch.randn(window * d, d_head) / np.sqrt(window * d))

    def history_scores(self, x: torch.Tensor, channels: slice | None = None, W: torch.Tensor | None = None):
        """u for (..., T, N, C) inputs.

        ``channels`` selects a block of W_u rows; ``W`` (S, C, h) replaces W_u.
        """
        if W is None:
            W = self.W_u if channels is None else self.W_u[:, channels]
        S = self.window
        T = x.shape[-3]
        xp = padded_history(x, S)
        # stack the S lagged copies on the channel axis: one matmul per call
        lagged = torch.cat([xp[..., s:s + T, :, :] for s in range(S)], dim=-1)
        return lagged @ W.reshape(-1, W.shape[-1])

    def pattern_side(self, patterns: torch.Tensor):
        """(N_p, S, N, d) -> per-node m (N, N_p, h) and values c (N, N_p, d')."""
        Np, S, N, d = patterns.shape
        flat = patterns.permute(2, 0, 1, 3).reshape(N, Np, S * d)
        return flat @ self.W_m, flat @ self.W_c

    def summaries(self, u: torch.Tensor, m: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        """u (..., T, N, h) -> r (..., T, N, d')."""
        return self.weighted(self.scores(u, m), c)

    @staticmethod
    def scores(u, m):
        """Inner products <u, m_i> per node: (..., T, N, h) -> (..., T, N, N_p)."""
        return torch.einsum("...tnh,nih->...tni", u, m)

    @staticmethod
    def weighted(scores, c):
        w = softmax(scores, dim=-1)
        return torch.einsum("...tni,nid->...tnd", w, c)
