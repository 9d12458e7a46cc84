"""Spatio-temporal encoder layers.

Views are stacked on a dedicated axis in D2 order, so a bundle tensor has
shape (..., 4, T, N, d).  The equivariant spatial head scores every ordered
view pair (h, k) on the channel concatenation X_h || X_k and averages, for
output view g, over the pairs (h, g.h).  Because the projections are linear
in the concatenation, each pair's Q/K/V (and delay history term) is the sum
of two per-view halves; only the 16 small attention maps are formed per
pair.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .delay import DelayMatcher, augment_keys
from .errors import ValidationError
from .ops import softmax
from .symmetry import COMPOSE_TABLE, D2

ABLATION_FLAGS = ("-MoE", "-Delay", "-Group", "-PE", "-Lap")


@dataclass(frozen=True)
class Ablations:
    moe: bool = False
    delay: bool = False
    group: bool = False
    pe: bool = False
    lap: bool = False

    @classmethod
    def from_flags(cls, flags) -> "Ablations":
        flags = list(flags or ())
        unknown = [f for f in flags if f not in ABLATION_FLAGS]
        if unknown:
            raise ValidationError(f"unknown ablation flags {unknown}; expected a subset of {ABLATION_FLAGS}")
        return cls(*(f in flags for f in ABLATION_FLAGS))

    def flags(self) -> list[str]:
        return [f for f, on in zip(ABLATION_FLAGS, (self.moe, self.delay, self.group, self.pe, self.lap)) if on]


NO_ABLATIONS = Ablations()


def scaled_attention(Q, K, V, mask=None):
    """softmax(Q K^T / sqrt(d')) V over the second-to-last axis."""
    A = Q @ K.transpose(-1, -2) / math.sqrt(Q.shape[-1])
    if mask is not None:
        A = A.masked_fill(~mask, float("-inf"))
    W = softmax(A)
    return W @ V, W


def causal_mask(T: int, device=None) -> torch.Tensor:
    return torch.ones(T, T, dtype=torch.bool, device=device).tril()


def spatial_attention_slice(X_t, W_Q, W_K, W_V, delay_summaries=None):
    """One spatial slice (N, d) -> (N, d'), optionally with delay-augmented keys."""
    Q, K, V = X_t @ W_Q, X_t @ W_K, X_t @ W_V
    if delay_summaries is not None:
        K = augment_keys(K, delay_summaries)
    return scaled_attention(Q, K, V)


def temporal_attention_node(X_n, W_Q, W_K, W_V, causal=False):
    """One node's series (T, d) -> (T, d')."""
    mask = causal_mask(X_n.shape[-2], X_n.device) if causal else None
    return scaled_attention(X_n @ W_Q, X_n @ W_K, X_n @ W_V, mask)


def fuse(H_spatial, H_temporal):
    if H_spatial.shape != H_temporal.shape:
        raise ValidationError(f"cannot fuse {tuple(H_spatial.shape)} with {tuple(H_temporal.shape)}")
    return torch.cat([H_spatial, H_temporal], dim=-1)


def _xavier(*shape):
    fan_in, fan_out = shape[-2], shape[-1]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return nn.Parameter(torch.empty(*shape).uniform_(-bound, bound))


# (g, h) -> view index of g.h, the partner of h in output view g
_PARTNER = torch.as_tensor(COMPOSE_TABLE)
_FIRST = torch.arange(4).expand(4, 4)


class EquivariantSpatialAttention(nn.Module):
    def __init__(self, d: int, d_head: int, window: int):
        super().__init__()
        self.d = d
        self.W_Q = _xavier(2 * d, d_head)
        self.W_K = _xavier(2 * d, d_head)
        self.W_V = _xavier(2 * d, d_head)
        self.delay = DelayMatcher(2 * d, d, d_head, window)

    def pair_outputs(self, views, patterns=None):
        """Message passing on all 16 ordered pairs.

        Returns (out, weights) with out[..., a, b] = MP(X_a || X_b),
        shapes (..., 4, 4, T, N, d') and (..., 4, 4, T, N, N).
        """
        d = self.d
        lo, hi = slice(0, d), slice(d, 2 * d)

        def pair(W):
            a = views @ W[lo]
            b = views @ W[hi]
            return a.unsqueeze(-4) + b.unsqueeze(-5)

        Q, K, V = pair(self.W_Q), pair(self.W_K), pair(self.W_V)
        if patterns is not None:
            m, c = self.delay.pattern_side(patterns)
            # <u_a + u_b, m> splits into per-view halves as well
            Wu = self.delay.W_u
            h = Wu.shape[-1]
            u = self.delay.history_scores(views, W=torch.cat([Wu[:, lo], Wu[:, hi]], dim=-1))
            sa = self.delay.scores(u[..., :h], m)
            sb = self.delay.scores(u[..., h:], m)
            K = augment_keys(K, self.delay.weighted(sa.unsqueeze(-4) + sb.unsqueeze(-5), c))
        return scaled_attention(Q, K, V)

    def identity_output(self, views, patterns=None):
        """Identity view only: the average over the diagonal pairs (h, h).

        X_h || X_h projects through the sum of both weight halves, so only
        four attention maps are formed.  Shapes (..., 1, T, N, d'), (..., 1, T, N, N).
        """
        d = self.d
        lo, hi = slice(0, d), slice(d, 2 * d)
        Q, K, V = (views @ (W[lo] + W[hi]) for W in (self.W_Q, self.W_K, self.W_V))
        if patterns is not None:
            u = self.delay.history_scores(views, W=self.delay.W_u[:, lo] + self.delay.W_u[:, hi])
            m, c = self.delay.pattern_side(patterns)
            K = augment_keys(K, self.delay.summaries(u, m, c))
        out, W = scaled_attention(Q, K, V)
        return out.mean(dim=-4, keepdim=True), W.mean(dim=-4, keepdim=True)

    def forward(self, views, patterns=None, identity_only=False):
        """views (..., 4, T, N, d) -> per-view outputs (..., 4, T, N, d') and the
        identity-view attention (..., 1, T, N, N)."""
        if identity_only:
            return self.identity_output(views, patterns)
        out, W = self.pair_outputs(views, patterns)
        H = out[..., _FIRST, _PARTNER, :, :, :].mean(dim=-4)
        # identity-view attention: mean over the diagonal pairs (h, h)
        A = torch.diagonal(W, dim1=-5, dim2=-4).mean(dim=-1).unsqueeze(-4)
        return H, A


class ViewSumSpatialAttention(nn.Module):
    """Views attended independently, then mixed with learned softmax weights."""

    def __init__(self, d: int, d_head: int, window: int):
        super().__init__()
        self.W_Q = _xavier(d, d_head)
        self.W_K = _xavier(d, d_head)
        self.W_V = _xavier(d, d_head)
        self.view_logits = nn.Parameter(torch.zeros(4))
        self.delay = DelayMatcher(d, d, d_head, window)

    def forward(self, views, patterns=None, identity_only=False):
        Q, K, V = views @ self.W_Q, views @ self.W_K, views @ self.W_V
        if patterns is not None:
            u = self.delay.history_scores(views)
            m, c = self.delay.pattern_side(patterns)
            K = augment_keys(K, self.delay.summaries(u, m, c))
        Y, W = scaled_attention(Q, K, V)
        beta = torch.softmax(self.view_logits, dim=0)
        H = torch.einsum("v,...vtnd->...tnd", beta, Y).unsqueeze(-4)
        A = torch.einsum("v,...vtnm->...tnm", beta, W).unsqueeze(-4)
        if identity_only:
            return H, A
        return H.expand_as(Y), A


class TemporalAttention(nn.Module):
    def __init__(self, d: int, d_head: int):
        super().__init__()
        self.W_Q = _xavier(d, d_head)
        self.W_K = _xavier(d, d_head)
        self.W_V = _xavier(d, d_head)

    def forward(self, x, causal=True):
        """x (..., T, N, d) -> (..., T, N, d'), attention per node over time."""
        xn = x.transpose(-2, -3)
        mask = causal_mask(x.shape[-3], x.device) if causal else None
        out, W = scaled_attention(xn @ self.W_Q, xn @ self.W_K, xn @ self.W_V, mask)
        return out.transpose(-2, -3), W


class EncoderLayer(nn.Module):
    def __init__(self, d: int, d_head: int, window: int):
        super().__init__()
        self.spatial = EquivariantSpatialAttention(d, d_head, window)
        self.spatial_plain = ViewSumSpatialAttention(d, d_head, window)
        self.temporal = TemporalAttention(d, d_head)
        self.out = nn.Linear(2 * d_head, d)
        self.norm = nn.LayerNorm(d)

    def spatial_head(self, ablations: Ablations):
        return self.spatial_plain if ablations.group else self.spatial

    def forward(self, views, patterns=None, ablations: Ablations = NO_ABLATIONS, causal=True, identity_only=False):
        """With ``identity_only`` only view 0 is computed (enough for a last layer)."""
        pats = None if ablations.delay else patterns
        H_s, A_s = self.spatial_head(ablations)(views, pats, identity_only)
        nxt, H_t = self.combine(views, H_s, causal)
        return nxt, H_s, H_t, A_s

    def combine(self, views, H_s, causal=True):
        """Residual update from spatial outputs and identity-view temporal attention."""
        H_t, _ = self.temporal(views[..., 0, :, :, :], causal=causal)
        mixed = torch.cat([H_s, H_t.unsqueeze(-4).expand_as(H_s)], dim=-1)
        base = views[..., :1, :, :, :] if H_s.shape[-4] == 1 else views
        return self.norm(base + self.out(mixed)), H_t


@dataclass
class STEmbedding:
    spatial: torch.Tensor  # (..., V, T, N, d') last layer; V = 4, or 1 when only the identity view is needed
    temporal: torch.Tensor  # (..., T, N, d')
    fused: torch.Tensor  # (..., T, N, 2d'), identity-view spatial first
    attention: list = field(default_factory=list)  # per layer (..., T, N, N), identity view
    layer_inputs: list = field(default_factory=list)
    layer_spatial: list = field(default_factory=list)  # per layer (..., V, T, N, d')


class STEncoder(nn.Module):
    def __init__(self, d: int = 32, d_head: int = 32, n_layers: int = 2, window: int = 5):
        super().__init__()
        if n_layers < 1:
            raise ValidationError("at least one encoder layer is required")
        self.layers = nn.ModuleList(EncoderLayer(d, d_head, window) for _ in range(n_layers))

    def forward(self, views, patterns=None, ablations: Ablations = NO_ABLATIONS, causal=True,
                all_views=False) -> STEmbedding:
        attn, inputs, spatial = [], [], []
        x = views
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            inputs.append(x)
            x, H_s, H_t, A = layer(x, patterns, ablations, causal, identity_only=i == last and not all_views)
            attn.append(A[..., 0, :, :, :])
            spatial.append(H_s)
        fused = fuse(H_s[..., 0, :, :, :], H_t)
        return STEmbedding(H_s, H_t, fused, attn, inputs, spatial)

    def forward_relabeled(self, emb: STEmbedding, g_index, patterns=None, ablations: Ablations = NO_ABLATIONS,
                          causal=True) -> STEmbedding:
        """Embedding of the g-relabeled input, given the embedding ``emb`` of the original.

        The first layer's spatial outputs are unchanged by a view relabeling
        (the pair average runs over the whole group), so they are reused;
        everything after them runs on the relabeled tensors.  Mathematically
        equal to ``forward`` on the relabeled input.  The -Group path lacks
        this invariance and is recomputed in full.
        """
        if ablations.group:
            return self(relabel_views(emb.layer_inputs[0], g_index), patterns, ablations, causal)
        attn, inputs, spatial = [], [], []
        x = relabel_views(emb.layer_inputs[0], g_index)
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            inputs.append(x)
            if i == 0 and i < last:
                H_s = emb.layer_spatial[0]
                x, H_t = layer.combine(x, H_s, causal)
                spatial.append(H_s)
                attn.append(emb.attention[0])
            else:
                x, H_s, H_t, A = layer(x, patterns, ablations, causal, identity_only=i == last)
                attn.append(A[..., 0, :, :, :])
                spatial.append(H_s)
        fused = fuse(H_s[..., 0, :, :, :], H_t)
        return STEmbedding(H_s, H_t, fused, attn, inputs, spatial)


def relabel_views(x: torch.Tensor, g_index) -> torch.Tensor:
    """Views of the g-transformed sequence: view h of the result is view h.g of ``x``.

    ``x`` is (B, 4, ...); ``g_index`` is an int or a length-B array.
    """
    g_index = np.broadcast_to(np.asarray(g_index), (x.shape[0],))
    perm = torch.as_tensor(COMPOSE_TABLE[:, g_index].T)  # (B, 4)
    return x[torch.arange(x.shape[0])[:, None], perm]


def encode(bundle, encoder: STEncoder, patterns=None, ablations: Ablations = NO_ABLATIONS, causal=True,
           all_views=False):
    """Run the layer stack on a ViewBundle or a stacked (..., 4, T, N, d) tensor."""
    views = bundle.stacked() if hasattr(bundle, "stacked") else bundle
    if views.shape[-4] != 4:
        raise ValidationError("bundle must hold 4 views")
    return encoder(views, patterns, ablations, causal, all_views)


def equivariant_message_passing(bundle, head: EquivariantSpatialAttention, patterns=None, group=None):
    """Per-view spatial outputs {g: (T, N, d')} for a ViewBundle.

    ``group`` restricts the average to a subgroup (e.g. ``[IDENTITY]``).
    """
    views = bundle.views if hasattr(bundle, "views") else bundle
    group = list(D2) if group is None else list(group)
    missing = [g for g in group if g not in views]
    if missing:
        raise ValidationError(f"bundle is missing views {missing}")
    from .symmetry import compose

    out = {}
    full = set(group) == set(D2)
    if full:
        H, _ = head(torch.stack([views[g] for g in D2]), patterns)
        return {g: H[g.index] for g in D2}
    for g in group:
        terms = []
        for h in group:
            k = compose(g, h)
            pair = torch.stack([views[h], views[k]])
            # route through the pair machinery with a two-view stack
            o, _ = head.pair_outputs(pair, patterns)
            terms.append(o[0, 1])
        out[g] = torch.stack(terms).mean(0)
    return out


def averaged_predictor(f, x, transforms):
    """Mean of ``f`` over group-transformed inputs; invariant by construction."""
    outs = [f(t(x)) for t in transforms]
    return sum(outs) / len(outs)
