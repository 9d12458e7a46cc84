"""Experts, task heads and the routed mixture."""
from __future__ import annotations

import torch
from torch import nn

from .config import Config
from .delay import PatternBank
from .embedding import FeatureEmbedding, node_sequence_pe
from .moe import Router
from .transformer import NO_ABLATIONS, Ablations, STEncoder


class TaskHeads(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.transition = nn.Linear(width, 3)
        # one hidden layer: a linear score of the fused embedding underfits possession and shot
        self.possession = nn.Sequential(nn.Linear(width, width), nn.ReLU(), nn.Linear(width, 1))
        self.pass_query = nn.Linear(width, width, bias=False)
        self.shot = nn.Sequential(nn.Linear(width, width), nn.ReLU(), nn.Linear(width, 1))

    def transition_logits(self, H):
        return self.transition(H)

    def possession_logits(self, H):
        """(..., N, w) -> (..., N); softmax over the last axis gives possession."""
        return self.possession(H).squeeze(-1)

    def pass_logits(self, H, holder):
        """Score every candidate recipient against the holder; the holder is masked out.

        H (B, N, w), holder (B,) long -> (B, N) with -inf at the holder.
        """
        h = H[torch.arange(H.shape[0]), holder]
        scores = torch.einsum("bnw,bw->bn", H, self.pass_query(h))
        own = torch.nn.functional.one_hot(holder, H.shape[1]).bool()
        return scores.masked_fill(own, float("-inf"))

    def readout(self, H):
        return H.mean(dim=-2)

    def shot_logit(self, H):
        """(..., N, w) -> (...)"""
        return self.shot(self.readout(H)).squeeze(-1)


class Expert(nn.Module):
    """All learnable weights of one tactic expert plus its frozen pattern bank."""

    def __init__(self, cfg: Config, n_nodes: int = 10):
        super().__init__()
        self.embedding = FeatureEmbedding(cfg.d_model, cfg.d, cfg.k_eigs)
        self.encoder = STEncoder(cfg.d, cfg.d_head, cfg.n_layers, cfg.window)
        self.heads = TaskHeads(2 * cfg.d_head)
        self.register_buffer("patterns", torch.zeros(cfg.n_patterns, cfg.window, n_nodes, cfg.d))
        self._pe_cache = {}

    def transformer_parameters(self):
        yield from self.embedding.parameters()
        yield from self.encoder.parameters()

    def set_bank(self, bank: PatternBank):
        self.patterns.copy_(bank.patterns.to(self.patterns.dtype))

    @property
    def bank(self) -> PatternBank:
        return PatternBank(self.patterns)

    def positional(self, T, N):
        dtype = self.embedding.feat.weight.dtype
        key = (T, N, dtype)
        if key not in self._pe_cache:
            self._pe_cache[key] = torch.as_tensor(node_sequence_pe(T, N, self.embedding.d), dtype=dtype)
        return self._pe_cache[key]

    def embed(self, view_feats, projectors, ablations: Ablations = NO_ABLATIONS):
        T, N = view_feats.shape[-3], view_feats.shape[-2]
        return self.embedding(view_feats, projectors, self.positional(T, N),
                              use_lap=not ablations.lap, use_pe=not ablations.pe)

    def forward(self, view_feats, projectors, ablations: Ablations = NO_ABLATIONS, causal=True):
        views = self.embed(view_feats, projectors, ablations)
        return self.encoder(views, self.patterns, ablations, causal)

    def encode_relabeled(self, emb, g_index, ablations: Ablations = NO_ABLATIONS, causal=True):
        """Encoding of the relabeled input derived from the encoding ``emb`` of the original."""
        return self.encoder.forward_relabeled(emb, g_index, self.patterns, ablations, causal)


class TacticExpertModel(nn.Module):
    def __init__(self, cfg: Config, n_nodes: int = 10):
        super().__init__()
        self.cfg = cfg
        self.ablations = cfg.ablation_set
        n = 1 if self.ablations.moe else cfg.n_experts
        self.experts = nn.ModuleList(Expert(cfg, n_nodes) for _ in range(n))
        self.router = None if self.ablations.moe else Router(cfg.n_experts, hidden=cfg.router_hidden)

    @property
    def n_experts(self):
        return len(self.experts)

    def router_logits(self, sims):
        if self.router is None:
            return torch.zeros(sims.shape[0], 1, dtype=sims.dtype)
        return self.router(sims)

    def route(self, sims) -> torch.Tensor:
        """Top-1 expert per row; ties resolve to the lowest index."""
        logits = self.router_logits(sims)
        best = logits.max(dim=-1, keepdim=True).values
        first = (logits == best).float().argmax(dim=-1)
        return first

    def transformer_parameters(self):
        for e in self.experts:
            yield from e.transformer_parameters()

    def head_parameters(self, stage: int):
        for e in self.experts:
            if stage == 1:
                yield from e.heads.transition.parameters()
            else:
                for name in ("possession", "pass_query", "shot"):
                    yield from getattr(e.heads, name).parameters()
        if stage == 2 and self.router is not None:
            yield from self.router.parameters()

    def encode_with(self, expert: int, view_feats, projectors, causal=True):
        return self.experts[expert](view_feats, projectors, self.ablations, causal)

    def encode_sparse(self, view_feats, projectors, sims, causal=True):
        """Route, then run only the selected expert (batch of one or a routed group)."""
        e = int(self.route(sims)[0])
        return e, self.encode_with(e, view_feats, projectors, causal)

    def encode_dense(self, view_feats, projectors, sims, causal=True):
        """Run every expert and pick the routed one's output."""
        outs = [self.encode_with(i, view_feats, projectors, causal) for i in range(self.n_experts)]
        e = int(self.route(sims)[0])
        return e, outs[e]
