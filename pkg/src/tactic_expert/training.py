"""Two-stage training, task losses, evaluation and the gradient oracle.

Stage 1 pretrains every expert on next-step ball transitions, with a
contrastive term that separates experts and an auxiliary router loss that
follows the similarity partition of the data.  Stage 2 freezes embedding
and encoder weights and fits the task heads and router.
"""
from __future__ import annotations

import copy
import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .config import Config
from .delay import fit_bank
from .embedding import prepare_inputs
from .errors import TrainingDiverged, ValidationError
from .metrics import auc, macro_f1
from .model import TacticExpertModel, TaskHeads
from .moe import expert_separation, infonce_loss, partition_label, sample_negatives, similarity_vector
from .transformer import relabel_views

log = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


# ---------------------------------------------------------------- data


@dataclass
class Prepared:
    view_feats: np.ndarray  # (M, 4, T, N, F)
    projectors: np.ndarray  # (M, 4, N, N)
    sims: np.ndarray  # (M, 12)
    transitions: np.ndarray  # (M, T, N) in {-1, 0, 1}
    holders: np.ndarray  # (M, T), -1 when nobody has the ball
    shot: np.ndarray  # (M,), nan when unlabeled
    tactic: np.ndarray  # (M,), -1 when unlabeled
    ids: list = field(default_factory=list)

    def __len__(self):
        return len(self.view_feats)

    def tensors(self, dtype):
        return (torch.as_tensor(self.view_feats, dtype=dtype), torch.as_tensor(self.projectors, dtype=dtype),
                torch.as_tensor(self.sims, dtype=dtype))


def prepare(sequences, k_eigs: int) -> Prepared:
    if not sequences:
        raise ValidationError("dataset is empty")
    vfs, pjs, sims, trans, holders, shot, tactic = [], [], [], [], [], [], []
    for seq in sequences:
        vf, pj = prepare_inputs(seq, k_eigs)
        vfs.append(vf)
        pjs.append(pj)
        sims.append(similarity_vector(seq))
        trans.append(seq.transitions.values.astype(np.int64))
        holders.append([-1 if h is None else h for h in seq.holders()])
        shot.append(np.nan if seq.shot is None else float(seq.shot))
        tactic.append(-1 if seq.tactic_label is None else seq.tactic_label)
    return Prepared(np.stack(vfs), np.stack(pjs), np.stack(sims), np.stack(trans),
                    np.asarray(holders, dtype=np.int64), np.asarray(shot), np.asarray(tactic),
                    [s.sequence_id for s in sequences])


# -------------------------------------------------------------- losses


def stage1_loss(logits: torch.Tensor, targets) -> torch.Tensor:
    """Mean 3-class cross-entropy; targets in {-1, 0, +1} align with logits."""
    targets = torch.as_tensor(targets, dtype=torch.long)
    if logits.shape[:-1] != targets.shape or logits.shape[-1] != 3:
        raise ValidationError(f"logits {tuple(logits.shape)} do not match targets {tuple(targets.shape)}")
    return F.cross_entropy(logits.reshape(-1, 3), (targets + 1).reshape(-1))


def next_step(logits: torch.Tensor, transitions):
    """Pair the prediction made at slice t with the label of slice t+1."""
    transitions = torch.as_tensor(transitions, dtype=torch.long)
    return logits[..., :-1, :, :], transitions[..., 1:, :]


@dataclass
class TaskLosses:
    node: torch.Tensor
    link: torch.Tensor
    graph: torch.Tensor
    skipped: int = 0

    def total(self):
        return self.node + self.link + self.graph


def task_losses(fused: torch.Tensor, heads: TaskHeads, holders, shot) -> TaskLosses:
    """Node, link and graph losses on fused embeddings (B, T, N, w).

    Node: next holder from slice t.  Link: recipient at every pass event,
    holder masked.  Graph: shot flag from the readout of the last slice.
    """
    holders = torch.as_tensor(holders, dtype=torch.long)
    shot = torch.as_tensor(shot, dtype=fused.dtype)
    zero = fused.sum() * 0.0
    nxt = holders[:, 1:]
    valid = nxt >= 0
    skipped = int((~valid).sum())
    if valid.any():
        logits = heads.possession_logits(fused[:, :-1])
        node = F.cross_entropy(logits[valid], nxt[valid])
    else:
        node = zero
    cur = holders[:, :-1]
    passes = valid & (cur >= 0) & (cur != nxt)
    if passes.any():
        b, t = torch.nonzero(passes, as_tuple=True)
        pl = heads.pass_logits(fused[b, t], cur[b, t])
        link = F.cross_entropy(pl, nxt[b, t])
    else:
        link = zero
    labeled = ~torch.isnan(shot)
    if labeled.any():
        sl = heads.shot_logit(fused[:, -1])
        graph = F.binary_cross_entropy_with_logits(sl[labeled], shot[labeled])
    else:
        graph = zero
    return TaskLosses(node, link, graph, skipped)


# ----------------------------------------------------------- gradients


def grad_check(loss_fn, params, step: float = 1e-5, n_coords: int = 200, seed: int = 0, floor: float = 1e-8):
    """Max relative error between autograd and central differences.

    ``loss_fn()`` must recompute the scalar loss from ``params``.  Samples
    ``n_coords`` coordinates uniformly (all of them if there are fewer).
    Relative error is |a - n| / max(|a|, |n|, floor).
    """
    params = [p for p in params]
    for p in params:
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    sizes = np.array([p.numel() for p in params])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    flat = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst, records = 0.0, []
    with torch.no_grad():
        for k in flat:
            i = int(np.searchsorted(offsets, k, side="right") - 1)
            j = int(k - offsets[i])
            p = params[i].view(-1)
            orig = p[j].item()
            p[j] = orig + step
            up = loss_fn().item()
            p[j] = orig - step
            down = loss_fn().item()
            p[j] = orig
            num = (up - down) / (2 * step)
            ana = grads[i].view(-1)[j].item()
            rel = abs(ana - num) / max(abs(ana), abs(num), floor)
            records.append((i, j, ana, num, rel))
            worst = max(worst, rel)
    return worst, records


# ------------------------------------------------------------- training


@dataclass
class FitResult:
    model: TacticExpertModel
    history: list
    partition: np.ndarray
    config: Config
    checksums: dict = field(default_factory=dict)  # transformer weights before/after stage 2

    def stage_losses(self, stage: int, key: str = "loss"):
        return [h[key] for h in self.history if h["stage"] == stage]


def _partition(data: Prepared, cfg: Config) -> np.ndarray:
    if cfg.ablation_set.moe:
        return np.zeros(len(data), dtype=np.int64)
    return np.array([partition_label(s, cfg.n_experts) for s in data.sims], dtype=np.int64)


def _identity_embeddings(expert, vf, pj, ablations, batch=64):
    out = []
    with torch.no_grad():
        for i in range(0, len(vf), batch):
            out.append(expert.embed(vf[i:i + batch], pj[i:i + batch], ablations)[:, 0])
    return torch.cat(out).cpu().numpy()


def fit_banks(model: TacticExpertModel, data: Prepared, partition, cfg: Config, vf=None, pj=None):
    dtype = DTYPES[cfg.dtype]
    if vf is None:
        vf, pj, _ = data.tensors(dtype)
    for e, expert in enumerate(model.experts):
        members = np.flatnonzero(partition == e)
        n_windows = len(members) * (data.view_feats.shape[2] - cfg.window + 1)
        if n_windows < cfg.n_patterns:
            members = np.arange(len(data))
        emb = _identity_embeddings(expert, vf[members], pj[members], model.ablations)
        bank = fit_bank(list(emb), cfg.n_patterns, cfg.window, cfg.kshape_max_iter, seed=cfg.seed + e, dtype=dtype)
        expert.set_bank(bank)


def _gates(model, sims, experts):
    """Router probability of the chosen expert divided by its detached value.

    Equal to 1 in the forward pass; routes task-loss gradient to the router.
    """
    if model.router is None:
        return torch.ones(len(experts), dtype=sims.dtype)
    p = torch.softmax(model.router_logits(sims), dim=-1)
    chosen = p[torch.arange(len(experts)), experts]
    return chosen / chosen.detach()


def _lr_at(cfg: Config, epoch: int) -> float:
    return cfg.lr_warmup if epoch < cfg.warmup_epochs else cfg.lr


def _check_finite(loss, model, snapshot, epoch, stage):
    if not torch.isfinite(loss):
        model.load_state_dict(snapshot)
        raise TrainingDiverged(epoch, stage, copy.deepcopy(snapshot))


def fit(sequences, cfg: Config, progress=None) -> FitResult:
    """Train a model on ``sequences``; deterministic given ``cfg.seed``.

    Subnormal floats are flushed to zero while training: once the stage-1
    loss gets small, softmax tails go subnormal and CPU arithmetic on them
    is several times slower.
    """
    if not sequences:
        raise ValidationError("cannot fit on an empty dataset")
    torch.set_flush_denormal(True)
    try:
        return _fit(sequences, cfg, progress)
    finally:
        torch.set_flush_denormal(False)


def _fit(sequences, cfg: Config, progress=None) -> FitResult:
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    dtype = DTYPES[cfg.dtype]
    data = sequences if isinstance(sequences, Prepared) else prepare(sequences, cfg.k_eigs)
    N = data.view_feats.shape[3]
    model = TacticExpertModel(cfg, n_nodes=N).to(dtype)
    abl = model.ablations
    partition = _partition(data, cfg)
    vf, pj, sims = data.tensors(dtype)
    trans = torch.as_tensor(data.transitions)
    part_t = torch.as_tensor(partition)
    if not abl.delay:
        fit_banks(model, data, partition, cfg, vf, pj)

    history = []
    M = len(data)
    bs = max(1, min(cfg.batch_size, M))

    # ---- stage 1
    params1 = list(model.transformer_parameters()) + list(model.head_parameters(1))
    if model.router is not None:
        params1 += list(model.router.parameters())
    opt = torch.optim.AdamW(params1, lr=_lr_at(cfg, 0), weight_decay=cfg.weight_decay)
    for epoch in range(cfg.epochs):
        for group in opt.param_groups:
            group["lr"] = _lr_at(cfg, epoch)
        snapshot = copy.deepcopy(model.state_dict())
        order = rng.permutation(M)
        sums = {"loss": 0.0, "ce": 0.0, "con": 0.0, "aux": 0.0}
        n_batches = 0
        for start in range(0, M, bs):
            idx = order[start:start + bs]
            b = len(idx)
            g_pos = rng.integers(1, 4, size=b)
            X, P, part, y = vf[idx], pj[idx], part_t[idx], trans[idx]
            gates = _gates(model, sims[idx], part)
            ce_sum = 0.0
            Z = [None] * b
            Z_pos = [None] * b
            for e in torch.unique(part).tolist():
                sel = torch.nonzero(part == e, as_tuple=True)[0]
                emb = model.encode_with(e, X[sel], P[sel])
                fused = emb.fused * gates[sel].view(-1, 1, 1, 1)
                logits = model.experts[e].heads.transition_logits(fused)
                lg, tg = next_step(logits, y[sel])
                ce_sum = ce_sum + stage1_loss(lg, tg) * len(sel)
                z = fused.mean(dim=(1, 2))
                if model.router is not None:
                    # positive branch: same expert, relabeled views, no gradient
                    with torch.no_grad():
                        zp = model.experts[e].encode_relabeled(emb, g_pos[sel.numpy()], abl).fused.mean(dim=(1, 2))
                for k, i in enumerate(sel.tolist()):
                    Z[i] = z[k]
                    if model.router is not None:
                        Z_pos[i] = zp[k]
            ce = ce_sum / b
            loss = ce
            con = torch.zeros((), dtype=dtype)
            if model.router is not None:
                Z = torch.stack(Z)
                neg_idx, mask = sample_negatives(part.numpy(), cfg.n_negatives, rng)
                rows = np.flatnonzero(mask.any(axis=1))
                if len(rows):
                    con = infonce_loss(Z[rows], torch.stack(Z_pos)[rows], Z[torch.as_tensor(neg_idx[rows])], cfg.tau,
                                       torch.as_tensor(mask[rows]))
                aux = F.cross_entropy(model.router_logits(sims[idx]), part)
                loss = loss + cfg.router_aux_weight * aux + cfg.lambda_con * con
            else:
                aux = torch.zeros((), dtype=dtype)
            _check_finite(loss, model, snapshot, epoch, 1)
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums["loss"] += loss.item()
            sums["ce"] += ce.item()
            sums["con"] += con.item()
            sums["aux"] += aux.item()
            n_batches += 1
        rec = {"stage": 1, "epoch": epoch, "lr": _lr_at(cfg, epoch)}
        rec.update({k: v / n_batches for k, v in sums.items()})
        history.append(rec)
        if progress:
            progress(rec)

    # ---- stage 2: frozen encoder, cached embeddings
    for p in model.transformer_parameters():
        p.requires_grad_(False)
    checksums = {"before_stage2": parameter_checksum(model.transformer_parameters())}
    fused_all = _cached_fused(model, vf, pj, partition)
    holders = torch.as_tensor(data.holders)
    shot = torch.as_tensor(data.shot, dtype=dtype)
    params2 = list(model.head_parameters(2))
    opt2 = torch.optim.AdamW(params2, lr=cfg.stage2_lr, weight_decay=cfg.weight_decay)
    for epoch in range(cfg.stage2_epochs):
        snapshot = copy.deepcopy(model.state_dict())
        order = rng.permutation(M)
        sums = {"loss": 0.0, "node": 0.0, "link": 0.0, "graph": 0.0}
        n_batches = 0
        for start in range(0, M, bs):
            idx = order[start:start + bs]
            gates = _gates(model, sims[idx], part_t[idx])
            loss = 0.0
            parts = {"node": 0.0, "link": 0.0, "graph": 0.0}
            for e in torch.unique(part_t[idx]).tolist():
                sel = np.flatnonzero(partition[idx] == e)
                fused = fused_all[idx[sel]] * gates[sel].view(-1, 1, 1, 1)
                tl = task_losses(fused, model.experts[e].heads, holders[idx[sel]], shot[idx[sel]])
                w = len(sel) / len(idx)
                loss = loss + w * tl.total()
                for k in parts:
                    parts[k] += w * getattr(tl, k).item()
            if model.router is not None:
                loss = loss + cfg.router_aux_weight * F.cross_entropy(model.router_logits(sims[idx]), part_t[idx])
            _check_finite(loss, model, snapshot, epoch, 2)
            opt2.zero_grad()
            loss.backward()
            opt2.step()
            sums["loss"] += loss.item()
            for k in parts:
                sums[k] += parts[k]
            n_batches += 1
        rec = {"stage": 2, "epoch": epoch, "lr": cfg.stage2_lr}
        rec.update({k: v / n_batches for k, v in sums.items()})
        history.append(rec)
        if progress:
            progress(rec)
    checksums["after_stage2"] = parameter_checksum(model.transformer_parameters())
    for p in model.transformer_parameters():
        p.requires_grad_(True)
    model.eval()
    return FitResult(model, history, partition, cfg, checksums)


def _cached_fused(model, vf, pj, experts, batch=64):
    out = [None] * len(vf)
    with torch.no_grad():
        for e in np.unique(experts).tolist():
            members = np.flatnonzero(experts == e)
            for i in range(0, len(members), batch):
                sel = members[i:i + batch]
                fused = model.encode_with(e, vf[sel], pj[sel]).fused
                for k, j in enumerate(sel):
                    out[j] = fused[k]
    return torch.stack(out)


def parameter_checksum(params) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


# ------------------------------------------------------------ evaluation


@dataclass
class Predictions:
    experts: np.ndarray
    fused: torch.Tensor
    pooled: np.ndarray


def infer(model: TacticExpertModel, data: Prepared, batch: int = 64) -> Predictions:
    """Sparse inference: each sequence is encoded by its routed expert only."""
    dtype = next(model.parameters()).dtype
    vf, pj, sims = data.tensors(dtype)
    with torch.no_grad():
        experts = model.route(sims).numpy()
    fused = _cached_fused(model, vf, pj, experts, batch)
    return Predictions(experts, fused, fused.mean(dim=(1, 2)).numpy())


def evaluate(model: TacticExpertModel, sequences, return_predictions: bool = False) -> dict:
    data = sequences if isinstance(sequences, Prepared) else prepare(sequences, model.cfg.k_eigs)
    if len(data) == 0:
        raise ValidationError("evaluation split is empty")
    pred = infer(model, data)
    holders = data.holders
    node_true, node_pred = [], []
    link_scores, link_labels = [], []
    shot_true, shot_pred = [], []
    trans_ce = []
    with torch.no_grad():
        for i in range(len(data)):
            heads = model.experts[int(pred.experts[i])].heads
            H = pred.fused[i]
            pos = heads.possession_logits(H[:-1]).argmax(-1).numpy()
            lg, tg = next_step(heads.transition_logits(H)[None], data.transitions[i][None])
            trans_ce.append(stage1_loss(lg, tg).item())
            for t in range(H.shape[0] - 1):
                nxt, cur = holders[i, t + 1], holders[i, t]
                if nxt < 0:
                    continue
                node_true.append(nxt)
                node_pred.append(int(pos[t]))
                if cur >= 0 and cur != nxt:
                    pl = heads.pass_logits(H[t][None], torch.tensor([cur]))[0]
                    prob = torch.softmax(pl, -1).numpy()
                    cand = [j for j in range(H.shape[1]) if j != cur]
                    link_scores.extend(prob[cand])
                    link_labels.extend([j == nxt for j in cand])
            if not np.isnan(data.shot[i]):
                shot_true.append(int(data.shot[i]))
                shot_pred.append(int(heads.shot_logit(H[-1]).item() > 0))
    metrics = {
        "macro_f1_node": macro_f1(node_true, node_pred) if node_true else float("nan"),
        "auc_link": auc(link_scores, link_labels) if link_labels and any(link_labels) else float("nan"),
        "macro_f1_graph": macro_f1(shot_true, shot_pred) if shot_true else float("nan"),
        "stage1_ce": float(np.mean(trans_ce)),
        "n_sequences": len(data),
        "routing_counts": np.bincount(pred.experts, minlength=model.n_experts).tolist(),
    }
    tac = data.tactic
    if (tac >= 0).all() and model.router is not None:
        expected = tac % model.cfg.n_experts
        metrics["routing_accuracy"] = float((pred.experts == expected).mean())
        metrics["partition_accuracy"] = float(
            (pred.experts == np.array([partition_label(s, model.cfg.n_experts) for s in data.sims])).mean())
    if model.n_experts > 1 and len(set(pred.experts.tolist())) > 1:
        metrics.update(expert_separation(pred.pooled, pred.experts))
    if return_predictions:
        return metrics, pred
    return metrics
