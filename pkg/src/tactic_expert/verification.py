"""Cross-module property suite.

    python -m tactic_expert.verification --seed 0 --out report.json

Every property returns a measured value and a tolerance; the report lists
{property_name, status, measured_value, tolerance} per property plus the
module invariant each one traces to.  Exit status is nonzero if any fail.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass

import numpy as np
import torch

from . import symmetry
from .config import Config
from .delay import kshape_cluster, sbd, zscore
from .embedding import (GraphStructure, ViewBundle, laplacian_basis, laplacian_spectrum, node_sequence_pe,
                        prepare_inputs)
from .model import TacticExpertModel
from .moe import infonce_from_similarities
from .symmetry import D2, apply_action, augment_d2, compose, element_matrix, rotation_matrix
from .synth import generate, make_dataset, template
from .training import evaluate, fit, grad_check, next_step, prepare, stage1_loss
from .transformer import (EquivariantSpatialAttention, STEncoder, averaged_predictor, equivariant_message_passing,
                          scaled_attention)


@dataclass
class PropertyResult:
    property_name: str
    status: str
    measured_value: float
    tolerance: float
    traces: str = ""
    seconds: float = 0.0

    def to_dict(self):
        return {"property_name": self.property_name, "status": self.status,
                "measured_value": self.measured_value, "tolerance": self.tolerance,
                "traces": self.traces, "seconds": round(self.seconds, 3)}


def closed_form_compose(g, h):
    """Element whose rotation matrix equals the product of the two matrices."""
    M = element_matrix(g) @ element_matrix(h)
    matches = [k for k in D2 if np.array_equal(element_matrix(k), M)]
    return matches[0]


# ------------------------------------------------------------ helpers


def random_bundle(rng, T=6, N=10, d=16, dtype=torch.float64):
    return ViewBundle({g: torch.as_tensor(rng.standard_normal((T, N, d)), dtype=dtype) for g in D2})


def max_rel(a, b):
    a, b = torch.as_tensor(a).detach(), torch.as_tensor(b).detach()
    return float((a - b).abs().max() / max(float(b.abs().max()), 1e-300))


def random_graph(rng, N):
    W = rng.uniform(0.0, 1.0, (N, N)) * (rng.uniform(size=(N, N)) < 0.6)
    W = np.triu(W, 1)
    W = W + W.T + 1e-3 * (1 - np.eye(N))
    return GraphStructure(W)


def miniature(seed=0, dtype=torch.float64, window=2, n_patterns=2, k_eigs=2):
    """Encoder at T=4, N=3, d=d'=8, L=1 with every module enabled, and its loss closure."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    cfg = Config(T=4, d_model=8, d=8, d_head=8, n_layers=1, k_eigs=k_eigs, window=window,
                 n_patterns=n_patterns, dtype="float64" if dtype == torch.float64 else "float32")
    model = TacticExpertModel(cfg, n_nodes=3).to(dtype)
    expert = model.experts[0]
    with torch.no_grad():
        expert.patterns.copy_(torch.as_tensor(rng.standard_normal(expert.patterns.shape), dtype=dtype))
    feats = rng.standard_normal((4, 3, 39))
    vf, pj = prepare_inputs(feats, k_eigs)
    vf = torch.as_tensor(vf, dtype=dtype)[None]
    pj = torch.as_tensor(pj, dtype=dtype)[None]
    targets = torch.as_tensor(rng.integers(-1, 2, size=(1, 4, 3)))
    params = list(expert.transformer_parameters()) + list(expert.heads.transition.parameters())

    def loss_fn():
        emb = model.encode_with(0, vf, pj)
        lg, tg = next_step(expert.heads.transition_logits(emb.fused), targets)
        return stage1_loss(lg, tg)

    return loss_fn, params, model


def planted_motifs(rng, n=100, S=16, C=2, noise=0.05):
    t = np.linspace(0, 2 * np.pi, S, endpoint=False)
    motif = [np.stack([np.sin(t), np.cos(2 * t)], -1), np.stack([np.sign(np.sin(3 * t)), t / t.max()], -1)]
    labels = np.arange(n) % 2
    X = np.stack([motif[l] * rng.uniform(0.5, 2.0) + rng.uniform(-1, 1) +
                  noise * rng.standard_normal((S, C)) for l in labels])
    return X, labels


def tiny_config(**kw):
    base = dict(n_sequences=20, T=8, d_model=16, d=8, d_head=8, n_layers=1, k_eigs=2, window=3, n_patterns=2,
                kshape_max_iter=10, epochs=2, warmup_epochs=1, stage2_epochs=2, batch_size=10, dtype="float64")
    base.update(kw)
    return Config(**base)


# -------------------------------------------------------------- checks


def check_group_axioms(seed, fault=None):
    table = symmetry.COMPOSE_TABLE.copy()
    if fault == "compose_table":
        table[1, 2], table[1, 3] = table[1, 3], table[1, 2]
    bad = 0
    for g in D2:
        for h in D2:
            bad += int(D2[table[g.index, h.index]] != closed_form_compose(g, h))
    return bad, 0


def check_self_inverse(seed, fault=None):
    return sum(int(compose(g, g) != symmetry.IDENTITY) for g in D2), 0


def check_rotation_exact(seed, fault=None):
    R = rotation_matrix((0.0, 0.0, 1.0), math.pi)
    return float(np.abs(R - np.diag([-1.0, -1.0, 1.0])).max()), 0.0


def check_apply_action_involution(seed, fault=None):
    seq = generate(template(0), 6, noise_sigma=0.2, seed=seed)
    bad = 0
    for g in D2:
        for frame in seq.frames:
            for p in frame:
                q = apply_action(g, apply_action(g, p))
                bad += int(not np.allclose([*q.head, *q.hips, *q.foot1, *q.foot2],
                                           [*p.head, *p.hips, *p.foot1, *p.foot2], atol=1e-12))
                bad += int(abs(math.remainder(q.headOrientation - p.headOrientation, 2 * math.pi)) > 1e-12)
    return bad, 0


def _relabel_error(head, bundle, patterns=None):
    base = equivariant_message_passing(bundle, head, patterns)
    worst = 0.0
    for gp in D2:
        moved = equivariant_message_passing(bundle.relabeled(gp), head, patterns)
        worst = max(worst, max(max_rel(moved[g], base[g]) for g in D2))
    return worst


def check_equivariance_L1(seed, fault=None, n_bundles=10):
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    head = EquivariantSpatialAttention(16, 16, 3).double()
    pats = torch.as_tensor(rng.standard_normal((4, 3, 10, 16)))
    return max(_relabel_error(head, random_bundle(rng), pats) for _ in range(n_bundles)), 1e-6


def check_equivariance_L2(seed, fault=None, n_bundles=10):
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    enc = STEncoder(16, 16, 2, 3).double()
    pats = torch.as_tensor(rng.standard_normal((4, 3, 10, 16)))
    worst = 0.0
    for _ in range(n_bundles):
        b = random_bundle(rng)
        with torch.no_grad():
            emb = enc(b.stacked(), pats, all_views=True)
        for layer, x in zip(enc.layers, emb.layer_inputs):
            worst = max(worst, _relabel_error(layer.spatial, ViewBundle.from_stacked(x), pats))
    return worst, 1e-6


def sequence_predictor(model):
    """Shot probability of a sequence under the routed expert (a D2-generic predictor)."""

    def f(seq):
        data = prepare([seq], model.cfg.k_eigs)
        vf, pj, sims = data.tensors(torch.float64)
        with torch.no_grad():
            e = int(model.route(sims)[0])
            emb = model.encode_with(e, vf, pj)
            return torch.sigmoid(model.experts[e].heads.shot_logit(emb.fused[:, -1]))

    return f


def check_averaged_predictor(seed, fault=None):
    torch.manual_seed(seed)
    model = TacticExpertModel(tiny_config(seed=seed)).double()
    with torch.no_grad():
        for e in model.experts:
            e.patterns.normal_()
    f = sequence_predictor(model)
    seq = make_dataset(1, T=8, seed=seed)[0]
    transforms = [lambda s, g=g: augment_d2(s, g) for g in D2]
    base = averaged_predictor(f, seq, transforms)
    return max(max_rel(averaged_predictor(f, t(seq), transforms), base) for t in transforms), 1e-6


def check_laplacian(seed, fault=None):
    rng = np.random.default_rng(seed)
    K3 = GraphStructure(np.ones((3, 3)) - np.eye(3))
    worst = float(np.abs(laplacian_spectrum(K3)[0] - [0.0, 1.5, 1.5]).max())
    for _ in range(100):
        g = random_graph(rng, 10)
        lam = laplacian_spectrum(g)[0]
        worst = max(worst, float(max(0.0, -lam.min(), lam.max() - 2.0)))
        U = laplacian_basis(g, 4)
        worst = max(worst, float(np.abs(U.T @ U - np.eye(4)).max()))
    return worst, 1e-8


def check_sinusoidal_stats(seed, fault=None):
    pe = node_sequence_pe(20, 10, 32)
    return max(abs(pe.mean()), abs(pe.std() - 0.1)), 1e-9


def check_kshape(seed, fault=None):
    rng = np.random.default_rng(seed)
    x = zscore(rng.standard_normal((12, 3)))
    worst = max(sbd(x, x)[0], sbd(x, np.roll(x, 5, axis=0))[0], sbd(x, 3.5 * x)[0])
    X, labels = planted_motifs(rng)
    res = kshape_cluster(X, 2, seed=seed)
    from sklearn.metrics import adjusted_rand_score

    worst = max(worst, 1.0 - adjusted_rand_score(labels, res.labels))
    return float(worst), 1e-9


def check_closed_form_losses(seed, fault=None):
    ce = stage1_loss(torch.zeros(5, 4, 3, dtype=torch.float64), torch.zeros(5, 4, dtype=torch.long)).item()
    nce = infonce_from_similarities(torch.full((4,), 0.3, dtype=torch.float64),
                                    torch.full((4, 5), 0.3, dtype=torch.float64), 0.1).item()
    return max(abs(ce - math.log(3)), abs(nce - math.log(6))), 1e-9


def check_softmax_rows(seed, fault=None):
    rng = np.random.default_rng(seed)
    Q, K, V = (torch.as_tensor(rng.standard_normal((7, 10, 8)) * 5) for _ in range(3))
    _, W = scaled_attention(Q, K, V)
    return float((W.sum(-1) - 1).abs().max()), 1e-9


def check_causality(seed, fault=None):
    torch.manual_seed(seed)
    cfg = tiny_config(seed=seed)
    model = TacticExpertModel(cfg).double()
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        model.experts[0].patterns.normal_()
    data = prepare(make_dataset(2, T=cfg.T, seed=seed), cfg.k_eigs)
    vf, pj, _ = data.tensors(torch.float64)
    t = 4
    vf2 = vf.clone()
    vf2[:, :, t + 1:] += torch.as_tensor(rng.standard_normal(vf2[:, :, t + 1:].shape))
    with torch.no_grad():
        a = model.encode_with(0, vf, pj).fused[:, :t + 1]
        b = model.encode_with(0, vf2, pj).fused[:, :t + 1]
    return float((a - b).abs().max()), 1e-12


def check_stage2_freeze(seed, fault=None):
    cfg = tiny_config(seed=seed)
    res = fit(make_dataset(cfg.n_sequences, T=cfg.T, seed=seed), cfg)
    return float(res.checksums["before_stage2"] != res.checksums["after_stage2"]), 0.0


def check_gradient_float64(seed, fault=None):
    loss_fn, params, _ = miniature(seed, torch.float64)
    return grad_check(loss_fn, params, step=1e-5, n_coords=200, seed=seed, floor=1e-6)[0], 1e-4


def check_gradient_float32(seed, fault=None):
    loss_fn, params, _ = miniature(seed, torch.float32)
    return grad_check(loss_fn, params, step=1e-2, n_coords=200, seed=seed, floor=1e-2)[0], 1e-2


def check_determinism(seed, fault=None):
    cfg = tiny_config(seed=seed)
    seqs = make_dataset(cfg.n_sequences, T=cfg.T, seed=seed)
    runs = []
    for _ in range(2):
        res = fit(seqs[:16], cfg)
        m = evaluate(res.model, seqs[16:])
        runs.append((json.dumps(m, sort_keys=True, default=str), [h["loss"] for h in res.history]))
    return float(runs[0] != runs[1]), 0.0


PROPERTIES = [
    ("group_axioms", check_group_axioms, "symmetry_group: compose table"),
    ("self_inverse", check_self_inverse, "symmetry_group: every element self-inverse"),
    ("rotation_exact", check_rotation_exact, "symmetry_group: R_z(pi) = diag(-1,-1,1)"),
    ("apply_action_involution", check_apply_action_involution, "symmetry_group: apply_action(g, apply_action(g, x)) = x"),
    ("equivariance_L1", check_equivariance_L1, "st_transformer: view-relabel identity, L=1"),
    ("equivariance_L2", check_equivariance_L2, "st_transformer: view-relabel identity, L=2"),
    ("averaged_predictor_invariance", check_averaged_predictor, "st_transformer: group-averaged predictor"),
    ("laplacian_spectrum", check_laplacian, "embedding_layer: K3 spectrum, [0, 2] bounds, orthonormal basis"),
    ("sinusoidal_pe_stats", check_sinusoidal_stats, "embedding_layer: PE mean 0, std 0.1"),
    ("kshape_invariance_recovery", check_kshape, "delay_bank: SBD shift/scale invariance, motif recovery"),
    ("closed_form_losses", check_closed_form_losses, "training/moe_router: ln 3 and ln 6"),
    ("softmax_rows", check_softmax_rows, "st_transformer: attention rows stochastic"),
    ("causality", check_causality, "training: future slices do not affect past outputs"),
    ("stage2_freeze", check_stage2_freeze, "training: transformer checksum unchanged by stage 2"),
    ("gradient_float64", check_gradient_float64, "training: analytic vs finite differences"),
    ("gradient_float32", check_gradient_float32, "verification: float32 gradient check"),
    ("determinism", check_determinism, "training/cli: same seed, same metrics"),
]


def run_suite(seed: int = 0, fault: str | None = None, only=None) -> list[PropertyResult]:
    results = []
    for name, fn, traces in PROPERTIES:
        if only and name not in only:
            continue
        t0 = time.perf_counter()
        try:
            measured, tol = fn(seed, fault)
            status = "pass" if measured <= tol else "fail"
        except Exception as exc:  # a crash is a failure of that property
            measured, tol, status = float("nan"), float("nan"), f"error: {exc}"
        results.append(PropertyResult(name, status, float(measured), float(tol), traces,
                                      time.perf_counter() - t0))
    return results


def report(results) -> dict:
    return {"passed": all(r.status == "pass" for r in results),
            "properties": [r.to_dict() for r in results]}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="run the property suite")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--fault", choices=["compose_table"], help="inject a known fault")
    ap.add_argument("--only", nargs="*")
    ap.add_argument("--out")
    args = ap.parse_args(argv)
    results = run_suite(args.seed, args.fault, args.only)
    doc = report(results)
    text = json.dumps(doc, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    failed = [r.property_name for r in results if r.status != "pass"]
    if failed:
        print("FAILED: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
