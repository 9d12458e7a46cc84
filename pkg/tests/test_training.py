import math

import numpy as np
import pytest
import torch

import frozen
import oracles
from tactic_expert.errors import TrainingDiverged, ValidationError
from tactic_expert.metrics import auc, macro_f1
from tactic_expert.model import TaskHeads
from tactic_expert.synth import make_dataset
from tactic_expert.training import (evaluate, fit, grad_check, next_step, parameter_checksum, prepare, stage1_loss,
                                    task_losses)
from tactic_expert.verification import miniature, tiny_config

f64 = torch.float64


class TestStage1Loss:
    def test_confident_correct(self):
        logits = torch.tensor([[[1e4, 0.0, 0.0]]], dtype=f64)
        assert stage1_loss(logits, [[-1]]).item() == 0.0

    def test_uniform(self):
        assert stage1_loss(torch.zeros(4, 6, 3, dtype=f64), torch.zeros(4, 6)).item() == pytest.approx(frozen.LN3,
                                                                                                      abs=1e-12)

    def test_probability_07(self):
        p = torch.tensor([0.15, 0.7, 0.15], dtype=f64)
        v = stage1_loss(p.log().view(1, 1, 3), [[0]]).item()
        assert v == pytest.approx(frozen.CE_07, abs=1e-12)
        assert v == pytest.approx(oracles.cross_entropy_term(0.7), abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            stage1_loss(torch.zeros(2, 3, 3), torch.zeros(3, 2))
        with pytest.raises(ValidationError):
            stage1_loss(torch.zeros(2, 3, 4), torch.zeros(2, 3))

    def test_next_step_alignment(self):
        logits = torch.arange(4.0).view(1, 4, 1, 1).expand(1, 4, 1, 3)
        tr = torch.tensor([[[0], [1], [-1], [0]]])
        lg, tg = next_step(logits, tr)
        assert lg[0, :, 0, 0].tolist() == [0.0, 1.0, 2.0] and tg[0, :, 0].tolist() == [1, -1, 0]


class TestTaskLosses:
    def setup_method(self):
        torch.manual_seed(0)
        self.heads = TaskHeads(6).double()
        for p in self.heads.parameters():
            torch.nn.init.zeros_(p)

    def test_uniform_possession(self):
        fused = torch.randn(2, 5, 10, 6, dtype=f64)
        holders = np.array([[0, 0, 3, 3, 3], [1, 2, 2, 2, 9]])
        tl = task_losses(fused, self.heads, holders, [1.0, 0.0])
        assert tl.node.item() == pytest.approx(math.log(10), abs=1e-12)
        # zero query: uniform over the 9 non-holders
        assert tl.link.item() == pytest.approx(math.log(9), abs=1e-12)
        assert tl.graph.item() == pytest.approx(math.log(2), abs=1e-12)

    def test_holder_never_recipient(self, rng):
        heads = TaskHeads(6).double()
        H = torch.as_tensor(rng.standard_normal((3, 10, 6)))
        holder = torch.tensor([0, 4, 9])
        p = torch.softmax(heads.pass_logits(H, holder), -1)
        assert (p[torch.arange(3), holder] == 0).all()
        assert torch.allclose(p.sum(-1), torch.ones(3, dtype=f64))

    def test_dead_ball_skipped(self):
        fused = torch.randn(1, 4, 10, 6, dtype=f64)
        tl = task_losses(fused, self.heads, np.array([[0, -1, -1, 2]]), [float("nan")])
        assert tl.skipped == 2 and tl.graph.item() == 0.0 and tl.link.item() == 0.0

    def test_readout_is_node_mean(self, rng):
        H = torch.as_tensor(rng.standard_normal((4, 10, 6)))
        assert torch.allclose(self.heads.readout(H), H.mean(1))


class TestGradCheck:
    def test_quadratic(self):
        w = torch.tensor([0.3, -1.2, 2.0], dtype=f64, requires_grad=True)
        err, rec = grad_check(lambda: (w ** 2).sum() + w.prod(), [w], step=1e-6)
        assert err < 1e-8 and len(rec) == 3

    def test_unused_branch_zero_gradient(self):
        a = torch.tensor([1.0, 2.0], dtype=f64, requires_grad=True)
        b = torch.tensor([5.0], dtype=f64, requires_grad=True)
        err, rec = grad_check(lambda: (a ** 3).sum(), [a, b], step=1e-6)
        assert err < 1e-8
        assert [r[2] for r in rec if r[0] == 1] == [0.0]

    def test_miniature_float64(self):
        loss_fn, params, _ = miniature(0, f64)
        assert grad_check(loss_fn, params, n_coords=60, floor=1e-6)[0] < 1e-4


class TestMetrics:
    def test_perfect_f1(self):
        assert macro_f1([0, 1, 2, 1], [0, 1, 2, 1]) == 1.0

    def test_constant_predictor(self):
        y = [0, 1] * 10
        assert macro_f1(y, [0] * 20) == pytest.approx(frozen.CONSTANT_PREDICTOR_F1, abs=1e-12)

    def test_f1_against_confusion_oracle(self, rng):
        for _ in range(10):
            y, p = rng.integers(0, 4, 50), rng.integers(0, 4, 50)
            classes = sorted(set(y.tolist()) | set(p.tolist()))
            assert macro_f1(y, p) == pytest.approx(oracles.confusion_macro_f1(y, p, classes), abs=1e-12)

    def test_f1_empty(self):
        with pytest.raises(ValidationError):
            macro_f1([], [])

    def test_auc_perfect(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_auc_against_pair_count(self, rng):
        for _ in range(10):
            s = np.round(rng.uniform(size=40), 1)  # forces ties
            y = rng.integers(0, 2, 40)
            assert auc(s, y) == pytest.approx(oracles.pair_count_auc(s, y), abs=1e-12)

    def test_auc_random_half(self, rng):
        vals = [auc(rng.uniform(size=2000), rng.integers(0, 2, 2000)) for _ in range(5)]
        assert abs(np.mean(vals) - 0.5) < 0.05

    def test_auc_one_class(self):
        with pytest.raises(ValidationError):
            auc([0.1, 0.2], [1, 1])


@pytest.fixture(scope="module")
def tiny():
    cfg = tiny_config()
    seqs = make_dataset(cfg.n_sequences, T=cfg.T, seed=0)
    return cfg, seqs, fit(seqs[:16], cfg)


class TestFit:
    def test_stage2_leaves_transformer_untouched(self, tiny):
        _, _, res = tiny
        assert res.checksums["before_stage2"] == res.checksums["after_stage2"]
        assert parameter_checksum(res.model.transformer_parameters()) == res.checksums["after_stage2"]

    def test_history_layout(self, tiny):
        cfg, _, res = tiny
        assert len(res.stage_losses(1)) == cfg.epochs and len(res.stage_losses(2)) == cfg.stage2_epochs
        assert all(np.isfinite(res.stage_losses(1)))

    def test_deterministic(self, tiny):
        cfg, seqs, res = tiny
        again = fit(seqs[:16], cfg)
        assert [h["loss"] for h in again.history] == [h["loss"] for h in res.history]
        assert evaluate(again.model, seqs[16:]) == evaluate(res.model, seqs[16:])

    def test_evaluate_keys(self, tiny):
        _, seqs, res = tiny
        m = evaluate(res.model, seqs[16:])
        for k in ("macro_f1_node", "auc_link", "macro_f1_graph", "stage1_ce", "routing_accuracy"):
            assert k in m
        assert sum(m["routing_counts"]) == 4

    def test_empty(self, tiny):
        with pytest.raises(ValidationError):
            fit([], tiny[0])
        with pytest.raises(ValidationError):
            evaluate(tiny[2].model, [])

    @pytest.mark.parametrize("flag", ["-Delay", "-MoE", "-Group", "-PE", "-Lap"])
    def test_ablations_complete(self, tiny, flag):
        cfg, seqs, _ = tiny
        res = fit(seqs[:12], cfg.replace(ablations=[flag], epochs=1, stage2_epochs=1))
        m = evaluate(res.model, seqs[16:])
        assert np.isfinite(m["stage1_ce"])
        if flag == "-MoE":
            assert res.model.n_experts == 1 and "routing_accuracy" not in m

    def test_divergence_restores_last_good_state(self, tiny):
        cfg, seqs, _ = tiny
        data = prepare(seqs[:12], cfg.k_eigs)
        data.view_feats[3, :, 2] = np.nan
        with pytest.raises(TrainingDiverged) as exc:
            fit(data, cfg)
        assert exc.value.stage == 1 and exc.value.epoch == 0
        state = exc.value.last_good_state
        assert all(torch.isfinite(v).all() for v in state.values() if v.is_floating_point())
