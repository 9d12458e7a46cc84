import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

import frozen
import oracles
from tactic_expert.errors import ValidationError
from tactic_expert.model import TacticExpertModel
from tactic_expert.moe import (Router, cosine_similarities, expert_separation, infonce_from_similarities,
                               infonce_loss, partition_label, route, sample_negatives, similarity_vector,
                               template_descriptors)
from tactic_expert.symmetry import D2, augment_d2
from tactic_expert.synth import N_TACTICS, generate, make_dataset, templates
from tactic_expert.training import prepare
from tactic_expert.verification import tiny_config

f64 = torch.float64


def sims(pos, neg):
    return torch.tensor([pos], dtype=f64), torch.tensor([neg], dtype=f64)


class TestInfoNCE:
    def test_all_equal_similarities(self):
        p, n = sims(0.3, [0.3] * 5)
        assert infonce_from_similarities(p, n, 0.1).item() == pytest.approx(frozen.LN6, abs=1e-12)

    def test_single_negative(self):
        p, n = sims(0.9, [0.1])
        v = infonce_from_similarities(p, n, 0.5).item()
        assert v == pytest.approx(frozen.INFONCE_K1, abs=1e-12)
        assert v == pytest.approx(oracles.scalar_infonce(0.9, [0.1], 0.5), abs=1e-12)

    @pytest.mark.parametrize("tau", [0.0, -0.1])
    def test_bad_temperature(self, tau):
        p, n = sims(0.5, [0.1])
        with pytest.raises(ValidationError):
            infonce_from_similarities(p, n, tau)
        with pytest.raises(ValidationError):
            infonce_loss(torch.ones(1, 3), torch.ones(1, 3), torch.ones(1, 1, 3), tau)

    @given(st.lists(st.floats(-1, 1), min_size=1, max_size=6), st.floats(-1, 0.9), st.floats(0.01, 0.09),
           st.floats(0.05, 2.0))
    def test_monotone_in_positive(self, neg, pos, step, tau):
        n = torch.tensor([neg], dtype=f64)
        lo = infonce_from_similarities(torch.tensor([pos], dtype=f64), n, tau)
        hi = infonce_from_similarities(torch.tensor([pos + step], dtype=f64), n, tau)
        assert hi <= lo + 1e-12 and lo >= 0
        assert lo.item() == pytest.approx(oracles.scalar_infonce(pos, neg, tau), rel=1e-9, abs=1e-12)

    def test_mask_drops_missing_negatives(self):
        p = torch.tensor([0.9, 0.9], dtype=f64)
        n = torch.tensor([[0.1, 5.0], [0.1, 5.0]], dtype=f64)
        mask = torch.tensor([[True, False], [True, False]])
        assert infonce_from_similarities(p, n, 0.5, mask).item() == pytest.approx(frozen.INFONCE_K1, abs=1e-12)

    def test_cosine_form(self, rng):
        a = torch.as_tensor(rng.standard_normal((3, 8)))
        pos = torch.as_tensor(rng.standard_normal((3, 8)))
        neg = torch.as_tensor(rng.standard_normal((3, 4, 8)))
        v = infonce_loss(a, pos, neg, 0.2).item()

        def cos(x, y):
            return float(x @ y / np.linalg.norm(x) / np.linalg.norm(y))

        a, pos, neg = a.numpy(), pos.numpy(), neg.numpy()
        ref = np.mean([oracles.scalar_infonce(cos(a[i], pos[i]), [cos(a[i], n) for n in neg[i]], 0.2)
                       for i in range(3)])
        assert v == pytest.approx(ref, abs=1e-12)


class TestRouting:
    def test_route_in_range(self, rng):
        r = Router(5).double()
        for _ in range(20):
            assert 0 <= route(rng.uniform(-1, 1, N_TACTICS), r) < 5

    def test_tie_breaks_low(self):
        r = Router(5).double()
        with torch.no_grad():
            for p in r.parameters():
                p.zero_()
            r.fc2.bias.copy_(torch.tensor([0.0, 1.0, 1.0, 0.0, 1.0]))
        assert route(np.zeros(N_TACTICS), r) == 1

    def test_min_experts(self):
        with pytest.raises(ValidationError):
            Router(1)

    def test_model_route_matches_function(self, rng):
        model = TacticExpertModel(tiny_config()).double()
        s = rng.uniform(-1, 1, (8, N_TACTICS))
        got = model.route(torch.as_tensor(s)).tolist()
        assert got == [route(row, model.router) for row in s]


class TestSimilarity:
    def test_template_argmax_is_itself(self):
        for t in templates():
            s = similarity_vector(generate(t, 4, 0.0, seed=0))
            assert int(np.argmax(s)) == t.tactic_id and s[t.tactic_id] == pytest.approx(1.0, abs=1e-12)
            assert s.shape == (12,) and (np.abs(s) <= 1).all()

    @pytest.mark.parametrize("g", D2)
    def test_invariant_under_augmentation(self, g):
        seq = generate(templates()[3], 6, 0.3, seed=9)
        assert np.abs(similarity_vector(augment_d2(seq, g)) - similarity_vector(seq)).max() < 1e-9

    def test_zero_descriptor(self):
        assert not cosine_similarities(np.zeros(49), template_descriptors()).any()

    def test_partition_label(self):
        s = np.zeros(12)
        s[7] = 1.0
        assert partition_label(s, 5) == 2


class TestNegatives:
    def test_other_experts_only(self, rng):
        owner = np.array([0, 0, 1, 1, 2, 2, 2])
        idx, mask = sample_negatives(owner, 3, rng)
        for i in range(len(owner)):
            chosen = idx[i][mask[i]]
            assert len(chosen) == 3 and len(set(chosen.tolist())) == 3
            assert (owner[chosen] != owner[i]).all()

    def test_short_pool_masked(self, rng):
        idx, mask = sample_negatives(np.array([0, 1, 1, 1]), 5, rng)
        assert mask[0].sum() == 3 and mask[1].sum() == 1 and idx[1, 0] == 0

    def test_single_expert_empty(self, rng):
        _, mask = sample_negatives(np.zeros(4, dtype=int), 2, rng)
        assert not mask.any()

    def test_bad_k(self, rng):
        with pytest.raises(ValidationError):
            sample_negatives(np.zeros(3), 0, rng)


def test_separation_on_clusters(rng):
    centers = np.eye(3) * 5
    lab = np.repeat(np.arange(3), 10)
    X = centers[lab] + 0.1 * rng.standard_normal((30, 3))
    s = expert_separation(X, lab)
    assert s["intra_cosine"] > 0.9 and s["inter_cosine"] < 0.1 and s["silhouette"] > 0.8


def test_sparse_matches_dense():
    torch.manual_seed(0)
    model = TacticExpertModel(tiny_config()).double()
    data = prepare(make_dataset(5, T=8, seed=1), 2)
    vf, pj, sm = data.tensors(f64)
    with torch.no_grad():
        for i in range(len(data)):
            e1, a = model.encode_sparse(vf[i:i + 1], pj[i:i + 1], sm[i:i + 1])
            e2, b = model.encode_dense(vf[i:i + 1], pj[i:i + 1], sm[i:i + 1])
            assert e1 == e2 and torch.equal(a.fused, b.fused)
