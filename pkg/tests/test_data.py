import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from tactic_expert.data import (CHANNEL_SLICES, FEATURE_WIDTH, FRAME_KEYS, Court, PlayerFrame, derive_transitions,
                                encode_frame, encode_frames, ingest_jsonl, make_sequence, recenter, write_jsonl)
from tactic_expert.errors import DataError, DuplicateFrameError, IntegrityError, NumericError, SchemaError
from tactic_expert.synth import generate, make_dataset, template


def player(i, has_ball=False, x=0.0):
    return PlayerFrame(id=f"p{i}", team=i < 5, position="PG", relative_time=0.0, head=(x, 0.0, 2.0),
                       headOrientation=0.0, hips=(x, 0.0), foot1=(x, 0.1), foot2=(x, -0.1),
                       foot1_at_the_ground=True, foot2_at_the_ground=True, speed_mps=1.0, has_ball=has_ball)


def grid(holders, N=10):
    return [[player(n, has_ball=(h == n)) for n in range(N)] for h in holders]


def test_table2_channels():
    assert len(FRAME_KEYS) == 13
    assert set(CHANNEL_SLICES) == set(FRAME_KEYS)


def test_negative_speed_rejected():
    with pytest.raises(DataError):
        PlayerFrame(id="x", team=True, position="C", relative_time=0, head=(0, 0, 0), headOrientation=0,
                    hips=(0, 0), foot1=(0, 0), foot2=(0, 0), foot1_at_the_ground=True, foot2_at_the_ground=True,
                    speed_mps=-0.1, has_ball=False)


class TestTransitions:
    def test_continuous_possession(self):
        tr = derive_transitions(grid([2, 2]))
        assert not tr.values[1].any()

    def test_pass_3_to_7(self):
        tr = derive_transitions(grid([3, 7]))
        assert tr.values[1, 3] == -1 and tr.values[1, 7] == 1
        assert np.count_nonzero(tr.values[1]) == 2

    def test_constant_holder_all_zero(self):
        tr = derive_transitions(grid([4] * 8))
        assert not tr.values.any()

    @given(st.lists(st.one_of(st.none(), st.integers(0, 9)), min_size=2, max_size=15))
    def test_row_invariants(self, holders):
        tr = derive_transitions(grid(holders))
        v = tr.values
        assert ((v == -1).sum(1) <= 1).all() and ((v == 1).sum(1) <= 1).all()
        assert (v.sum(1) == 0).all()
        assert len(tr.events()) == oracles.scan_handoffs(holders)
        # dead-ball rows are zero
        assert not v[tr.dead_ball].any()

    def test_two_holders_integrity(self):
        frames = grid([1, 1])
        frames[1][5] = player(5, has_ball=True)
        with pytest.raises(IntegrityError):
            derive_transitions(frames)


class TestJsonl:
    def test_round_trip_two_sequences(self, tmp_path):
        seqs = make_dataset(2, T=6, seed=3)
        path = write_jsonl(seqs, tmp_path / "d.jsonl")
        back = ingest_jsonl(path)
        assert len(back) == 2
        assert [(s.T, s.N) for s in back] == [(6, 10), (6, 10)]
        for a, b in zip(seqs, back):
            assert a == b

    def test_deterministic_bytes_to_tensors(self, tmp_path):
        seqs = make_dataset(3, T=5, seed=1)
        p = write_jsonl(seqs, tmp_path / "a.jsonl")
        a, b = ingest_jsonl(p), ingest_jsonl(p)
        for x, y in zip(a, b):
            assert np.array_equal(encode_frames(x), encode_frames(y))
            assert x.transitions == y.transitions

    def _lines(self, tmp_path):
        p = write_jsonl([generate(template(0), 3, seed=0)], tmp_path / "one.jsonl")
        return p, [json.loads(l) for l in p.read_text().splitlines()]

    def _write(self, path, recs):
        path.write_text("\n".join(json.dumps(r) for r in recs) + "\n")

    def test_missing_speed_key(self, tmp_path):
        p, recs = self._lines(tmp_path)
        del recs[4]["speed_mps"]
        self._write(p, recs)
        with pytest.raises(SchemaError) as exc:
            ingest_jsonl(p)
        assert exc.value.key == "speed_mps" and exc.value.line == 5
        assert "speed_mps" in str(exc.value)

    def test_two_ball_holders(self, tmp_path):
        p, recs = self._lines(tmp_path)
        for r in recs:
            if r["frame_index"] == 1:
                r["has_ball"] = True
        self._write(p, recs)
        with pytest.raises(IntegrityError):
            ingest_jsonl(p)

    def test_duplicate(self, tmp_path):
        p, recs = self._lines(tmp_path)
        self._write(p, recs + [recs[0]])
        with pytest.raises(DuplicateFrameError):
            ingest_jsonl(p)

    def test_unknown_key(self, tmp_path):
        p, recs = self._lines(tmp_path)
        recs[0]["colour"] = "red"
        self._write(p, recs)
        with pytest.raises(DataError):
            ingest_jsonl(p)

    def test_sorted_by_frame_index(self, tmp_path):
        p, recs = self._lines(tmp_path)
        self._write(p, list(reversed(recs)))
        seq = ingest_jsonl(p)[0]
        assert [f[0].relative_time for f in seq.frames] == sorted(f[0].relative_time for f in seq.frames)


class TestEncoding:
    def test_width_and_one_hots(self):
        v = encode_frame(player(0, has_ball=True))
        assert v.shape == (FEATURE_WIDTH,)
        assert v[CHANNEL_SLICES["id"]].sum() == 1 and v[CHANNEL_SLICES["position"]].sum() == 1
        assert v[CHANNEL_SLICES["has_ball"]][0] == 1.0

    def test_unknown_position_goes_to_other(self):
        import dataclasses

        v = encode_frame(dataclasses.replace(player(0), position="G/F"))
        assert v[CHANNEL_SLICES["position"]][-1] == 1.0

    def test_non_finite_named(self):
        import dataclasses

        frames = grid([0, 0])
        frames[1][2] = dataclasses.replace(frames[1][2], head=(float("nan"), 0.0, 2.0))
        with pytest.raises(NumericError, match=r"t=1, n=2, channel='head'"):
            encode_frames(frames)


def test_recenter_moves_midpoint_to_origin():
    seq = make_sequence("s", grid([0, 0]))
    moved = recenter(seq, Court(28.0, 15.0))
    assert moved.frames[0][0].head[:2] == (-14.0, -7.5)
