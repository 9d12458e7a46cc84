import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from tactic_expert.data import PlayerFrame
from tactic_expert.errors import ValidationError
from tactic_expert.symmetry import (COMPOSE_TABLE, D2, FEATURE_SIGNS, FLIP_X, FLIP_Y, IDENTITY, ROT180, TWO_PI,
                                    SymmetryElement, apply_action, compose, element_matrix, feature_signs, inverse,
                                    remap_angle, rotation_matrix)


def frame(head=(1.0, 2.0, 0.5), theta=0.3, speed=3.2):
    return PlayerFrame(id="p1", team=True, position="PG", relative_time=0.0, head=head, headOrientation=theta,
                       hips=(0.9, 2.1), foot1=(0.8, 1.9), foot2=(1.1, 2.2), foot1_at_the_ground=True,
                       foot2_at_the_ground=False, speed_mps=speed, has_ball=True)


floats = st.floats(-50, 50, allow_nan=False)
frames = st.builds(
    lambda hx, hy, hz, th, sp, a, b: dataclasses.replace(frame((hx, hy, hz), th, sp), hips=(a, b), foot1=(b, a)),
    floats, floats, st.floats(0, 3), st.floats(0, TWO_PI, exclude_max=True), st.floats(0, 12), floats, floats)
elements = st.sampled_from(D2)


class TestRotationMatrix:
    def test_z_pi(self):
        assert np.array_equal(rotation_matrix((0, 0, 1), math.pi), np.diag([-1.0, -1.0, 1.0]))

    def test_zero_angle(self):
        assert np.array_equal(rotation_matrix((1, 0, 0), 0.0), np.eye(3))

    def test_x_pi(self):
        assert np.array_equal(rotation_matrix((1, 0, 0), math.pi), np.diag([1.0, -1.0, -1.0]))

    def test_non_unit_axis(self):
        with pytest.raises(ValidationError):
            rotation_matrix((1, 1, 0), 1.0)

    @given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-7, 7))
    def test_orthogonal_and_matches_rodrigues(self, a, b, c, angle):
        n = math.sqrt(a * a + b * b + c * c)
        if n < 1e-3:
            return
        axis = (a / n, b / n, c / n)
        R = rotation_matrix(axis, angle)
        assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9
        assert np.abs(R - oracles.rodrigues(axis, angle)).max() < 1e-12

    def test_planar_block_matches_signs(self):
        for g in D2:
            R = element_matrix(g)
            assert np.array_equal(np.diag(R)[:2], np.array(g.signs, dtype=float))
            assert R[0, 1] == 0 and R[1, 0] == 0


class TestCompose:
    def test_examples(self):
        assert compose(FLIP_X, FLIP_Y) is ROT180
        assert compose(ROT180, ROT180) is IDENTITY
        assert compose(IDENTITY, FLIP_Y) is FLIP_Y

    def test_axioms_exhaustive(self):
        for g in D2:
            assert compose(IDENTITY, g) is g and compose(g, IDENTITY) is g
            assert compose(g, g) is IDENTITY
            assert inverse(g) is g
            for h in D2:
                assert compose(g, h) in D2
                assert compose(g, h) is compose(h, g)
                for k in D2:
                    assert compose(compose(g, h), k) is compose(g, compose(h, k))

    def test_table_agrees_with_matrix_products(self):
        for g in D2:
            for h in D2:
                k = D2[COMPOSE_TABLE[g.index, h.index]]
                assert np.array_equal(element_matrix(k), element_matrix(g) @ element_matrix(h))

    def test_tags(self):
        assert [g.tag for g in D2] == ["identity", "flip_x", "flip_y", "rot180"]
        assert SymmetryElement.from_tag("rot180") is ROT180
        with pytest.raises(ValidationError):
            SymmetryElement.from_tag("rot90")

    def test_axes_unit_angles_zero_or_pi(self):
        for g in D2:
            assert abs(np.linalg.norm(g.axis) - 1) < 1e-12
            assert g.angle in (0.0, math.pi)


class TestApplyAction:
    def test_flip_x_head(self):
        assert apply_action(FLIP_X, frame()).head == (-1.0, 2.0, 0.5)

    def test_identity_bit_exact(self):
        f = frame()
        assert apply_action(IDENTITY, f) == f

    def test_rot180_scalar_invariance(self):
        out = apply_action(ROT180, frame())
        assert out.head == (-1.0, -2.0, 0.5)
        assert out.speed_mps == 3.2

    def test_angle_rules(self):
        th = 0.4
        assert math.isclose(remap_angle(FLIP_X, th), math.pi - th)
        assert math.isclose(remap_angle(FLIP_Y, th), TWO_PI - th)
        assert math.isclose(remap_angle(ROT180, th), th + math.pi)

    @given(elements, frames)
    def test_involution(self, g, f):
        q = apply_action(g, apply_action(g, f))
        assert (q.head, q.hips, q.foot1, q.foot2) == (f.head, f.hips, f.foot1, f.foot2)
        assert abs(math.remainder(q.headOrientation - f.headOrientation, TWO_PI)) < 1e-12
        assert (q.speed_mps, q.team, q.position, q.has_ball, q.foot1_at_the_ground) == \
               (f.speed_mps, f.team, f.position, f.has_ball, f.foot1_at_the_ground)

    @given(elements, frames)
    def test_angles_stay_in_range(self, g, f):
        assert 0.0 <= apply_action(g, f).headOrientation < TWO_PI or g is IDENTITY

    @given(elements, frames)
    def test_encoded_signs_realise_action(self, g, f):
        from tactic_expert.data import encode_frame

        lhs = encode_frame(apply_action(g, f))
        rhs = encode_frame(f) * feature_signs(g)
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_feature_sign_table(self):
        assert FEATURE_SIGNS.shape[0] == 4
        assert np.array_equal(FEATURE_SIGNS[0], np.ones(FEATURE_SIGNS.shape[1]))
