import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xmodal_kd.errors import ConfigError, DomainError, ShapeError
from xmodal_kd.losses import (LossKind, ce_hard_loss, ce_logits, kl_loss, loss_grad_wrt_logits, loss_terms,
                              loss_value, mutual_loss)
from xmodal_kd.nn_core import MlpNetwork, grad_check, softened_softmax

import oracles

probs = st.lists(st.floats(0.0, 1.0), min_size=2, max_size=8).filter(lambda v: sum(v) > 1e-3).map(
    lambda v: np.asarray(v) / sum(v))


def fd_logits(f, z, h=1e-5):
    return np.array(oracles.central_diff(lambda v: f(np.asarray(v)), list(z), h))


class TestKL:
    def test_identical(self):
        p = np.array([0.2, 0.3, 0.5])
        assert kl_loss(p, p) == 0.0

    def test_one_hot_vs_uniform(self):
        assert kl_loss([1.0, 0.0], [0.5, 0.5]) == pytest.approx(0.6931471805599453, abs=1e-15)

    def test_half_vs_quarter(self):
        assert kl_loss([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.14384103622589042, abs=1e-15)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            kl_loss([0.5, 0.5], [0.2, 0.3, 0.5])

    def test_clamps_zero_target(self):
        assert math.isfinite(kl_loss([0.5, 0.5], [1.0, 0.0]))

    @settings(max_examples=200, deadline=None)
    @given(probs, st.data())
    def test_nonnegative(self, p, data):
        q = data.draw(probs.filter(lambda v: len(v) == len(p)))
        assert kl_loss(p, q) >= -1e-15

    def test_not_symmetric(self, rng):
        found = False
        for _ in range(50):
            p, q = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
            if abs(kl_loss(p, q) - kl_loss(q, p)) > 1e-6:
                found = True
                break
        assert found

    def test_reverse_flag(self):
        p, q = np.array([0.1, 0.9]), np.array([0.6, 0.4])
        assert kl_loss(p, q, reverse=True) == kl_loss(q, p)


class TestCEHard:
    def test_perfect(self):
        assert ce_hard_loss([1.0, 0.0], [1.0, 0.0]) == 0.0

    def test_half(self):
        assert ce_hard_loss([0.5, 0.5], [0.7, 0.3]) == pytest.approx(0.6931471805599453, abs=1e-15)

    def test_tie_goes_to_lowest_index(self):
        assert ce_hard_loss([0.9, 0.1], [0.5, 0.5]) == pytest.approx(0.10536051565782628, abs=1e-15)

    def test_depends_on_teacher_only_through_argmax(self, rng):
        for _ in range(100):
            p_s, p_t = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))
            onehot = np.eye(5)[np.argmax(p_t)]
            assert ce_hard_loss(p_s, p_t) == ce_hard_loss(p_s, onehot)

    def test_batched(self):
        out = ce_hard_loss(np.array([[0.5, 0.5], [0.9, 0.1]]), np.array([[0.7, 0.3], [0.2, 0.8]]))
        np.testing.assert_allclose(out, [-math.log(0.5), -math.log(0.1)])


class TestMutual:
    LOGITS = [np.array([0.3, -1.2, 2.0, 0.1]), np.array([1.5, 0.2, -0.7, 0.0]), np.array([-0.4, 0.9, 0.3, 1.1])]
    P_T = np.array([0.1, 0.6, 0.2, 0.1])

    def _p(self):
        return [softened_softmax(z) for z in self.LOGITS]

    def test_three_students_kl_peers(self):
        # frozen from oracles.mutual, term-by-term
        expected = [3.529368735496416, 1.7846338648374342, 1.121978205777675]
        for k in range(3):
            assert mutual_loss(k, self._p(), self.LOGITS, self.P_T, 10.0) == pytest.approx(expected[k], abs=1e-12)

    def test_three_students_ce_peers(self):
        expected = [5.634017152593919, 4.098072364557989, 3.1755209174474954]
        for k in range(3):
            got = mutual_loss(k, self._p(), self.LOGITS, self.P_T, 10.0, peer_kind="ce")
            assert got == pytest.approx(expected[k], abs=1e-12)

    def test_two_students_is_pairwise_form(self):
        z, p = self.LOGITS[:2], self._p()[:2]
        for k, l in ((0, 1), (1, 0)):
            direct = ce_hard_loss(p[k], self.P_T) + kl_loss(softened_softmax(z[k], 10.0), softened_softmax(z[l], 10.0))
            assert mutual_loss(k, p, z, self.P_T, 10.0) == direct

    def test_identical_students(self):
        z = [self.LOGITS[0]] * 3
        p = [softened_softmax(v) for v in z]
        assert mutual_loss(1, p, z, self.P_T, 10.0) == ce_hard_loss(p[1], self.P_T)

    def test_errors(self):
        with pytest.raises(ConfigError):
            mutual_loss(0, self._p()[:1], self.LOGITS[:1], self.P_T)
        with pytest.raises(ShapeError):
            mutual_loss(3, self._p(), self.LOGITS, self.P_T)

    def test_logit_space_agrees(self):
        t_logits = np.log(self.P_T)
        kind = LossKind.mutual("kl", 10.0)
        for k in range(3):
            peers = [z for l, z in enumerate(self.LOGITS) if l != k]
            got = loss_value(kind, self.LOGITS[k], t_logits, peers)
            assert got == pytest.approx(mutual_loss(k, self._p(), self.LOGITS, self.P_T, 10.0), abs=1e-12)


class TestLossKind:
    def test_bad_tau(self):
        with pytest.raises(DomainError):
            LossKind.kl(0.0)

    def test_bad_names(self):
        with pytest.raises(ConfigError):
            LossKind("hinge")
        with pytest.raises(ConfigError):
            LossKind.mutual(peer="l2")


KINDS = [
    LossKind.kl(1.0), LossKind.kl(4.0), LossKind.kl(3.0, reverse_kl=True), LossKind.kl(2.0, tau_squared=True),
    LossKind.ce(), LossKind.mutual("kl", 10.0), LossKind.mutual("ce", 10.0), LossKind.mutual("kl", 2.0, teacher="kl"),
]


class TestGradients:
    def test_ce_saturated(self):
        z = np.array([25.0, 0.0, 1.0, -3.0])
        g = loss_grad_wrt_logits(LossKind.ce(), z, np.array([5.0, 0.0, 0.0, 0.0]))
        assert np.abs(g).max() < 1e-6

    def test_ce_is_softmax_minus_onehot(self, rng):
        z, t = rng.normal(size=6), rng.normal(size=6)
        g = loss_grad_wrt_logits(LossKind.ce(), z, t)
        np.testing.assert_array_equal(g, softened_softmax(z) - np.eye(6)[np.argmax(t)])

    def test_kl_zero_at_match(self, rng):
        z = rng.normal(size=5)
        g = loss_grad_wrt_logits(LossKind.kl(3.0), z, z.copy())
        assert np.abs(g).max() < 1e-12

    @pytest.mark.parametrize("kind", KINDS, ids=lambda k: f"{k.name}-{k.teacher}-{k.peer}-{k.tau}")
    def test_logit_gradient_matches_fd(self, kind, rng):
        for _ in range(20):
            z, t = rng.normal(scale=2, size=5), rng.normal(scale=2, size=5)
            peers = [rng.normal(scale=2, size=5) for _ in range(2)]
            f = lambda v: loss_value(kind, v, t, peers)
            g = loss_grad_wrt_logits(kind, z, t, peers)
            num = fd_logits(f, z)
            assert np.abs(g - num).max() / max(np.abs(g).max(), np.abs(num).max()) < 1e-4

    def test_batched_rows_independent(self, rng):
        z, t = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        kind = LossKind.kl(2.0)
        _, _, g = loss_terms(kind, z, t)
        for r in range(4):
            np.testing.assert_array_equal(g[r], loss_grad_wrt_logits(kind, z[r], t[r]))

    def test_ce_logits_single_row(self):
        loss, g = ce_logits(np.array([0.0, 0.0]), 1)
        assert loss == pytest.approx(math.log(2))
        np.testing.assert_allclose(g, [0.5, -0.5])

    def test_network_grad_check_ce(self, rng):
        net = MlpNetwork.init([4, 8, 3], rng)
        t = rng.normal(size=3)
        kind = LossKind.ce()
        err = grad_check(net, rng.normal(size=4), lambda z: loss_value(kind, z, t),
                         lambda z: loss_grad_wrt_logits(kind, z, t))
        assert err < 1e-4

    def test_kl_grad_check_at_minimum(self, rng):
        net = MlpNetwork.init([4, 8, 3], rng)
        x = rng.normal(size=4)
        from xmodal_kd.nn_core import forward

        t = forward(net, x)
        kind = LossKind.kl(2.0)
        g = loss_grad_wrt_logits(kind, t, t)
        assert np.abs(g).max() < 1e-12
        num = fd_logits(lambda v: loss_value(kind, v, t), t)
        assert np.abs(num).max() < 1e-9
