import numpy as np
import numpy.testing as npt
import pytest

from tapsnn import autodiff as ad
from tapsnn.autodiff import Tape, Tensor, finite_difference_check
from tapsnn.neurons import (
    GrsnParams,
    GruParams,
    LifParams,
    NeuronState,
    grsn_step,
    gru_step,
    lif_step,
)


def identity_lif(width: int, **kwargs) -> LifParams:
    return LifParams(W=Tensor(np.eye(width), requires_grad=True),
                     b=Tensor(np.zeros((1, width)), requires_grad=True), **kwargs)


def state_with(width: int, u_hat=0.0, c=0.0) -> NeuronState:
    s = NeuronState.zeros(1, width)
    s.u_hat = Tensor(np.full((1, width), u_hat))
    s.c = Tensor(np.full((1, width), c))
    return s


class TestLif:
    def test_integrate_fire_hard_reset(self):
        # beta=0.5, u_hat_prev=0.4, current 2.0 -> u=1.2 -> spike, reset to 0
        p = identity_lif(1)
        o, s = lif_step(state_with(1, u_hat=0.4), Tensor([[2.0]]), p)
        assert o.item() == 1.0
        assert s.u.item() == pytest.approx(1.2)
        assert s.u_hat.item() == 0.0

    def test_zero_input_zero_state(self):
        p = identity_lif(3)
        o, s = lif_step(NeuronState.zeros(1, 3), Tensor(np.zeros((1, 3))), p)
        npt.assert_array_equal(o.data, 0.0)
        npt.assert_array_equal(s.u.data, 0.0)
        npt.assert_array_equal(s.u_hat.data, 0.0)

    def test_subthreshold_decay_keeps_potential(self):
        # beta=0.5, u_hat_prev=1.8, no current -> u=0.9 < 1 -> no spike, u_hat=0.9
        p = identity_lif(1)
        o, s = lif_step(state_with(1, u_hat=1.8), Tensor([[0.0]]), p)
        assert o.item() == 0.0
        assert s.u.item() == pytest.approx(0.9)
        assert s.u_hat.item() == pytest.approx(0.9)

    def test_nonzero_reset_potential(self):
        p = identity_lif(1, u_reset=0.3)
        o, s = lif_step(state_with(1, u_hat=0.0), Tensor([[4.0]]), p)
        assert o.item() == 1.0
        assert s.u_hat.item() == pytest.approx(0.3)

    def test_hard_reset_identity(self):
        # o=1 forces u_hat to u_reset; o=0 passes u through
        rng = np.random.default_rng(0)
        p = LifParams.create(rng, 4, 4)
        o, s = lif_step(NeuronState.zeros(2, 4), Tensor(rng.uniform(-3, 3, (2, 4))), p)
        fired = o.data == 1.0
        npt.assert_allclose(s.u_hat.data[fired], p.u_reset)
        npt.assert_allclose(s.u_hat.data[~fired], s.u.data[~fired])

    def test_input_width_mismatch(self):
        rng = np.random.default_rng(1)
        p = LifParams.create(rng, 4, 8)
        with pytest.raises(ad.ShapeError):
            lif_step(NeuronState.zeros(1, 8), Tensor(np.zeros((1, 3))), p)


class TestGrsn:
    def test_zero_forget_weights_give_half_mix(self):
        rng = np.random.default_rng(2)
        p = GrsnParams(
            W_f=Tensor(np.zeros((3, 3)), requires_grad=True),
            b_f=Tensor(np.zeros((1, 3)), requires_grad=True),
            W_i=Tensor(rng.uniform(-1, 1, (3, 3)), requires_grad=True),
            b_i=Tensor(np.zeros((1, 3)), requires_grad=True),
        )
        x = Tensor(rng.uniform(-1, 1, (1, 3)))
        c_prev = rng.uniform(-1, 1, (1, 3))
        s0 = NeuronState.zeros(1, 3)
        s0.c = Tensor(c_prev)
        _, s = grsn_step(s0, x, p)
        i_gate = np.maximum(x.data @ p.W_i.data, 0.0)
        npt.assert_allclose(s.c.data, 0.5 * c_prev + 0.5 * i_gate)

    def test_zero_input_zero_state_silent(self):
        rng = np.random.default_rng(3)
        p = GrsnParams.create(rng, 4, 4)
        o, s = grsn_step(NeuronState.zeros(1, 4), Tensor(np.zeros((1, 4))), p)
        npt.assert_array_equal(o.data, 0.0)
        npt.assert_array_equal(s.c.data, 0.0)
        npt.assert_array_equal(s.u.data, 0.0)

    def test_soft_reset_keeps_residual(self):
        # u=1.7, threshold=1 -> spike and u_hat=0.7
        p = GrsnParams(
            W_f=Tensor(np.full((1, 1), -100.0)),  # forget gate ~0 -> c = I(x)
            b_f=Tensor(np.zeros((1, 1))),
            W_i=Tensor(np.eye(1)),
            b_i=Tensor(np.zeros((1, 1))),
            beta_raw=Tensor(np.full((1, 1), 100.0)),  # beta ~1 -> u = u_hat_prev
        )
        s0 = state_with(1, u_hat=1.7)
        o, s = grsn_step(s0, Tensor([[0.5]]), p)
        assert o.item() == 1.0
        assert s.u.item() == pytest.approx(1.7, abs=1e-9)
        assert s.u_hat.item() == pytest.approx(0.7, abs=1e-9)

    def test_current_is_convex_combination(self):
        rng = np.random.default_rng(4)
        p = GrsnParams.create(rng, 6, 6)
        for _ in range(50):
            s0 = NeuronState.zeros(2, 6)
            s0.c = Tensor(rng.uniform(-2, 2, (2, 6)))
            x = Tensor(rng.uniform(-2, 2, (2, 6)))
            _, s = grsn_step(s0, x, p)
            i_gate = np.maximum(x.data @ p.W_i.data + p.b_i.data, 0.0)
            lo = np.minimum(s0.c.data, i_gate)
            hi = np.maximum(s0.c.data, i_gate)
            assert np.all(s.c.data >= lo - 1e-12) and np.all(s.c.data <= hi + 1e-12)

    def test_learnable_beta_stays_in_unit_interval(self):
        # +-30 is far beyond anything gradient updates reach; past ~36 the
        # open interval closes only by float64 rounding
        for raw in [-30.0, -3.0, 0.0, 3.0, 30.0]:
            p = GrsnParams(
                W_f=Tensor(np.zeros((1, 1))), b_f=Tensor(np.zeros((1, 1))),
                W_i=Tensor(np.zeros((1, 1))), b_i=Tensor(np.zeros((1, 1))),
                beta_raw=Tensor(np.full((1, 1), raw)),
            )
            assert 0.0 < p.beta() < 1.0
        p.beta_raw.data[0, 0] = 0.0
        assert p.beta() == pytest.approx(0.5)

    def test_binary_spikes(self):
        rng = np.random.default_rng(5)
        p = GrsnParams.create(rng, 5, 5)
        s = NeuronState.zeros(3, 5)
        for _ in range(20):
            o, s = grsn_step(s, Tensor(rng.uniform(-2, 2, (3, 5))), p)
            assert set(np.unique(o.data)) <= {0.0, 1.0}

    def test_beta_gradient_flows(self):
        rng = np.random.default_rng(6)
        p = GrsnParams.create(rng, 3, 3)
        x = Tensor(rng.uniform(0.5, 1.5, (1, 3)))
        s0 = state_with(3, u_hat=0.4, c=0.2)
        with Tape() as tape:
            _, s = grsn_step(s0, x, p)
            tape.backward(s.u.sum())
        assert p.beta_raw.grad is not None and p.beta_raw.grad[0, 0] != 0.0

    def test_gate_gradients_match_finite_differences(self):
        # membrane path only (no spike in the loss) so central differences apply
        rng = np.random.default_rng(7)
        p = GrsnParams.create(rng, 4, 4)
        x = Tensor(rng.uniform(-2, 2, (2, 4)))
        s0 = NeuronState.zeros(2, 4)
        s0.c = Tensor(rng.uniform(-1, 1, (2, 4)))

        def f():
            _, s = grsn_step(s0, x, p)
            return s.u.sum()

        assert finite_difference_check(f, p.parameters()) < 1e-4


class TestGru:
    def test_zero_weights_halve_hidden(self):
        p = GruParams(
            W_z=Tensor(np.zeros((6, 4))), b_z=Tensor(np.zeros((1, 4))),
            W_r=Tensor(np.zeros((6, 4))), b_r=Tensor(np.zeros((1, 4))),
            W_h=Tensor(np.zeros((6, 4))), b_h=Tensor(np.zeros((1, 4))),
        )
        h = Tensor(np.full((1, 4), 0.8))
        out, h_new = gru_step(h, Tensor(np.zeros((1, 2))), p)
        npt.assert_allclose(out.data, 0.4)
        assert out is h_new

    def test_zero_input_zero_state_zero_output(self):
        rng = np.random.default_rng(8)
        p = GruParams.create(rng, 3, 5)
        out, _ = gru_step(Tensor(np.zeros((1, 5))), Tensor(np.zeros((1, 3))), p)
        npt.assert_allclose(out.data, 0.0, atol=1e-15)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        p = GruParams.create(rng, 3, 4)
        x = Tensor(rng.uniform(-2, 2, (2, 3)))
        h = Tensor(rng.uniform(-1, 1, (2, 4)))

        def f():
            out, _ = gru_step(h, x, p)
            return out.sum()

        assert finite_difference_check(f, p.parameters()) < 1e-4

    def test_width_mismatch(self):
        rng = np.random.default_rng(10)
        p = GruParams.create(rng, 3, 4)
        with pytest.raises(ad.ShapeError):
            gru_step(Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 5))), p)


def test_cells_are_deterministic():
    rng = np.random.default_rng(11)
    lif = LifParams.create(rng, 4, 4)
    grsn = GrsnParams.create(rng, 4, 4)
    x = Tensor(rng.uniform(-1, 1, (2, 4)))
    s = NeuronState.zeros(2, 4)
    o1, s1 = lif_step(s, x, lif)
    o2, s2 = lif_step(s, x, lif)
    assert np.array_equal(o1.data, o2.data) and np.array_equal(s1.u.data, s2.u.data)
    g1, t1 = grsn_step(s, x, grsn)
    g2, t2 = grsn_step(s, x, grsn)
    assert np.array_equal(g1.data, g2.data) and np.array_equal(t1.c.data, t2.c.data)


def test_lif_bptt_gradient_through_reset_uses_surrogate():
    # two-step unroll: gradient of u_2 wrt W must include the reset-path term
    # (u_reset - u_1) * slope(u_1 - threshold) + 1 - o_1 on the recurrent branch
    p = identity_lif(1)
    x1, x2 = Tensor([[2.4]]), Tensor([[0.2]])
    with Tape() as tape:
        o1, s1 = lif_step(NeuronState.zeros(1, 1), x1, p)
        _, s2 = lif_step(s1, x2, p)
        tape.backward(s2.u.sum())
    u1 = s1.u.item()  # 1.2, spiking
    slope = 2.0 / (2.0 * (1.0 + (np.pi / 2 * 2.0 * (u1 - 1.0)) ** 2))
    delta1 = (0.0 - u1) * slope + 1.0 - 1.0
    expected = 0.5 * x2.item() + 0.5 * delta1 * 0.5 * x1.item()
    npt.assert_allclose(p.W.grad[0, 0], expected, rtol=1e-12)
