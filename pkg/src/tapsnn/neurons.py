"""Stateful spiking cells (hard-reset LIF, gated soft-reset GRSN) and a GRU baseline.

All cells share the single-step contract: ``step(state, x) -> (output, state)``
where x is a (batch, in_dim) tensor and output is (batch, width). Spiking
cells emit exactly 0/1 outputs; gradients pass through the firing function
via the arc-tangent surrogate. Inputs stay row-major batches so one cell
update corresponds to one environment transition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

# default neuron constants: decay 0.5, threshold 1, surrogate width 2, reset 0
DEFAULT_BETA = 0.5
DEFAULT_THRESHOLD = 1.0
DEFAULT_ALPHA = 2.0
DEFAULT_U_RESET = 0.0


def fan_in_init(rng: np.random.Generator, n_in: int, n_out: int) -> Tensor:
    """Weights ~ uniform(-1/sqrt(n_in), 1/sqrt(n_in)); biases start at zero."""
    bound = 1.0 / np.sqrt(n_in)
    return Tensor(rng.uniform(-bound, bound, size=(n_in, n_out)), requires_grad=True)


def zeros_param(n: int) -> Tensor:
    return Tensor(np.zeros((1, n)), requires_grad=True)


@dataclass
class NeuronState:
    """Per-layer membrane potential, post-reset potential and synaptic current."""

    u: Tensor
    u_hat: Tensor
    c: Tensor

    @staticmethod
    def zeros(batch: int, width: int) -> "NeuronState":
        return NeuronState(
            u=Tensor(np.zeros((batch, width))),
            u_hat=Tensor(np.zeros((batch, width))),
            c=Tensor(np.zeros((batch, width))),
        )


@dataclass
class LifParams:
    """Leaky integrate-and-fire layer with hard reset to u_reset."""

    W: Tensor
    b: Tensor
    beta: float = DEFAULT_BETA
    threshold: float = DEFAULT_THRESHOLD
    alpha: float = DEFAULT_ALPHA
    u_reset: float = DEFAULT_U_RESET

    @staticmethod
    def create(rng: np.random.Generator, n_in: int, width: int, **kwargs) -> "LifParams":
        return LifParams(W=fan_in_init(rng, n_in, width), b=zeros_param(width), **kwargs)

    def parameters(self) -> list[Tensor]:
        return [self.W, self.b]


def lif_step(state: NeuronState, x: Tensor, p: LifParams) -> tuple[Tensor, NeuronState]:
    """One membrane update: integrate current, decay, fire, hard-reset.

    c = x W + b; u = beta * u_hat_prev + (1 - beta) * c; o = heaviside(u - threshold);
    u_hat = u_reset * o + (1 - o) * u.
    """
    if x.shape[1] != p.W.shape[0]:
        raise ad.ShapeError(f"input width {x.shape[1]} != weight rows {p.W.shape[0]}")
    c = ad.add(ad.matmul(x, p.W), p.b)
    u = ad.mix(state.u_hat, c, p.beta)
    o = ad.spike(u, p.threshold, p.alpha)
    u_hat = ad.mul(ad.affine(o, -1.0, 1.0), u)
    if p.u_reset != 0.0:
        u_hat = ad.axpy(u_hat, o, p.u_reset)
    return o, NeuronState(u=u, u_hat=u_hat, c=c)


@dataclass
class GrsnParams:
    """Gated recurrent spiking neuron: soft reset, learnable decay, gated current.

    The decay factor is sigmoid(beta_raw), one scalar per layer, so it stays
    in (0, 1) under any gradient update; beta_raw = 0 gives the 0.5 default.
    """

    W_f: Tensor
    b_f: Tensor
    W_i: Tensor
    b_i: Tensor
    beta_raw: Tensor = field(default_factory=lambda: Tensor(np.zeros((1, 1)), requires_grad=True))
    threshold: float = DEFAULT_THRESHOLD
    alpha: float = DEFAULT_ALPHA

    @staticmethod
    def create(rng: np.random.Generator, n_in: int, width: int, **kwargs) -> "GrsnParams":
        return GrsnParams(
            W_f=fan_in_init(rng, n_in, width),
            b_f=zeros_param(width),
            W_i=fan_in_init(rng, n_in, width),
            b_i=zeros_param(width),
            **kwargs,
        )

    def parameters(self) -> list[Tensor]:
        return [self.W_f, self.b_f, self.W_i, self.b_i, self.beta_raw]

    def beta(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.beta_raw.data[0, 0])))


def grsn_step(state: NeuronState, x: Tensor, p: GrsnParams) -> tuple[Tensor, NeuronState]:
    """One gated update.

    F = sigmoid(x W_f + b_f); I = relu(x W_i + b_i);
    c = F * c_prev + (1 - F) * I        (convex combination per component)
    u = beta * u_hat_prev + (1 - beta) * c; o = heaviside(u - threshold);
    u_hat = u - threshold * o           (soft reset keeps the residual).
    """
    if x.shape[1] != p.W_f.shape[0]:
        raise ad.ShapeError(f"input width {x.shape[1]} != gate rows {p.W_f.shape[0]}")
    f_gate = ad.bias_sigmoid(ad.matmul(x, p.W_f), p.b_f)
    i_gate = ad.bias_relu(ad.matmul(x, p.W_i), p.b_i)
    c = ad.mix(state.c, i_gate, f_gate)
    beta = ad.sigmoid(p.beta_raw)  # (1, 1) scalar broadcast inside mix
    u = ad.mix(state.u_hat, c, beta)
    o = ad.spike(u, p.threshold, p.alpha)
    u_hat = ad.axpy(u, o, -p.threshold)
    return o, NeuronState(u=u, u_hat=u_hat, c=c)


@dataclass
class GruParams:
    """Standard gated recurrent unit: h' = (1 - z) * h + z * tanh-candidate."""

    W_z: Tensor
    b_z: Tensor
    W_r: Tensor
    b_r: Tensor
    W_h: Tensor
    b_h: Tensor

    @staticmethod
    def create(rng: np.random.Generator, n_in: int, width: int) -> "GruParams":
        n = n_in + width
        return GruParams(
            W_z=fan_in_init(rng, n, width), b_z=zeros_param(width),
            W_r=fan_in_init(rng, n, width), b_r=zeros_param(width),
            W_h=fan_in_init(rng, n, width), b_h=zeros_param(width),
        )

    def parameters(self) -> list[Tensor]:
        return [self.W_z, self.b_z, self.W_r, self.b_r, self.W_h, self.b_h]


def gru_step(h: Tensor, x: Tensor, p: GruParams) -> tuple[Tensor, Tensor]:
    if x.shape[1] + h.shape[1] != p.W_z.shape[0]:
        raise ad.ShapeError(
            f"gru input {x.shape[1]}+{h.shape[1]} != weight rows {p.W_z.shape[0]}")
    xh = ad.concat([x, h], axis=1)
    z = ad.sigmoid(ad.add(ad.matmul(xh, p.W_z), p.b_z))
    r = ad.sigmoid(ad.add(ad.matmul(xh, p.W_r), p.b_r))
    xrh = ad.concat([x, ad.mul(r, h)], axis=1)
    cand = ad.tanh(ad.add(ad.matmul(xrh, p.W_h), p.b_h))
    h_new = ad.mul(1.0 - z, h) + ad.mul(z, cand)
    return h_new, h_new
