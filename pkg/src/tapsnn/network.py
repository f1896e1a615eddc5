"""Recurrent policy/value networks: embedders -> one cell -> decoder heads.

In the aligned (default) mode the recurrent cell advances exactly once per
environment transition, so hidden state accumulates history across an entire
episode. The rate-coded ablation mode instead repeats the embedded input for
a fixed inner window from a zero state each transition and decodes the mean
firing rate; its state never persists across transitions.

The decoder sees the cell output concatenated with a current-feature
embedding (observation, plus the action for continuous critics), following
the recurrent actor-critic layout this experimental setup reproduces.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .neurons import (
    GrsnParams,
    GruParams,
    LifParams,
    NeuronState,
    fan_in_init,
    grsn_step,
    gru_step,
    lif_step,
    zeros_param,
)

CELL_KINDS = ("grsn", "lif", "gru", "mlp")


@dataclass
class Affine:
    W: Tensor
    b: Tensor

    @staticmethod
    def create(rng: np.random.Generator, n_in: int, n_out: int) -> "Affine":
        return Affine(W=fan_in_init(rng, n_in, n_out), b=zeros_param(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.W), self.b)

    def relu(self, x: Tensor) -> Tensor:
        return ad.bias_relu(ad.matmul(x, self.W), self.b)

    def parameters(self) -> list[Tensor]:
        return [self.W, self.b]


class GrsnCell:
    spiking = True

    def __init__(self, rng, n_in, width, threshold=1.0, alpha=2.0):
        self.width = width
        self.params = GrsnParams.create(rng, n_in, width, threshold=threshold, alpha=alpha)

    def initial_state(self, batch: int) -> NeuronState:
        return NeuronState.zeros(batch, self.width)

    def step(self, state, x):
        return grsn_step(state, x, self.params)

    def parameters(self):
        return self.params.parameters()

    def param_names(self):
        return ["W_f", "b_f", "W_i", "b_i", "beta_raw"]


class LifCell:
    spiking = True

    def __init__(self, rng, n_in, width, beta=0.5, threshold=1.0, alpha=2.0, u_reset=0.0):
        self.width = width
        self.params = LifParams.create(rng, n_in, width, beta=beta, threshold=threshold,
                                       alpha=alpha, u_reset=u_reset)

    def initial_state(self, batch: int) -> NeuronState:
        return NeuronState.zeros(batch, self.width)

    def step(self, state, x):
        return lif_step(state, x, self.params)

    def parameters(self):
        return self.params.parameters()

    def param_names(self):
        return ["W", "b"]


class GruCell:
    spiking = False

    def __init__(self, rng, n_in, width):
        self.width = width
        self.params = GruParams.create(rng, n_in, width)

    def initial_state(self, batch: int) -> Tensor:
        return Tensor(np.zeros((batch, self.width)))

    def step(self, state, x):
        return gru_step(state, x, self.params)

    def parameters(self):
        return self.params.parameters()

    def param_names(self):
        return ["W_z", "b_z", "W_r", "b_r", "W_h", "b_h"]


class FeedforwardCell:
    """Memoryless stand-in used by the MLP baseline."""

    spiking = False

    def __init__(self, rng, n_in, width):
        self.width = width
        self.layer = Affine.create(rng, n_in, width)

    def initial_state(self, batch: int) -> None:
        return None

    def step(self, state, x):
        out = self.layer.relu(x)
        return out, None

    def parameters(self):
        return self.layer.parameters()

    def param_names(self):
        return ["W", "b"]


_CELLS = {"grsn": GrsnCell, "lif": LifCell, "gru": GruCell, "mlp": FeedforwardCell}


@dataclass
class StepInput:
    """Per-transition network input: observation plus previous action/reward.

    ``action`` is the current action, consumed only by continuous critics.
    """

    obs: Tensor
    prev_action: Tensor
    prev_reward: Tensor
    action: Tensor | None = None


@dataclass
class FlatInputs:
    """Time-major flattened inputs: row block t covers rows [t*B, (t+1)*B)."""

    obs: Tensor
    prev_action: Tensor
    prev_reward: Tensor
    n_steps: int
    batch: int

    @staticmethod
    def from_arrays(obs: np.ndarray, prev_action: np.ndarray,
                    prev_reward: np.ndarray) -> "FlatInputs":
        T, B = obs.shape[0], obs.shape[1]
        return FlatInputs(obs=Tensor(obs.reshape(T * B, -1)),
                          prev_action=Tensor(prev_action.reshape(T * B, -1)),
                          prev_reward=Tensor(prev_reward.reshape(T * B, -1)),
                          n_steps=T, batch=B)


@dataclass
class PolicySpec:
    obs_dim: int
    act_dim: int
    discrete: bool
    head: str  # "actor" | "critic"
    cell_kind: str = "grsn"
    hidden: int = 128
    obs_embed: int = 32
    act_embed: int = 8
    rew_embed: int = 8
    shortcut_embed: int = 128
    decoder_hidden: tuple[int, int] = (128, 128)
    max_action: float = 1.0
    aligned: bool = True  # one cell update per transition; False = rate-coded
    t_inner: int = 4
    threshold: float = 1.0
    alpha: float = 2.0
    lif_beta: float = 0.5
    lif_u_reset: float = 0.0

    def head_dim(self) -> int:
        if self.discrete:
            return self.act_dim  # logits or Q per action
        return self.act_dim if self.head == "actor" else 1


class CellRecorder:
    """Collects per-step membrane potentials and spike outputs of the cell."""

    def __init__(self):
        self.potentials: list[np.ndarray] = []
        self.spikes: list[np.ndarray] = []

    def record(self, u: np.ndarray, spikes: np.ndarray) -> None:
        self.potentials.append(u.copy())
        self.spikes.append(spikes.copy())

    def clear(self) -> None:
        self.potentials.clear()
        self.spikes.clear()


class TapPolicy:
    """Embedders, one recurrent cell, and a decoder head, unrolled per transition."""

    def __init__(self, spec: PolicySpec, rng: np.random.Generator):
        if spec.cell_kind not in CELL_KINDS:
            raise ValueError(f"unknown cell kind {spec.cell_kind!r}")
        if not spec.aligned and spec.cell_kind not in ("grsn", "lif"):
            raise ValueError("rate-coded mode applies to spiking cells only")
        self.spec = spec
        self.obs_embedder = Affine.create(rng, spec.obs_dim, spec.obs_embed)
        self.act_embedder = Affine.create(rng, spec.act_dim, spec.act_embed)
        self.rew_embedder = Affine.create(rng, 1, spec.rew_embed)
        cell_in = spec.obs_embed + spec.act_embed + spec.rew_embed
        kwargs = {}
        if spec.cell_kind == "grsn":
            kwargs = {"threshold": spec.threshold, "alpha": spec.alpha}
        elif spec.cell_kind == "lif":
            kwargs = {"threshold": spec.threshold, "alpha": spec.alpha,
                      "beta": spec.lif_beta, "u_reset": spec.lif_u_reset}
        self.cell = _CELLS[spec.cell_kind](rng, cell_in, spec.hidden, **kwargs)
        shortcut_in = spec.obs_dim
        if spec.head == "critic" and not spec.discrete:
            shortcut_in += spec.act_dim  # continuous critics see the action here
        self.shortcut_embedder = Affine.create(rng, shortcut_in, spec.shortcut_embed)
        d0, d1 = spec.decoder_hidden
        self.decoder = [
            Affine.create(rng, spec.hidden + spec.shortcut_embed, d0),
            Affine.create(rng, d0, d1),
        ]
        self.head = Affine.create(rng, d1, spec.head_dim())
        self.cell_updates = 0
        self.recorder: CellRecorder | None = None

    # -- parameter plumbing --------------------------------------------------

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named: list[tuple[str, Tensor]] = []
        for prefix, aff in [("obs_embedder", self.obs_embedder),
                            ("act_embedder", self.act_embedder),
                            ("rew_embedder", self.rew_embedder),
                            ("shortcut_embedder", self.shortcut_embedder)]:
            named += [(f"{prefix}.W", aff.W), (f"{prefix}.b", aff.b)]
        named += [(f"cell.{n}", p)
                  for n, p in zip(self.cell.param_names(), self.cell.parameters())]
        for i, aff in enumerate(self.decoder):
            named += [(f"decoder.{i}.W", aff.W), (f"decoder.{i}.b", aff.b)]
        named += [("head.W", self.head.W), ("head.b", self.head.b)]
        return named

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def clone(self) -> "TapPolicy":
        twin = TapPolicy(replace(self.spec), np.random.default_rng(0))
        for (_, dst), (_, src) in zip(twin.named_parameters(), self.named_parameters()):
            dst.data = src.data.copy()
        return twin

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        for name, param in self.named_parameters():
            if name not in tensors:
                raise KeyError(f"checkpoint is missing {name!r}")
            if tensors[name].shape != param.data.shape:
                raise ValueError(f"{name}: checkpoint shape {tensors[name].shape} "
                                 f"!= parameter shape {param.data.shape}")
            param.data = tensors[name].copy()

    # -- forward -------------------------------------------------------------

    def initial_state(self, batch: int = 1):
        return self.cell.initial_state(batch)

    def embed(self, step: StepInput) -> Tensor:
        parts = [self.obs_embedder.relu(step.obs),
                 self.act_embedder.relu(step.prev_action),
                 self.rew_embedder.relu(step.prev_reward)]
        return ad.concat(parts, axis=1)

    def _cell_step(self, state, x: Tensor):
        out, state = self.cell.step(state, x)
        self.cell_updates += 1
        if self.recorder is not None and self.cell.spiking:
            self.recorder.record(state.u.data, out.data)
        return out, state

    def features(self, step: StepInput, state):
        """One transition's cell features: a single aligned update, or an
        inner rate-coded window from a zero state."""
        x = self.embed(step)
        if self.spec.aligned:
            return self._cell_step(state, x)
        inner = self.cell.initial_state(x.shape[0])
        acc = None
        for _ in range(self.spec.t_inner):
            o, inner = self._cell_step(inner, x)
            acc = o if acc is None else ad.add(acc, o)
        rate = ad.scale(acc, 1.0 / self.spec.t_inner)
        return rate, state  # caller-held state passes through untouched

    def decode(self, feature: Tensor, step: StepInput) -> Tensor:
        return self._decode_core(feature, step.obs, step.action)

    def _decode_core(self, feature: Tensor, obs: Tensor, action: Tensor | None) -> Tensor:
        shortcut_in = obs
        if self.spec.head == "critic" and not self.spec.discrete:
            if action is None:
                raise ValueError("continuous critic needs the current action")
            shortcut_in = ad.concat([obs, action], axis=1)
        shortcut = self.shortcut_embedder.relu(shortcut_in)
        h = ad.concat([feature, shortcut], axis=1)
        for layer in self.decoder:
            h = layer.relu(h)
        out = self.head(h)
        if self.spec.head == "actor" and not self.spec.discrete:
            out = ad.scale(out.tanh(), self.spec.max_action)
        if not np.isfinite(out.data).all():
            raise ArithmeticError("non-finite decoder output")
        return out

    def forward_step(self, step: StepInput, state):
        feature, state = self.features(step, state)
        return self.decode(feature, step), state

    # -- flattened training path ----------------------------------------------
    #
    # Mathematically identical to stepping forward_sequence, but every
    # input-side and decoder matmul runs once over all (steps x batch) rows;
    # only the cell recurrence is sequential. Training uses this path; the
    # per-step path above remains the reference and the two are tested for
    # agreement. Bitwise equality across different row counts is not a BLAS
    # guarantee, so contracts stated bitwise bind the per-step path.

    def unroll_flat(self, flat: "FlatInputs", state=None) -> tuple[Tensor, object]:
        """Cell features for all steps, flattened time-major to (T*B, hidden)."""
        spec, cell = self.spec, self.cell
        T, B = flat.n_steps, flat.batch
        if state is None:
            state = self.initial_state(B)
        x_all = ad.concat([self.obs_embedder.relu(flat.obs),
                           self.act_embedder.relu(flat.prev_action),
                           self.rew_embedder.relu(flat.prev_reward)], axis=1)
        if isinstance(cell, FeedforwardCell):
            self.cell_updates += T
            return cell.layer.relu(x_all), state

        feats: list[Tensor] = []
        if isinstance(cell, (GrsnCell, LifCell)):
            p = cell.params
            if isinstance(cell, GrsnCell):
                f_all = ad.bias_sigmoid(ad.matmul(x_all, p.W_f), p.b_f)
                i_all = ad.bias_relu(ad.matmul(x_all, p.W_i), p.b_i)
                f_steps = ad.split_rows(f_all, T)
                i_steps = ad.split_rows(i_all, T)
                beta = ad.sigmoid(p.beta_raw)
            else:
                c_steps = ad.split_rows(ad.add(ad.matmul(x_all, p.W), p.b), T)
            for t in range(T):
                if spec.aligned:
                    if isinstance(cell, GrsnCell):
                        c = ad.mix(state.c, i_steps[t], f_steps[t])
                        u = ad.mix(state.u_hat, c, beta)
                        o = ad.spike(u, p.threshold, p.alpha)
                        u_hat = ad.axpy(u, o, -p.threshold)
                    else:
                        c = c_steps[t]
                        u = ad.mix(state.u_hat, c, p.beta)
                        o = ad.spike(u, p.threshold, p.alpha)
                        u_hat = ad.mul(ad.affine(o, -1.0, 1.0), u)
                        if p.u_reset != 0.0:
                            u_hat = ad.axpy(u_hat, o, p.u_reset)
                    state = NeuronState(u=u, u_hat=u_hat, c=c)
                    self.cell_updates += 1
                    feats.append(o)
                else:
                    # rate-coded: repeat the same input from a zero inner state
                    inner = cell.initial_state(B)
                    acc = None
                    for _ in range(spec.t_inner):
                        if isinstance(cell, GrsnCell):
                            c = ad.mix(inner.c, i_steps[t], f_steps[t])
                            u = ad.mix(inner.u_hat, c, beta)
                            o = ad.spike(u, p.threshold, p.alpha)
                            u_hat = ad.axpy(u, o, -p.threshold)
                        else:
                            c = c_steps[t]
                            u = ad.mix(inner.u_hat, c, p.beta)
                            o = ad.spike(u, p.threshold, p.alpha)
                            u_hat = ad.mul(ad.affine(o, -1.0, 1.0), u)
                            if p.u_reset != 0.0:
                                u_hat = ad.axpy(u_hat, o, p.u_reset)
                        inner = NeuronState(u=u, u_hat=u_hat, c=c)
                        self.cell_updates += 1
                        acc = o if acc is None else ad.add(acc, o)
                    feats.append(ad.scale(acc, 1.0 / spec.t_inner))
            return ad.concat(feats, axis=0), state

        # gru: input-side projections batch over time, hidden side steps
        p = self.cell.params
        n_in = x_all.shape[1]
        zx = ad.split_rows(ad.add(ad.matmul(x_all, ad.rows(p.W_z, 0, n_in)), p.b_z), T)
        rx = ad.split_rows(ad.add(ad.matmul(x_all, ad.rows(p.W_r, 0, n_in)), p.b_r), T)
        hx = ad.split_rows(ad.add(ad.matmul(x_all, ad.rows(p.W_h, 0, n_in)), p.b_h), T)
        w_zh = ad.rows(p.W_z, n_in, n_in + cell.width)
        w_rh = ad.rows(p.W_r, n_in, n_in + cell.width)
        w_hh = ad.rows(p.W_h, n_in, n_in + cell.width)
        h = state
        for t in range(T):
            z = ad.sigmoid(ad.add(zx[t], ad.matmul(h, w_zh)))
            r = ad.sigmoid(ad.add(rx[t], ad.matmul(h, w_rh)))
            cand = ad.tanh(ad.add(hx[t], ad.matmul(ad.mul(r, h), w_hh)))
            h = ad.mix(cand, h, z)
            self.cell_updates += 1
            feats.append(h)
        return ad.concat(feats, axis=0), h

    def decode_flat(self, features: Tensor, obs: Tensor,
                    action: Tensor | None = None) -> Tensor:
        return self._decode_core(features, obs, action)

    def forward_sequence(self, steps: Sequence[StepInput], state=None):
        """Per-step head outputs plus the final state for stateful continuation."""
        if len(steps) == 0:
            raise ValueError("forward_sequence needs a nonempty sequence")
        if state is None:
            state = self.initial_state(steps[0].obs.shape[0])
        outputs = []
        for step in steps:
            out, state = self.forward_step(step, state)
            outputs.append(out)
        return outputs, state

    # -- rollout helper -------------------------------------------------------

    def act(self, obs: np.ndarray, prev_action: np.ndarray, prev_reward: float,
            state, deterministic: bool, rng: np.random.Generator | None = None):
        """Single-row greedy/stochastic action for environment interaction."""
        step = StepInput(obs=Tensor(obs.reshape(1, -1)),
                         prev_action=Tensor(np.asarray(prev_action).reshape(1, -1)),
                         prev_reward=Tensor([[float(prev_reward)]]))
        with ad.no_grad():
            out, state = self.forward_step(step, state)
        if self.spec.head != "actor":
            raise ValueError("act() requires an actor head")
        if self.spec.discrete:
            logits = out.data[0]
            if deterministic:
                return int(np.argmax(logits)), state
            z = logits - logits.max()
            p = np.exp(z) / np.exp(z).sum()
            return int(rng.choice(len(p), p=p)), state
        return out.data[0].copy(), state


def count_cell_updates(policy: TapPolicy) -> int:
    """Exact number of cell steps executed since the counter was last reset."""
    return policy.cell_updates


def reset_cell_update_counter(policy: TapPolicy) -> None:
    policy.cell_updates = 0


# -- checkpoints -------------------------------------------------------------

CHECKPOINT_MAGIC = b"TAPSNN01"


def save_checkpoint(path, named: Sequence[tuple[str, Tensor]]) -> None:
    """Flat named-tensor file: magic, json header, little-endian float64 blobs."""
    header = {"version": 1,
              "tensors": [{"name": n, "shape": list(t.data.shape)} for n, t in named]}
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, t in named:
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        if header.get("version") != 1:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        out = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape))
            data = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape)
            out[entry["name"]] = data.astype(np.float64)
        return out
