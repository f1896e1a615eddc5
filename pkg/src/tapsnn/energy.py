"""Synaptic-operation counting and picojoule energy estimates.

Dense layers are billed structurally: every incoming connection of every
neuron performs one multiply-accumulate per sample regardless of activity.
Spiking outputs are billed by activity: a synapse only does work (one
addition) when its presynaptic neuron actually fires, so the spiking-cell
count is the recorded spike total weighted by fan-out. A gated/LIF cell's
input affine consumes real-valued embeddings and therefore stays in the
dense bucket; what the spikes save is the first decoder layer, which sees
binary inputs. 32-bit costs: 4.6 pJ per MAC, 0.9 pJ per addition.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .envs import make
from .network import CellRecorder, GruCell, StepInput, TapPolicy

MAC_PJ = 4.6
ADD_PJ = 0.9


@dataclass
class SpikeTrace:
    """Binary cell outputs recorded per step; rows are batch entries."""

    spikes: list[np.ndarray]

    def __post_init__(self):
        for arr in self.spikes:
            vals = np.unique(arr)
            if not set(vals) <= {0.0, 1.0}:
                raise ValueError("spike trace entries must be exactly 0 or 1")

    def total_spikes(self) -> float:
        return float(sum(arr.sum() for arr in self.spikes))

    def firing_rate(self) -> float:
        n = sum(arr.size for arr in self.spikes)
        return self.total_spikes() / n if n else 0.0


def sop_snn(trace: SpikeTrace, fan_out) -> float:
    """Activity-driven count: sum over steps and neurons of fan_out * spike."""
    fo = np.asarray(fan_out, dtype=np.float64)
    total = 0.0
    for arr in trace.spikes:
        per_neuron = np.asarray(arr).sum(axis=0)
        if fo.ndim and fo.shape != per_neuron.shape:
            raise ValueError(f"fan_out shape {fo.shape} does not match "
                             f"layer width {per_neuron.shape}")
        total += float((fo * per_neuron).sum())
    return total


def sop_ann(topology) -> int:
    """Structural count: sum of fan_in * n_neurons over (fan_in, n) layers."""
    total = 0
    for fan_in, n in topology:
        if fan_in < 0 or n <= 0:
            raise ValueError(f"bad layer ({fan_in}, {n})")
        total += int(fan_in) * int(n)
    return total


def chain_topology(widths) -> list[tuple[int, int]]:
    """Fully connected chain, e.g. [4, 8, 2] -> [(4, 8), (8, 2)]."""
    return [(widths[i], widths[i + 1]) for i in range(len(widths) - 1)]


def dense_topology(policy: TapPolicy) -> list[tuple[int, int]]:
    """Per-sample MAC-billed layers of one network (weights only, no biases)."""
    spec = policy.spec
    cell_in = spec.obs_embed + spec.act_embed + spec.rew_embed
    shortcut_in = spec.obs_dim
    if spec.head == "critic" and not spec.discrete:
        shortcut_in += spec.act_dim
    layers = [
        (spec.obs_dim, spec.obs_embed),
        (spec.act_dim, spec.act_embed),
        (1, spec.rew_embed),
        (shortcut_in, spec.shortcut_embed),
    ]
    if spec.cell_kind == "grsn":
        layers += [(cell_in, spec.hidden), (cell_in, spec.hidden)]  # two gate affines
    elif spec.cell_kind in ("lif", "mlp"):
        layers += [(cell_in, spec.hidden)]
    d0, d1 = spec.decoder_hidden
    if spec.cell_kind in ("grsn", "lif"):
        # first decoder layer: only the real-valued shortcut share is dense;
        # the spiking share is billed per spike in the cell bucket
        layers += [(spec.shortcut_embed, d0)]
    else:
        layers += [(spec.hidden + spec.shortcut_embed, d0)]
    layers += [(d0, d1), (d1, spec.head_dim())]
    return layers


def cell_fan_out(policy: TapPolicy) -> int:
    """Connections driven by each cell spike: the first decoder layer's width."""
    return policy.spec.decoder_hidden[0]


def gru_cell_macs(policy: TapPolicy) -> int:
    spec = policy.spec
    cell_in = spec.obs_embed + spec.act_embed + spec.rew_embed
    return 3 * (cell_in + spec.hidden) * spec.hidden


@dataclass
class EnergyReport:
    name: str
    n_samples: int
    sop_mlp: float
    sop_recurrent: float
    energy_mlp_pj: float
    energy_cell_pj: float
    total_pj: float
    firing_rate: float = 0.0
    saved_percent: float | None = None

    def rows(self) -> list[tuple[str, str]]:
        out = [("network", self.name),
               ("samples", str(self.n_samples)),
               ("mlp sop", f"{self.sop_mlp:.0f}"),
               ("cell sop", f"{self.sop_recurrent:.0f}"),
               ("mlp energy (KpJ)", f"{self.energy_mlp_pj / 1e3:.2f}"),
               ("cell energy (KpJ)", f"{self.energy_cell_pj / 1e3:.2f}"),
               ("total (KpJ)", f"{self.total_pj / 1e3:.2f}"),
               ("firing rate", f"{self.firing_rate:.3f}")]
        if self.saved_percent is not None:
            out.append(("saved vs baseline", f"{self.saved_percent:.1f}%"))
        return out


def measure_traces(networks: dict[str, TapPolicy], env_id: str, n_samples: int,
                   seed: int) -> dict[str, SpikeTrace]:
    """Roll the actor greedily and run every network on the same input stream."""
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    actor = networks["actor"]
    env = make(env_id)
    rng = np.random.default_rng(seed)
    recorders = {}
    for name, net in networks.items():
        recorders[name] = CellRecorder()
        net.recorder = recorders[name]
    try:
        collected = 0
        while collected < n_samples:
            obs = env.reset(seed=int(rng.integers(2**31)))
            states = {name: net.initial_state(1) for name, net in networks.items()}
            prev_action = np.zeros(actor.spec.act_dim)
            prev_reward = 0.0
            done = False
            while not done and collected < n_samples:
                action, states["actor"] = actor.act(obs, prev_action, prev_reward,
                                                    states["actor"], deterministic=True)
                enc = (np.eye(actor.spec.act_dim)[action] if actor.spec.discrete
                       else np.asarray(action).reshape(-1))
                step = StepInput(
                    obs=_row(obs), prev_action=_row(prev_action),
                    prev_reward=_row(np.array([prev_reward])),
                    action=_row(enc))
                for name, net in networks.items():
                    if name == "actor":
                        continue
                    _, states[name] = net.forward_step(step, states[name])
                obs, prev_reward, done = env.step(action)
                prev_action = enc
                collected += 1
    finally:
        for net in networks.values():
            net.recorder = None
    return {name: SpikeTrace(rec.spikes) for name, rec in recorders.items()}


def _row(values: np.ndarray):
    from .autodiff import Tensor

    return Tensor(np.asarray(values, dtype=np.float64).reshape(1, -1))


def estimate(networks: dict[str, TapPolicy], env_id: str, n_samples: int = 1024,
             seed: int = 0, name: str = "agent",
             baseline: "EnergyReport | None" = None) -> EnergyReport:
    """Energy for the full agent (all given networks) over sampled decisions.

    Spiking cells contribute activity-driven additions; GRU cells contribute
    structural MACs; everything dense is structural MACs. Samples come from
    rolling the trained actor in its environment so firing rates reflect the
    policy's own state distribution.
    """
    spiking = {n: p for n, p in networks.items() if p.cell.spiking}
    traces = measure_traces(networks, env_id, n_samples, seed) if spiking else {}

    sop_mlp = 0.0
    sop_cell = 0.0
    rates = []
    for net_name, net in networks.items():
        sop_mlp += n_samples * sop_ann(dense_topology(net))
        if net.cell.spiking:
            trace = traces[net_name]
            sop_cell += sop_snn(trace, cell_fan_out(net))
            rates.append(trace.firing_rate())
        elif isinstance(net.cell, GruCell):
            sop_cell += n_samples * gru_cell_macs(net)
    energy_mlp = sop_mlp * MAC_PJ
    cell_rate = ADD_PJ if spiking else MAC_PJ
    energy_cell = sop_cell * cell_rate
    report = EnergyReport(
        name=name, n_samples=n_samples, sop_mlp=sop_mlp, sop_recurrent=sop_cell,
        energy_mlp_pj=energy_mlp, energy_cell_pj=energy_cell,
        total_pj=energy_mlp + energy_cell,
        firing_rate=float(np.mean(rates)) if rates else 0.0)
    if baseline is not None:
        report.saved_percent = 100.0 * (1.0 - report.total_pj / baseline.total_pj)
    return report


def write_report_csv(path, reports: list[EnergyReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["network", "samples", "sop_mlp", "sop_cell",
                         "energy_mlp_pj", "energy_cell_pj", "total_pj",
                         "firing_rate", "saved_percent"])
        for r in reports:
            writer.writerow([r.name, r.n_samples, f"{r.sop_mlp:.1f}",
                             f"{r.sop_recurrent:.1f}", f"{r.energy_mlp_pj:.1f}",
                             f"{r.energy_cell_pj:.1f}", f"{r.total_pj:.1f}",
                             f"{r.firing_rate:.4f}",
                             "" if r.saved_percent is None else f"{r.saved_percent:.2f}"])


def format_table(reports: list[EnergyReport]) -> str:
    lines = []
    for r in reports:
        lines.append(f"-- {r.name} --")
        for key, value in r.rows():
            lines.append(f"  {key:<20} {value}")
    return "\n".join(lines)
