"""Numerical verification of the recurrent spiking-gradient theory.

The reset derivative delta_t = d(u_hat)/d(u) controls how much gradient
survives each extra step of history: the per-step factor is beta * delta_t,
and the pure-history term of the unrolled gradient carries the product of
those factors. Under the default constants (beta 0.5, threshold 1, surrogate
width 2, reset 0) the factor is bounded away from 1 in magnitude for both
reset rules, so the product vanishes geometrically and the gradient is
carried by the input-current path. Everything here recomputes those claims
from scratch (plain numpy, no tape) so it can serve as an independent oracle
for the autodiff path.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor
from .neurons import LifParams, NeuronState, lif_step


class VerificationError(AssertionError):
    """A theory bound or oracle comparison failed."""


@dataclass
class NeuronConstants:
    beta: float = 0.5
    threshold: float = 1.0
    alpha: float = 2.0
    u_reset: float = 0.0


DEFAULTS = NeuronConstants()

# extrema of the default-parameter factor functions, located at +-sqrt(1 + 1/pi^2)
EXTREMUM_X = math.sqrt(1.0 + 1.0 / math.pi**2)
F_MAX = 0.0124
F_MIN = -0.5124
G_MAX = 0.5124
G_MIN = -0.0124
HARD_FACTOR_BOUND = 0.5124  # |beta * delta| never exceeds this under defaults


def _slope(x, alpha: float):
    """Arc-tangent surrogate derivative, written out independently of the tape."""
    z = (math.pi / 2.0) * alpha * np.asarray(x, dtype=np.float64)
    return alpha / (2.0 * (1.0 + z * z))


def delta_hard(u, params: NeuronConstants = DEFAULTS, scaled: bool = False):
    """Reset derivative for the hard rule: (u_reset - u) h'(u - th) + 1 - step(u - th)."""
    u = np.asarray(u, dtype=np.float64)
    fired = (u >= params.threshold).astype(np.float64)
    delta = (params.u_reset - u) * _slope(u - params.threshold, params.alpha) + 1.0 - fired
    return params.beta * delta if scaled else delta


def delta_soft(u, params: NeuronConstants = DEFAULTS, scaled: bool = False):
    """Reset derivative for the soft rule: 1 - threshold * h'(u - threshold)."""
    u = np.asarray(u, dtype=np.float64)
    delta = 1.0 - params.threshold * _slope(u - params.threshold, params.alpha)
    return params.beta * delta if scaled else delta


def f_factor(x):
    """Scaled factor on the spiking branch under default constants."""
    x = np.asarray(x, dtype=np.float64)
    return -0.5 * x / (1.0 + math.pi**2 * (x - 1.0) ** 2)


def g_factor(x):
    """Scaled factor on the silent branch; identically f + 1/2."""
    return f_factor(x) + 0.5


def p_factor(x):
    """Scaled factor under the soft reset; lies in [0, 1/2) everywhere."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 - 1.0 / (1.0 + math.pi**2 * (x - 1.0) ** 2))


@dataclass
class Extrema:
    max_value: float
    max_location: float
    min_value: float
    min_location: float


def grid_extrema(fn, lo: float = -10.0, hi: float = 10.0, step: float = 1e-4) -> Extrema:
    """Dense-grid extrema augmented with the analytic critical points."""
    xs = np.arange(lo, hi + step, step)
    xs = np.concatenate([xs, [-EXTREMUM_X, EXTREMUM_X]])
    ys = fn(xs)
    i_max, i_min = int(np.argmax(ys)), int(np.argmin(ys))
    return Extrema(max_value=float(ys[i_max]), max_location=float(xs[i_max]),
                   min_value=float(ys[i_min]), min_location=float(xs[i_min]))


def verify_factor_bounds(n_samples: int = 100_000, seed: int = 0,
                         tol: float = 1e-3) -> dict[str, float]:
    """Grid plus sampled check of every bound the decay argument relies on.

    Raises :class:`VerificationError` on the first violated bound; returns the
    measured extrema when everything holds.
    """
    ext_f = grid_extrema(f_factor)
    ext_g = grid_extrema(g_factor)
    checks = [
        ("max f", ext_f.max_value, F_MAX), ("min f", ext_f.min_value, F_MIN),
        ("max g", ext_g.max_value, G_MAX), ("min g", ext_g.min_value, G_MIN),
    ]
    for name, got, want in checks:
        if abs(got - want) > tol:
            raise VerificationError(f"{name} = {got:.6f}, expected {want} within {tol}")
    for name, got in [("argmax f", ext_f.max_location), ("argmin g", ext_g.min_location)]:
        if abs(abs(got) - EXTREMUM_X) > 1e-3:
            raise VerificationError(f"{name} at {got:.6f}, expected +-{EXTREMUM_X:.6f}")
    if abs(ext_f.min_location - EXTREMUM_X) > 1e-3:
        raise VerificationError("argmin f is off the analytic critical point")

    rng = np.random.default_rng(seed)
    u = rng.uniform(-20.0, 20.0, n_samples)
    hard = delta_hard(u, scaled=True)
    soft = delta_soft(u, scaled=True)
    if np.abs(hard).max() > HARD_FACTOR_BOUND + 1e-9:
        raise VerificationError(f"|beta delta| reached {np.abs(hard).max():.6f} (hard reset)")
    if soft.min() < 0.0 or soft.max() >= 0.5:
        raise VerificationError("soft-reset factor left [0, 0.5)")
    # the two branch functions agree with the piecewise reset derivative
    spiking = u >= 1.0
    if not np.allclose(hard[spiking], f_factor(u[spiking]), atol=1e-12):
        raise VerificationError("spiking branch disagrees with f")
    if not np.allclose(hard[~spiking], g_factor(u[~spiking]), atol=1e-12):
        raise VerificationError("silent branch disagrees with g")
    if not np.allclose(soft, p_factor(u), atol=1e-12):
        raise VerificationError("soft factor disagrees with p")
    return {"f_max": ext_f.max_value, "f_min": ext_f.min_value,
            "g_max": ext_g.max_value, "g_min": ext_g.min_value,
            "hard_abs_max": float(np.abs(hard).max()),
            "soft_max": float(soft.max())}


def product_decay(us, mode: str, params: NeuronConstants = DEFAULTS) -> float:
    """Product of the per-step factors beta * delta(u_t) along a potential sequence."""
    us = np.asarray(us, dtype=np.float64)
    if us.size == 0:
        raise ValueError("product_decay needs a nonempty sequence")
    if mode == "hard":
        factors = delta_hard(us, params, scaled=True)
    elif mode == "soft":
        factors = delta_soft(us, params, scaled=True)
    else:
        raise ValueError(f"mode must be 'hard' or 'soft', got {mode!r}")
    return float(np.prod(factors))


# -- closed-form gradient oracle ---------------------------------------------


@dataclass
class GradOracleResult:
    oracle: np.ndarray
    tape: np.ndarray
    max_rel_error: float


def closed_form_gradient(W: np.ndarray, b: np.ndarray, inputs: np.ndarray,
                         params: NeuronConstants = DEFAULTS,
                         check: bool = True, tol: float = 1e-6) -> GradOracleResult:
    """d(sum u_T)/dW for one LIF layer, by direct recursion versus tape BPTT.

    The recursion G_t = (1-beta) dc_t/dW + beta delta_{t-1} G_{t-1} is
    evaluated with an independent plain-numpy forward; u_0 is the zero
    initial state so the pure-history term vanishes exactly. Neuron j's
    potential depends only on column j of W, making d(sum u_T)/dW_ij equal
    to d(u_T[j])/dW_ij.
    """
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).reshape(1, -1)
    inputs = np.asarray(inputs, dtype=np.float64)
    T = inputs.shape[0]
    if T > 16:
        raise ValueError("oracle supports T <= 16")
    beta, th = params.beta, params.threshold

    u_hat = np.zeros((1, W.shape[1]))
    grad = np.zeros_like(W)  # zero initial state kills the pure-history term
    delta_prev = np.ones(W.shape[1])
    for t in range(T):
        x = inputs[t].reshape(1, -1)
        c = x @ W + b
        u = beta * u_hat + (1.0 - beta) * c
        fired = (u >= th).astype(np.float64)
        u_hat = params.u_reset * fired + (1.0 - fired) * u
        dc = np.outer(x, np.ones(W.shape[1]))  # dc_t[j]/dW[i,j] = x_t[i]
        grad = (1.0 - beta) * dc + (beta * delta_prev) * grad
        delta_prev = delta_hard(u, params)[0]

    lif = LifParams(W=Tensor(W, requires_grad=True), b=Tensor(b),
                    beta=beta, threshold=th, alpha=params.alpha, u_reset=params.u_reset)
    state = NeuronState.zeros(1, W.shape[1])
    with Tape() as tape:
        for t in range(T):
            _, state = lif_step(state, Tensor(inputs[t].reshape(1, -1)), lif)
        tape.backward(state.u.sum())
    tape_grad = lif.W.grad

    diff = np.abs(grad - tape_grad)
    denom = np.maximum(np.maximum(np.abs(grad), np.abs(tape_grad)), 1e-12)
    rel = float(np.where(diff < 1e-12, 0.0, diff / denom).max())
    if check and rel > tol:
        raise VerificationError(f"oracle vs tape gradient diverged: rel err {rel:.3e}")
    return GradOracleResult(oracle=grad, tape=tape_grad, max_rel_error=rel)


def current_term_dominance(W: np.ndarray, b: np.ndarray, inputs: np.ndarray,
                           params: NeuronConstants = DEFAULTS) -> float:
    """Norm ratio of the newest current term to the oldest surviving history term.

    In the unrolled gradient the step-t contribution is attenuated by
    prod beta*delta over the steps since t; the ratio grows with sequence
    length, which is the quantitative content of the decay theorem.
    """
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).reshape(1, -1)
    inputs = np.asarray(inputs, dtype=np.float64)
    beta, th = params.beta, params.threshold
    T = inputs.shape[0]
    u_hat = np.zeros((1, W.shape[1]))
    deltas = []
    for t in range(T):
        c = inputs[t].reshape(1, -1) @ W + b
        u = beta * u_hat + (1.0 - beta) * c
        fired = (u >= th).astype(np.float64)
        u_hat = params.u_reset * fired + (1.0 - fired) * u
        deltas.append(delta_hard(u, params)[0])
    newest = (1.0 - beta) * np.linalg.norm(np.outer(inputs[-1], np.ones(W.shape[1])))
    attenuation = beta ** (T - 1) * np.prod(np.stack(deltas[:-1]), axis=0) \
        if T > 1 else np.ones(W.shape[1])
    oldest = (1.0 - beta) * np.linalg.norm(np.outer(inputs[0], np.ones(W.shape[1])) * attenuation)
    return float(newest / max(oldest, 1e-300))


# -- distribution capture ------------------------------------------------------


@dataclass
class DeltaTrace:
    """Per-timestep membrane potentials and scaled reset factors."""

    potentials: list[np.ndarray] = field(default_factory=list)
    beta_delta: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.potentials)

    def abs_factor_max(self) -> float:
        if not self.beta_delta:
            return 0.0
        return float(max(np.abs(v).max() for v in self.beta_delta))

    def potential_mode(self, bins: int = 81, span: float = 4.0) -> float:
        """Midpoint of the most populated potential bin across all steps."""
        values = np.concatenate([v.ravel() for v in self.potentials])
        counts, edges = np.histogram(values, bins=bins, range=(-span, span))
        i = int(np.argmax(counts))
        return float(0.5 * (edges[i] + edges[i + 1]))

    def write_histograms(self, path, bins: int = 61, span: float = 3.0) -> None:
        """CSV rows: timestep,bin_lo,bin_hi,count,quantity in {u, beta_delta}."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["timestep", "bin_lo", "bin_hi", "count", "quantity"])
            for name, series in [("u", self.potentials), ("beta_delta", self.beta_delta)]:
                for t, values in enumerate(series):
                    counts, edges = np.histogram(values.ravel(), bins=bins,
                                                 range=(-span, span))
                    for k in range(bins):
                        if counts[k]:
                            writer.writerow([t, f"{edges[k]:.6f}", f"{edges[k + 1]:.6f}",
                                             int(counts[k]), name])


def capture_distributions(policy, env, n_episodes: int, seed: int,
                          params: NeuronConstants | None = None) -> DeltaTrace:
    """Roll an instrumented spiking policy and bin u_t and beta*delta_t per step.

    The scaled factor uses the reset rule of the policy's cell: soft for the
    gated cell (with its current learnable decay), hard otherwise.
    """
    from .network import CellRecorder, GrsnCell

    if not policy.cell.spiking:
        raise ValueError("distribution capture instruments spiking cells only")
    soft = isinstance(policy.cell, GrsnCell)
    if params is None:
        if soft:
            params = NeuronConstants(beta=policy.cell.params.beta(),
                                     threshold=policy.cell.params.threshold,
                                     alpha=policy.cell.params.alpha)
        else:
            p = policy.cell.params
            params = NeuronConstants(beta=p.beta, threshold=p.threshold,
                                     alpha=p.alpha, u_reset=p.u_reset)

    per_step_u: list[list[np.ndarray]] = []
    rng = np.random.default_rng(seed)
    for ep in range(n_episodes):
        recorder = CellRecorder()
        policy.recorder = recorder
        obs = env.reset(seed=int(rng.integers(2**31)))
        state = policy.initial_state(1)
        prev_action = np.zeros(policy.spec.act_dim)
        prev_reward = 0.0
        done = False
        while not done:
            action, state = policy.act(obs, prev_action, prev_reward, state,
                                        deterministic=False, rng=rng)
            obs, reward, done = env.step(action)
            if policy.spec.discrete:
                prev_action = np.eye(policy.spec.act_dim)[action]
            else:
                prev_action = np.asarray(action).reshape(-1)
            prev_reward = reward
        policy.recorder = None
        for t, u in enumerate(recorder.potentials):
            if t >= len(per_step_u):
                per_step_u.append([])
            per_step_u[t].append(u.ravel())

    trace = DeltaTrace()
    fn = delta_soft if soft else delta_hard
    for step_values in per_step_u:
        u = np.concatenate(step_values)
        trace.potentials.append(u)
        trace.beta_delta.append(fn(u, params, scaled=True))
    return trace
