"""Recurrent off-policy trainers: discrete soft actor-critic and TD3.

Both unroll actor and critics over sampled subsequences from a zero initial
hidden state, mask padded steps out of every loss, and keep target networks
fresh with polyak averaging. Updates run on the time-flattened network path;
rows are time-major, so positions t and t+1 are contiguous row blocks and the
bootstrap shift is a row slice. Cross-terms between the actor, critic and
temperature objectives are blocked by detaching, never by luck.
"""

from __future__ import annotations

import math

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..network import FlatInputs, PolicySpec, StepInput, TapPolicy
from ..optim import Adam
from .buffer import SequenceBatch


def polyak_update(target: TapPolicy, online: TapPolicy, tau: float) -> None:
    """theta_target <- (1 - tau) * theta_target + tau * theta_online."""
    for (_, t), (_, s) in zip(target.named_parameters(), online.named_parameters()):
        t.data *= 1.0 - tau
        t.data += tau * s.data


def make_steps(batch: SequenceBatch) -> list[StepInput]:
    """Per-position inputs (length L+1) for the step-by-step reference path."""
    return [StepInput(obs=Tensor(batch.obs[t]),
                      prev_action=Tensor(batch.prev_action_enc[t]),
                      prev_reward=Tensor(batch.prev_reward[t]))
            for t in range(batch.seq_len + 1)]


def make_flat(batch: SequenceBatch) -> FlatInputs:
    return FlatInputs.from_arrays(batch.obs, batch.prev_action_enc, batch.prev_reward)


class NanLossError(ArithmeticError):
    """A training loss became non-finite; the update was aborted."""


class DiscreteSacTrainer:
    """Soft actor-critic with a categorical actor and exact-expectation targets."""

    def __init__(self, obs_dim: int, n_actions: int, cfg, rng: np.random.Generator,
                 cell_kind: str = "grsn", aligned: bool = True, t_inner: int = 4):
        common = dict(obs_dim=obs_dim, act_dim=n_actions, discrete=True,
                      cell_kind=cell_kind, aligned=aligned, t_inner=t_inner)
        self.actor = TapPolicy(PolicySpec(head="actor", **common), rng)
        self.q1 = TapPolicy(PolicySpec(head="critic", **common), rng)
        self.q2 = TapPolicy(PolicySpec(head="critic", **common), rng)
        self.q1_targ = self.q1.clone()
        self.q2_targ = self.q2.clone()
        self.log_alpha = Tensor([[0.0]], requires_grad=True)
        self.target_entropy = cfg.target_entropy_scale * math.log(n_actions)
        self.gamma = cfg.gamma
        self.tau = cfg.tau
        self.actor_opt = Adam(self.actor.parameters(), lr=cfg.lr)
        self.critic_opt = Adam(self.q1.parameters() + self.q2.parameters(), lr=cfg.lr)
        self.alpha_opt = Adam([self.log_alpha], lr=cfg.lr)
        self.n_actions = n_actions

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.data[0, 0]))

    def networks(self) -> dict[str, TapPolicy]:
        return {"actor": self.actor, "q1": self.q1, "q2": self.q2}

    def explore(self, obs, prev_action, prev_reward, state, rng):
        return self.actor.act(obs, prev_action, prev_reward, state,
                              deterministic=False, rng=rng)

    def update(self, batch: SequenceBatch) -> dict[str, float]:
        L, B = batch.seq_len, batch.batch_size
        flat = make_flat(batch)
        cur = slice(0, L * B)          # positions 0..L-1
        nxt = slice(B, (L + 1) * B)    # positions 1..L
        mask_flat = batch.mask.reshape(L * B, 1)
        mask_total = float(mask_flat.sum())
        alpha = self.alpha

        with ad.no_grad():
            q1n = self.q1_targ.decode_flat(self.q1_targ.unroll_flat(flat)[0], flat.obs)
            q2n = self.q2_targ.decode_flat(self.q2_targ.unroll_flat(flat)[0], flat.obs)

        with ad.Tape() as tape:
            logits = self.actor.decode_flat(self.actor.unroll_flat(flat)[0], flat.obs)
            logp = logits.log_softmax()
            probs = logp.exp()

            # soft bootstrap target from the next position, fully detached
            p_next = probs.data[nxt]
            lp_next = logp.data[nxt]
            q_next = np.minimum(q1n.data, q2n.data)[nxt]
            v_next = (p_next * (q_next - alpha * lp_next)).sum(axis=1).reshape(L, B)
            y = (batch.reward + self.gamma * (1.0 - batch.done) * v_next).reshape(L * B, 1)

            q1_all = self.q1.decode_flat(self.q1.unroll_flat(flat)[0], flat.obs)
            q2_all = self.q2.decode_flat(self.q2.unroll_flat(flat)[0], flat.obs)
            actions = batch.action_index.reshape(L * B)
            y_t = Tensor(y)
            mask_col = Tensor(mask_flat)
            d1 = ad.sub(ad.rows(q1_all, 0, L * B).gather(actions), y_t)
            d2 = ad.sub(ad.rows(q2_all, 0, L * B).gather(actions), y_t)
            critic_loss = ad.scale(
                ad.mul(ad.add(ad.mul(d1, d1), ad.mul(d2, d2)), mask_col).sum(),
                1.0 / mask_total)

            probs_cur = ad.rows(probs, 0, L * B)
            logp_cur = ad.rows(logp, 0, L * B)
            q_min_cur = np.minimum(q1_all.data, q2_all.data)[cur]
            inside = ad.sub(ad.scale(logp_cur, alpha), Tensor(q_min_cur))
            mask_full = Tensor(np.repeat(mask_flat, self.n_actions, axis=1))
            actor_loss = ad.scale(
                ad.mul(ad.mul(probs_cur, inside), mask_full).sum(), 1.0 / mask_total)

            entropy = -(probs.data[cur] * logp.data[cur]).sum(axis=1, keepdims=True)
            entropy_gap = float((mask_flat * (entropy - self.target_entropy)).sum())
            alpha_loss = ad.scale(self.log_alpha, entropy_gap / mask_total)

            total = ad.add(ad.add(critic_loss, actor_loss), alpha_loss)
            if not np.isfinite(total.data).all():
                raise NanLossError(
                    f"critic={critic_loss.item():.4g} actor={actor_loss.item():.4g} "
                    f"alpha={self.alpha:.4g}")
            tape.backward(total)

        self.critic_opt.step()
        self.actor_opt.step()
        self.alpha_opt.step()
        for opt in (self.critic_opt, self.actor_opt, self.alpha_opt):
            opt.zero_grad()
        polyak_update(self.q1_targ, self.q1, self.tau)
        polyak_update(self.q2_targ, self.q2, self.tau)
        return {"critic_loss": critic_loss.item(), "actor_loss": actor_loss.item(),
                "alpha": self.alpha}


class Td3Trainer:
    """Twin delayed DDPG with recurrent actor/critics and smoothed targets."""

    def __init__(self, obs_dim: int, act_dim: int, max_action: float, cfg,
                 rng: np.random.Generator, cell_kind: str = "grsn",
                 aligned: bool = True, t_inner: int = 4):
        common = dict(obs_dim=obs_dim, act_dim=act_dim, discrete=False,
                      cell_kind=cell_kind, aligned=aligned, t_inner=t_inner,
                      max_action=max_action)
        self.actor = TapPolicy(PolicySpec(head="actor", **common), rng)
        self.q1 = TapPolicy(PolicySpec(head="critic", **common), rng)
        self.q2 = TapPolicy(PolicySpec(head="critic", **common), rng)
        self.actor_targ = self.actor.clone()
        self.q1_targ = self.q1.clone()
        self.q2_targ = self.q2.clone()
        self.max_action = max_action
        self.gamma = cfg.gamma
        self.tau = cfg.tau
        self.policy_delay = cfg.policy_delay
        self.target_noise = cfg.target_noise * max_action
        self.noise_clip = cfg.noise_clip * max_action
        self.explore_noise = cfg.explore_noise * max_action
        self.actor_opt = Adam(self.actor.parameters(), lr=cfg.lr)
        self.critic_opt = Adam(self.q1.parameters() + self.q2.parameters(), lr=cfg.lr)
        self._updates = 0

    def networks(self) -> dict[str, TapPolicy]:
        return {"actor": self.actor, "q1": self.q1, "q2": self.q2}

    def explore(self, obs, prev_action, prev_reward, state, rng):
        action, state = self.actor.act(obs, prev_action, prev_reward, state,
                                       deterministic=True)
        noisy = action + rng.normal(0.0, self.explore_noise, size=action.shape)
        return np.clip(noisy, -self.max_action, self.max_action), state

    def update(self, batch: SequenceBatch, rng: np.random.Generator) -> dict[str, float]:
        L, B = batch.seq_len, batch.batch_size
        flat = make_flat(batch)
        nxt = slice(B, (L + 1) * B)
        mask_flat = batch.mask.reshape(L * B, 1)
        mask_total = float(mask_flat.sum())
        obs_cur = Tensor(batch.obs[:L].reshape(L * B, -1))
        act_cur = Tensor(batch.action_enc.reshape(L * B, -1))

        with ad.no_grad():
            a_targ = self.actor_targ.decode_flat(self.actor_targ.unroll_flat(flat)[0],
                                                 flat.obs)
            noise = np.clip(rng.normal(0.0, self.target_noise, size=a_targ.data.shape),
                            -self.noise_clip, self.noise_clip)
            smoothed = Tensor(np.clip(a_targ.data + noise,
                                      -self.max_action, self.max_action))
            q1n = self.q1_targ.decode_flat(self.q1_targ.unroll_flat(flat)[0],
                                           flat.obs, smoothed)
            q2n = self.q2_targ.decode_flat(self.q2_targ.unroll_flat(flat)[0],
                                           flat.obs, smoothed)
            q_next = np.minimum(q1n.data, q2n.data)[nxt].reshape(L, B)
            y = (batch.reward + self.gamma * (1.0 - batch.done) * q_next).reshape(L * B, 1)

        with ad.Tape() as tape:
            q1_feat, _ = self.q1.unroll_flat(flat)
            q2_feat, _ = self.q2.unroll_flat(flat)
            q1_out = self.q1.decode_flat(ad.rows(q1_feat, 0, L * B), obs_cur, act_cur)
            q2_out = self.q2.decode_flat(ad.rows(q2_feat, 0, L * B), obs_cur, act_cur)
            y_t = Tensor(y)
            mask_col = Tensor(mask_flat)
            d1 = ad.sub(q1_out, y_t)
            d2 = ad.sub(q2_out, y_t)
            critic_loss = ad.scale(
                ad.mul(ad.add(ad.mul(d1, d1), ad.mul(d2, d2)), mask_col).sum(),
                1.0 / mask_total)
            if not np.isfinite(critic_loss.data).all():
                raise NanLossError(f"critic loss non-finite at update {self._updates}")
            tape.backward(critic_loss)
        self.critic_opt.step()
        self.critic_opt.zero_grad()

        stats = {"critic_loss": critic_loss.item()}
        self._updates += 1
        if self._updates % self.policy_delay == 0:
            with ad.no_grad():
                feats_const = ad.rows(self.q1.unroll_flat(flat)[0], 0, L * B)
            with ad.Tape() as tape:
                a_pi = self.actor.decode_flat(self.actor.unroll_flat(flat)[0], flat.obs)
                q_pi = self.q1.decode_flat(feats_const, obs_cur, ad.rows(a_pi, 0, L * B))
                actor_loss = ad.scale(ad.mul(q_pi, Tensor(mask_flat)).sum(),
                                      -1.0 / mask_total)
                if not np.isfinite(actor_loss.data).all():
                    raise NanLossError(f"actor loss non-finite at update {self._updates}")
                tape.backward(actor_loss)
            self.actor_opt.step()
            self.actor_opt.zero_grad()
            # discard critic gradients picked up through the decode path
            self.critic_opt.zero_grad()
            polyak_update(self.actor_targ, self.actor, self.tau)
            polyak_update(self.q1_targ, self.q1, self.tau)
            polyak_update(self.q2_targ, self.q2, self.tau)
            stats["actor_loss"] = actor_loss.item()
        return stats
