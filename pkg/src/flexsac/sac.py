"""Soft Actor-Critic with a fixed entropy temperature, built on :mod:`flexsac.nn`.

The policy network outputs ``[mean, log_std]`` of a Gaussian over the
pre-squash action; actions live in (0, 1). Two soft Q-networks (input:
observation concatenated with the action) and their Polyak-averaged targets
implement clipped double-Q learning.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DeploymentMode, HyperParams, seeded_rng
from .nn import (LOG_STD_MAX, LOG_STD_MIN, AdamState, CheckpointError, Mlp, NonFiniteError,
                 ShapeError, adam_step, log_squash_jacobian, read_container,
                 sample_squashed_gaussian, squash, write_container)

POLICY_OUT_SCALE = 0.01
MAX_CONSECUTIVE_NONFINITE = 3


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Transition:
    state: np.ndarray
    action: float
    reward: float
    next_state: np.ndarray
    done: bool


@dataclass
class LossReport:
    step: int
    q1_loss: float
    q2_loss: float
    policy_loss: float
    entropy: float


class ReplayBuffer:
    """FIFO ring of transitions with uniform minibatch sampling (no replacement).

    Storage grows geometrically up to ``capacity`` so a 2e6-slot buffer only
    allocates what a run actually fills.
    """

    def __init__(self, capacity: int, obs_dim: int, rng: np.random.Generator):
        self.capacity = int(capacity)
        self.obs_dim = int(obs_dim)
        self.rng = rng
        self._alloc(min(self.capacity, 1024))
        self.cursor = 0
        self.size = 0

    def _alloc(self, n: int) -> None:
        old = getattr(self, "s", None)
        s, s2 = np.zeros((n, self.obs_dim)), np.zeros((n, self.obs_dim))
        a, r, d = np.zeros(n), np.zeros(n), np.zeros(n)
        if old is not None:
            m = self.size
            s[:m], s2[:m], a[:m], r[:m], d[:m] = (self.s[:m], self.s2[:m], self.a[:m],
                                                  self.r[:m], self.d[:m])
        self.s, self.s2, self.a, self.r, self.d = s, s2, a, r, d

    def __len__(self) -> int:
        return self.size

    def add(self, t: Transition) -> None:
        if np.shape(t.state) != (self.obs_dim,) or np.shape(t.next_state) != (self.obs_dim,):
            raise ShapeError(f"transition states must have length {self.obs_dim}")
        if self.cursor == len(self.a) and len(self.a) < self.capacity:
            self._alloc(min(self.capacity, 2 * len(self.a)))
        i = self.cursor
        self.s[i], self.s2[i] = t.state, t.next_state
        self.a[i], self.r[i], self.d[i] = t.action, t.reward, float(t.done)
        self.cursor = (i + 1) % self.capacity if i + 1 >= self.capacity else i + 1
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, n: int) -> np.ndarray:
        if n > self.size:
            raise ValueError(f"cannot draw {n} distinct samples from {self.size} transitions")
        return self.rng.choice(self.size, size=n, replace=False)

    def sample(self, n: int):
        idx = self.sample_indices(n)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.d[idx]

    def oldest_first(self) -> np.ndarray:
        """Slot indices ordered from oldest to newest entry."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self.cursor) % self.capacity


def polyak_update(target: Mlp, online: Mlp, tau: float) -> None:
    target.params[:] = tau * online.params + (1.0 - tau) * target.params


class SacAgent:
    def __init__(self, obs_dim: int, hyperparams: HyperParams | None = None,
                 state_space_set: int | None = None, activation: str = "relu"):
        hp = hyperparams or HyperParams()
        hp.validate()
        self.hp = hp
        self.obs_dim = int(obs_dim)
        self.state_space_set = state_space_set
        h = hp.hidden_size
        init_rng = seeded_rng(hp.seed, "init")
        dt = hp.network_dtype
        self.policy = Mlp((obs_dim, h, h, 2), init_rng, activation, POLICY_OUT_SCALE, dt)
        self.policy.layers[-1][1][1] = hp.init_log_std
        self.q1 = Mlp((obs_dim + 1, h, h, 1), init_rng, activation, dtype=dt)
        self.q2 = Mlp((obs_dim + 1, h, h, 1), init_rng, activation, dtype=dt)
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.opt_policy = AdamState.zeros_like(self.policy.params)
        self.opt_q1 = AdamState.zeros_like(self.q1.params)
        self.opt_q2 = AdamState.zeros_like(self.q2.params)
        self.rng_act = seeded_rng(hp.seed, "policy")
        self.rng_update = seeded_rng(hp.seed, "update")
        self.rng_warmup = seeded_rng(hp.seed, "warmup")
        self.buffer = ReplayBuffer(hp.buffer_capacity, obs_dim, seeded_rng(hp.seed, "buffer"))
        self.env_step_counter = 0
        self.transitions_seen = 0
        self.updates_done = 0
        self.nonfinite_updates = 0
        self._consecutive_nonfinite = 0
        self.loss_log: list[LossReport] = []

    # -- acting -------------------------------------------------------------------------------

    @property
    def in_warmup(self) -> bool:
        return self.transitions_seen < self.hp.warmup_random_control_steps

    def _check_obs(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=float)
        if obs.shape[-1] != self.obs_dim:
            raise ShapeError(f"agent expects observations of length {self.obs_dim}, "
                             f"got {obs.shape[-1]}")
        return obs

    def select_action(self, obs, mode: DeploymentMode | str = DeploymentMode.STOCHASTIC) -> float:
        obs = self._check_obs(obs)
        mode = DeploymentMode(mode)
        if mode is DeploymentMode.DETERMINISTIC:
            raw = self.policy.forward(obs, keep_cache=False)
            return float(np.clip(squash(raw[0]), 0.0, 1.0))
        if self.in_warmup:
            return float(self.rng_warmup.uniform(0.0, 1.0))
        raw = self.policy.forward(obs, keep_cache=False)
        out = sample_squashed_gaussian(raw[0], raw[1], self.rng_act)
        return float(out.sampled_action)

    # -- learning -----------------------------------------------------------------------------

    def observe(self, transition: Transition, sim_steps: int = 1) -> list[LossReport]:
        """Store a transition; run updates for every interval boundary crossed."""
        self._check_obs(transition.state)
        self.buffer.add(transition)
        self.transitions_seen += 1
        before = self.env_step_counter
        self.env_step_counter += int(sim_steps)
        interval = self.hp.update_interval_sim_steps
        triggers = self.env_step_counter // interval - before // interval
        reports = []
        if triggers and len(self.buffer) >= self.hp.minibatch_size:
            for _ in range(triggers * self.hp.gradient_steps_per_update):
                rep = self.update()
                if rep is not None:
                    reports.append(rep)
        return reports

    def _networks(self):
        return (self.policy, self.q1, self.q2, self.q1_target, self.q2_target)

    def _optimizers(self):
        return (self.opt_policy, self.opt_q1, self.opt_q2)

    def update(self) -> LossReport | None:
        """One SAC gradient step. Returns None (and restores weights) on non-finite values."""
        if len(self.buffer) < self.hp.minibatch_size:
            raise ValueError("replay buffer holds fewer transitions than one minibatch")
        snapshot = [n.params.copy() for n in self._networks()]
        opt_snapshot = [dataclasses.replace(o, m=o.m.copy(), v=o.v.copy())
                        for o in self._optimizers()]
        try:
            with np.errstate(over="raise", invalid="raise"):
                report = self._update()
            if not all(np.isfinite([report.q1_loss, report.q2_loss, report.policy_loss])):
                raise NonFiniteError("non-finite loss")
        except (NonFiniteError, FloatingPointError):
            for net, saved in zip(self._networks(), snapshot):
                net.params[:] = saved
            self.opt_policy, self.opt_q1, self.opt_q2 = opt_snapshot
            self.nonfinite_updates += 1
            self._consecutive_nonfinite += 1
            if self._consecutive_nonfinite >= MAX_CONSECUTIVE_NONFINITE:
                raise TrainingDiverged(
                    f"{self._consecutive_nonfinite} consecutive non-finite updates "
                    f"(after {self.updates_done} good updates)") from None
            return None
        self._consecutive_nonfinite = 0
        self.updates_done += 1
        self.loss_log.append(report)
        return report

    def _update(self) -> LossReport:
        hp = self.hp
        s, a, r, s2, d = self.buffer.sample(hp.minibatch_size)
        n = len(r)

        y = self.soft_target(r, s2, d, self.rng_update)

        sa = np.concatenate([s, a[:, None]], axis=1)
        q_losses = []
        for net, opt in ((self.q1, self.opt_q1), (self.q2, self.opt_q2)):
            err = net.forward(sa)[:, 0] - y
            q_losses.append(float(np.mean(err ** 2)))
            grad, _ = net.backward((2.0 / n) * err[:, None])
            adam_step(net.params, grad, opt, hp.learning_rate)

        policy_loss, entropy = self._policy_step(s)

        polyak_update(self.q1_target, self.q1, hp.tau)
        polyak_update(self.q2_target, self.q2, hp.tau)
        return LossReport(self.updates_done + 1, q_losses[0], q_losses[1], policy_loss, entropy)

    def soft_target(self, r, s2, d, rng: np.random.Generator) -> np.ndarray:
        """``r + gamma (1 - d) (min_i Q_targ_i(s', a') - alpha log pi(a'|s'))``, a' ~ pi(.|s')."""
        hp = self.hp
        raw2 = self.policy.forward(s2, keep_cache=False)
        nxt = sample_squashed_gaussian(raw2[:, 0], raw2[:, 1], rng)
        sa2 = np.concatenate([s2, nxt.sampled_action[:, None]], axis=1)
        q_next = np.minimum(self.q1_target.forward(sa2, keep_cache=False)[:, 0],
                            self.q2_target.forward(sa2, keep_cache=False)[:, 0])
        bootstrap = np.where(d > 0, 0.0, hp.gamma * (q_next - hp.alpha * nxt.log_prob))
        return r + bootstrap

    def _policy_step(self, s: np.ndarray) -> tuple[float, float]:
        loss, entropy, grad = self.policy_gradient(s, self.rng_update)
        adam_step(self.policy.params, grad, self.opt_policy, self.hp.learning_rate)
        return loss, entropy

    def policy_gradient(self, s: np.ndarray, rng: np.random.Generator):
        """Loss mean(alpha * log pi(a|s) - min_i Q_i(s, a)) and its gradient, a reparameterized."""
        hp = self.hp
        n = s.shape[0]
        raw = self.policy.forward(s)
        raw_ls = raw[:, 1]
        out = sample_squashed_gaussian(raw[:, 0], raw_ls, rng)
        sa = np.concatenate([s, out.sampled_action[:, None]], axis=1)
        q1 = self.q1.forward(sa)[:, 0]
        q2 = self.q2.forward(sa)[:, 0]
        use1 = q1 <= q2
        q_min = np.where(use1, q1, q2)
        _, gin1 = self.q1.backward(use1.astype(float)[:, None])
        _, gin2 = self.q2.backward((~use1).astype(float)[:, None])
        dq_da = gin1[:, -1] + gin2[:, -1]

        u, eps = out.pre_squash, out.noise
        sigma = np.exp(out.log_std)
        da_du = np.exp(log_squash_jacobian(u))
        dlogp_du = 2.0 * np.tanh(u)
        d_mean = hp.alpha * dlogp_du - dq_da * da_du
        d_ls = hp.alpha * (-1.0 + dlogp_du * sigma * eps) - dq_da * da_du * sigma * eps
        d_ls = d_ls * ((raw_ls >= LOG_STD_MIN) & (raw_ls <= LOG_STD_MAX))
        grad_out = np.stack([d_mean, d_ls], axis=1) / n
        grad, _ = self.policy.backward(grad_out)
        loss = float(np.mean(hp.alpha * out.log_prob - q_min))
        return loss, float(-np.mean(out.log_prob)), grad

    # -- persistence --------------------------------------------------------------------------

    def save_checkpoint(self, path: str | Path) -> None:
        header = {
            "kind": "sac_agent",
            "hyperparams": dataclasses.asdict(self.hp),
            "obs_dim": self.obs_dim,
            "state_space_set": self.state_space_set,
            "activation": self.policy.activation,
            "counters": {"env_step_counter": self.env_step_counter,
                         "transitions_seen": self.transitions_seen,
                         "updates_done": self.updates_done,
                         "nonfinite_updates": self.nonfinite_updates},
            "adam": {name: {"t": o.t, "beta1": o.beta1, "beta2": o.beta2, "eps": o.eps}
                     for name, o in zip(("policy", "q1", "q2"), self._optimizers())},
            "rng": {name: g.bit_generator.state for name, g in self._rngs().items()},
        }
        arrays = [(name, net.params) for name, net in zip(_NET_NAMES, self._networks())]
        for name, o in zip(("policy", "q1", "q2"), self._optimizers()):
            arrays += [(f"adam_{name}_m", o.m), (f"adam_{name}_v", o.v)]
        write_container(path, header, arrays)

    def _rngs(self) -> dict:
        return {"act": self.rng_act, "update": self.rng_update, "warmup": self.rng_warmup,
                "buffer": self.buffer.rng}

    @classmethod
    def load_checkpoint(cls, path: str | Path) -> "SacAgent":
        header, arrays = read_container(path)
        if header.get("kind") != "sac_agent":
            raise CheckpointError(f"{path}: not an agent checkpoint")
        try:
            hp = HyperParams(**header["hyperparams"])
            agent = cls(header["obs_dim"], hp, header["state_space_set"], header["activation"])
            for name, net in zip(_NET_NAMES, agent._networks()):
                if arrays[name].size != net.n_params:
                    raise CheckpointError(f"{path}: {name} parameter count mismatch")
                net.params[:] = arrays[name]
            for name, o in zip(("policy", "q1", "q2"), agent._optimizers()):
                meta = header["adam"][name]
                o.m[:], o.v[:] = arrays[f"adam_{name}_m"], arrays[f"adam_{name}_v"]
                o.t, o.beta1, o.beta2, o.eps = meta["t"], meta["beta1"], meta["beta2"], meta["eps"]
            for key, value in header["counters"].items():
                setattr(agent, key, value)
            for name, g in agent._rngs().items():
                g.bit_generator.state = header["rng"][name]
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, CheckpointError):
                raise
            raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
        return agent


_NET_NAMES = ("policy", "q1", "q2", "q1_target", "q2_target")
