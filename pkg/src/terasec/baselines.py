"""Benchmark policies: stateless uniform and full-resource heuristics, and a
dense multi-agent actor-critic (private fully-connected actors per acting
satellite, one flat fully-connected critic over all involved satellites).
"""
from __future__ import annotations

import numpy as np

from .agent import (OFFLOAD_FEATURES, OUTCOME_FEATURES, GrantAgent,
                    TrainConfig, bound_logits, encode_state, logit_bias)
from .autodiff import Adam, Dense, Tensor, concat_cols
from .env import ActionBundle, SecWindow


class ReconfigurationError(RuntimeError):
    """The involved set changed mid-window, which fixed-width dense
    networks cannot absorb."""


class UniformPolicy:
    """Uniform offloading (1/5 each way) with each resource budget split
    equally across its used components, zero slack."""

    policy_name = "uniform"

    def __init__(self, env: SecWindow):
        self.env = env
        self.k = env.band_to.n_subbands

    def act(self, snapshot=None) -> ActionBundle:
        n_src = len(self.env.sources)
        n_tx = len(self.env.outcome_transmitters)
        k = self.k
        return ActionBundle(
            offload=np.full((n_src, 5), 0.2),
            to_subarrays=np.full((n_src, 4), 0.25),
            to_power=np.full((n_src, 4, k), 1.0 / (4 * k)),
            ot_subarray=np.ones(n_tx),
            ot_power=np.full((n_tx, k), 1.0 / k))


class FullResourcePolicy:
    """Safe-init operating point: all tasks local, budgets nearly saturated."""

    policy_name = "full"

    def __init__(self, env: SecWindow):
        self.env = env

    def act(self, snapshot=None) -> ActionBundle:
        return self.env.reference_bundle()


def rollout_policy(env: SecWindow, policy, steps: int):
    """Run a stateless policy; history records match the trained agents'."""
    history = []
    for step in range(steps):
        outcome, _, _ = env.step(policy.act(env.snapshot()))
        history.append({"step": step, "outcome": outcome,
                        "critic_loss": 0.0, "q_value": 0.0, "actor_lr": 0.0})
    return history


# -- dense multi-agent actor-critic -------------------------------------------


class _DenseTrunk:
    def __init__(self, rng, d_in, width, name):
        self.fc1 = Dense(rng, d_in, width, f"{name}.fc1")
        self.fc2 = Dense(rng, width, width, f"{name}.fc2")

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.fc1(x).tanh()).tanh()

    def parameters(self):
        return self.fc1.parameters() + self.fc2.parameters()


class _PrivateOffloadActor:
    """One source satellite's dense actor with the shared head layout."""

    def __init__(self, rng, k, width, name):
        self.trunk = _DenseTrunk(rng, OFFLOAD_FEATURES, width, name)
        self.head_offload = Dense(rng, width, 5, f"{name}.head_offload", 0.1)
        self.head_subarray = Dense(rng, width, 5, f"{name}.head_subarray", 0.1)
        self.head_power = Dense(rng, width, 4 * k + 1, f"{name}.head_power", 0.1)

    def forward(self, x: Tensor):
        h = self.trunk(x)
        return (bound_logits(self.head_offload(h)).softmax_rows(),
                bound_logits(self.head_subarray(h)).softmax_rows(),
                bound_logits(self.head_power(h)).softmax_rows())

    def parameters(self):
        return (self.trunk.parameters() + self.head_offload.parameters()
                + self.head_subarray.parameters() + self.head_power.parameters())


class _PrivateOutcomeActor:
    def __init__(self, rng, k, width, name):
        self.trunk = _DenseTrunk(rng, OUTCOME_FEATURES, width, name)
        self.head_subarray = Dense(rng, width, 1, f"{name}.head_subarray", 0.1)
        self.head_power = Dense(rng, width, k + 1, f"{name}.head_power", 0.1)

    def forward(self, x: Tensor):
        h = self.trunk(x)
        return (bound_logits(self.head_subarray(h)).sigmoid(),
                bound_logits(self.head_power(h)).softmax_rows())

    def parameters(self):
        return (self.trunk.parameters() + self.head_subarray.parameters()
                + self.head_power.parameters())


class _FlatCritic:
    """Fully-connected critic over the concatenation of every involved
    satellite's state and action."""

    def __init__(self, rng, d_in, width, name="fc_critic"):
        self.fc1 = Dense(rng, d_in, width, f"{name}.fc1")
        self.fc2 = Dense(rng, width, width, f"{name}.fc2")
        self.out = Dense(rng, width, 1, f"{name}.out")
        self.out.w.data[:] = 0.0

    def forward(self, flat: Tensor) -> Tensor:
        h = self.fc1(flat).tanh()
        h = self.fc2(h).tanh()
        return self.out(h)

    def parameters(self):
        return (self.fc1.parameters() + self.fc2.parameters()
                + self.out.parameters())


class MaddpgFcAgent:
    """Dense multi-agent DDPG: private per-satellite actors, flat critic.

    Same heads, quantizers, safe initialization and exploration as the GCN
    agent, but every acting satellite owns its own dense parameters and the
    critic consumes one flat vector, so the parameter count scales with the
    involved-set size.
    """

    policy_name = "maddpg_fc"

    def __init__(self, env: SecWindow, cfg: TrainConfig,
                 actor_width: int = 128, critic_width: int = 1024):
        self.env = env
        self.cfg = cfg
        self.k = env.band_to.n_subbands
        rng = np.random.default_rng(cfg.seed)
        self.n_nodes = len(env.involved)
        self.actors_to = [
            _PrivateOffloadActor(rng, self.k, actor_width, f"actor_to{i}")
            for i in range(len(env.sources))]
        self.actors_ot = [
            _PrivateOutcomeActor(rng, self.k, actor_width, f"actor_ot{i}")
            for i in range(len(env.outcome_transmitters))]
        d_state = OFFLOAD_FEATURES + OUTCOME_FEATURES
        d_act = (5 + 4 + 4 * self.k) + (1 + self.k)
        self.critic = _FlatCritic(rng, self.n_nodes * (d_state + d_act),
                                  critic_width)
        for a in self.actors_to:
            a.head_offload.b.data[0, 0] = logit_bias(2.0)
            a.head_subarray.b.data[0, -1] = logit_bias(-4.0)
            a.head_power.b.data[0, -1] = logit_bias(-4.0)
        for a in self.actors_ot:
            a.head_subarray.b.data[:] = logit_bias(4.0)
            a.head_power.b.data[0, -1] = logit_bias(-4.0)
        self.actor_params = [p for a in self.actors_to + self.actors_ot
                             for p in a.parameters()]
        self.critic_params = self.critic.parameters()
        self.actor_opt = Adam(self.actor_params, cfg.actor_lr)
        self.critic_opt = Adam(self.critic_params, cfg.critic_lr)
        self.noise_rng = np.random.default_rng(
            np.random.SeedSequence(cfg.seed).spawn(1)[0])
        self.source_rows = [env.node_index[s] for s in env.sources]
        self.tx_rows = [env.node_index[t] for t in env.outcome_transmitters]

    # -- state and actions --------------------------------------------------

    def encode(self, snapshot):
        if len(snapshot.nodes) != self.n_nodes:
            raise ReconfigurationError(
                "involved set changed mid-window; dense networks are "
                "fixed-width")
        c = self.env.c.cfg
        mean = self.env.traffic_cfg.mean_bytes_per_slot
        s_to = encode_state(snapshot, "offloading", c.planes,
                            c.sats_per_plane, mean)
        s_ot = encode_state(snapshot, "outcome", c.planes,
                            c.sats_per_plane, mean)
        return s_to, s_ot

    def actor_tensors(self, s_to, s_ot):
        offload, subarray, power = [], [], []
        for i, row in enumerate(self.source_rows):
            x = Tensor(s_to.features[row:row + 1])
            o, s, p = self.actors_to[i].forward(x)
            offload.append(o)
            subarray.append(s)
            power.append(p)
        ot_sub, ot_power = [], []
        for i, row in enumerate(self.tx_rows):
            x = Tensor(s_ot.features[row:row + 1])
            s, p = self.actors_ot[i].forward(x)
            ot_sub.append(s)
            ot_power.append(p)
        return (_vstack(offload), _vstack(subarray), _vstack(power),
                _vstack(ot_sub), _vstack(ot_power))

    def _ratios_from_tensors(self, tensors):
        return tuple(t.data.copy() for t in tensors)

    def act(self, snapshot, explore: bool = False):
        s_to, s_ot = self.encode(snapshot)
        ratios = self._ratios_from_tensors(self.actor_tensors(s_to, s_ot))
        if explore:
            ratios = self.explore(ratios)
        return self.to_bundle(ratios), ratios, (s_to, s_ot)

    # the exploration, bundle-quantization and TD-update logic is identical
    # to the GCN agent's and keyed only on attributes both classes share
    explore = GrantAgent.explore
    to_bundle = GrantAgent.to_bundle

    def _flat_input(self, s_to, s_ot, act_to, act_ot) -> Tensor:
        feats = concat_cols([Tensor(s_to.features), Tensor(s_ot.features),
                             act_to, act_ot])
        return feats.reshape(1, self.n_nodes * self.critic_in_per_node())

    def critic_in_per_node(self) -> int:
        return (OFFLOAD_FEATURES + OUTCOME_FEATURES
                + (5 + 4 + 4 * self.k) + (1 + self.k))

    def _action_node_tensors(self, tensors, n_nodes):
        offload, subarray, power, ot_sub, ot_power = tensors
        act_to = concat_cols([offload, subarray.slice_cols(0, 4),
                              power.slice_cols(0, 4 * self.k)])
        act_ot = concat_cols([ot_sub, ot_power.slice_cols(0, self.k)])
        return (act_to.scatter_rows(self.source_rows, n_nodes),
                act_ot.scatter_rows(self.tx_rows, n_nodes))

    def _action_node_constants(self, ratios, n_nodes):
        offload, subarray, power, ot_sub, ot_power = ratios
        act_to = np.zeros((n_nodes, 5 + 4 + 4 * self.k))
        act_to[self.source_rows] = np.concatenate(
            [offload, subarray[:, :4], power[:, :4 * self.k]], axis=1)
        act_ot = np.zeros((n_nodes, 1 + self.k))
        act_ot[self.tx_rows] = np.concatenate(
            [ot_sub, ot_power[:, :self.k]], axis=1)
        return Tensor(act_to), Tensor(act_ot)

    def q_value(self, s_to, s_ot, act_to, act_ot) -> Tensor:
        return self.critic.forward(self._flat_input(s_to, s_ot, act_to, act_ot))

    # -- training -----------------------------------------------------------

    train_step = GrantAgent.train_step
    run_training = GrantAgent.run_training

    def parameters(self):
        return self.actor_params + self.critic_params

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))


def _vstack(tensors):
    """Row-wise concatenation via the transposed column concat."""
    if len(tensors) == 1:
        return tensors[0]
    cols = tensors[0].shape[1]
    wide = concat_cols(tensors)  # [1, n*cols] rows share row count 1
    return wide.reshape(len(tensors), cols)
