"""Graph-conditioned Gaussian policies and differentiable rollouts.

Messages flow along typed edges: type 0 contributes nothing, each type k >= 1
has its own message network, and a replayed leader vehicle can inject
fixed-type messages into designated receivers without being part of the
latent graph. Actions are diagonal Gaussians in normalized units with fixed
variance; rollouts integrate the scenario dynamics and keep the whole
state/action tape differentiable (reparameterized noise when sampling).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from . import dynamics
from .autodiff import DTYPE, init_module, seeded_generator
from .encoder import mlp
from .errors import InvalidArgumentError
from .features import FeatureMap
from .graphs import SceneGraph
from .validation import check_int_range, check_positive

LeaderEdges = tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class PolicyConfig:
    kind: str  # "ff" or "rnn"
    dynamics_kind: str
    k_types: int
    feature: FeatureMap
    hidden: int = 64
    sigma2: float = 0.05
    action_scale: tuple[float, ...] = (4.0,)
    leader_edges: LeaderEdges = ()
    node_state_input: bool = True

    def __post_init__(self):
        if self.kind not in ("ff", "rnn"):
            raise InvalidArgumentError(f"unknown policy kind {self.kind!r}")
        check_positive("sigma2", self.sigma2)
        if len(self.action_scale) != dynamics.action_dim(self.dynamics_kind):
            raise InvalidArgumentError("action_scale length must match the action dimension")

    @property
    def action_dim(self) -> int:
        return dynamics.action_dim(self.dynamics_kind)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dynamics_kind": self.dynamics_kind,
            "k_types": self.k_types,
            "feature": self.feature.to_dict(),
            "hidden": self.hidden,
            "sigma2": self.sigma2,
            "action_scale": list(self.action_scale),
            "leader_edges": [list(e) for e in self.leader_edges],
            "node_state_input": self.node_state_input,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        return cls(
            kind=d["kind"],
            dynamics_kind=d["dynamics_kind"],
            k_types=int(d["k_types"]),
            feature=FeatureMap.from_dict(d["feature"]),
            hidden=int(d["hidden"]),
            sigma2=float(d["sigma2"]),
            action_scale=tuple(float(s) for s in d["action_scale"]),
            leader_edges=tuple((int(a), int(k)) for a, k in d["leader_edges"]),
            node_state_input=bool(d["node_state_input"]),
        )


def _typed_messages(nets, z, feats):
    """Sum_k z_k * net_k(feats) with type 0 contributing zero. [B, E, h]."""
    out = None
    for k, net in enumerate(nets, start=1):
        m = net(feats) * z[..., k].unsqueeze(-1)
        out = m if out is None else out + m
    return out


class FFPolicy(nn.Module):
    """Memoryless policy: messages from current states, mean action per node."""

    def __init__(self, config: PolicyConfig, seed: int = 0):
        super().__init__()
        if config.kind != "ff":
            raise InvalidArgumentError("config.kind must be 'ff'")
        self.config = config
        h = config.hidden
        f = config.feature
        self.edge_nets = nn.ModuleList(
            [mlp(f.edge_dim, h, h) for _ in range(config.k_types - 1)]
        )
        node_in = h + (f.node_dim if config.node_state_input else 0)
        self.node_net = mlp(node_in, h, config.action_dim)
        init_module(self, seeded_generator(seed))

    def forward(
        self,
        states: torch.Tensor,
        z: torch.Tensor,
        scene: SceneGraph,
        leader_state: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Mean normalized action [B, N, action_dim] at one timestep."""
        cfg = self.config
        fmap = cfg.feature
        send = torch.as_tensor(scene.senders())
        recv = torch.as_tensor(scene.receivers())
        feats = fmap.edge_features(states[:, send], states[:, recv])
        msgs = _typed_messages(self.edge_nets, z, feats)  # [B, E, h]
        agg = torch.zeros(states.shape[0], scene.n_nodes, msgs.shape[-1], dtype=states.dtype)
        agg = agg.index_add(1, recv, msgs)
        if leader_state is not None:
            for agent, k in cfg.leader_edges:
                lf = fmap.edge_features(leader_state, states[:, agent])
                agg[:, agent] = agg[:, agent] + self.edge_nets[k - 1](lf)
        if cfg.node_state_input:
            agg = torch.cat([agg, fmap.node_features(states)], dim=-1)
        return self.node_net(agg)


class RNNPolicy(nn.Module):
    """Recurrent policy: messages over hidden states, GRU node update.

    The leader occupies an extra node slot whose hidden state evolves from its
    replayed inputs; nothing flows into the leader from the graph and its
    action output is discarded.
    """

    def __init__(self, config: PolicyConfig, seed: int = 0):
        super().__init__()
        if config.kind != "rnn":
            raise InvalidArgumentError("config.kind must be 'rnn'")
        self.config = config
        h = config.hidden
        f = config.feature
        self.edge_nets = nn.ModuleList(
            [mlp(2 * h, h, h) for _ in range(config.k_types - 1)]
        )
        self.cell = nn.GRUCell(h + f.node_dim, h)
        self.out_net = mlp(h, h, config.action_dim)
        init_module(self, seeded_generator(seed))

    def init_hidden(self, batch: int, n_nodes: int, with_leader: bool) -> torch.Tensor:
        return torch.zeros(batch, n_nodes + int(with_leader), self.config.hidden, dtype=DTYPE)

    def forward(
        self,
        states: torch.Tensor,
        z: torch.Tensor,
        scene: SceneGraph,
        hidden: torch.Tensor,
        leader_state: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """One step: (mean normalized action [B, N, a], next hidden)."""
        cfg = self.config
        fmap = cfg.feature
        n = scene.n_nodes
        with_leader = leader_state is not None
        if hidden.shape[1] != n + int(with_leader):
            raise InvalidArgumentError("hidden state width does not match node count")
        send = torch.as_tensor(scene.senders())
        recv = torch.as_tensor(scene.receivers())
        pair = torch.cat([hidden[:, send], hidden[:, recv]], dim=-1)
        msgs = _typed_messages(self.edge_nets, z, pair)
        agg = torch.zeros(states.shape[0], n + int(with_leader), msgs.shape[-1], dtype=states.dtype)
        agg = agg.index_add(1, recv, msgs)
        if with_leader:
            for agent, k in cfg.leader_edges:
                pair_l = torch.cat([hidden[:, n], hidden[:, agent]], dim=-1)
                agg[:, agent] = agg[:, agent] + self.edge_nets[k - 1](pair_l)
            node_feats = torch.cat(
                [fmap.node_features(states), fmap.node_features(leader_state).unsqueeze(1)],
                dim=1,
            )
        else:
            node_feats = fmap.node_features(states)
        inp = torch.cat([agg, node_feats], dim=-1)
        b, m, _ = inp.shape
        new_hidden = self.cell(inp.reshape(b * m, -1), hidden.reshape(b * m, -1)).reshape(b, m, -1)
        mu = self.out_net(new_hidden[:, :n])
        return mu, new_hidden


def build_policy(config: PolicyConfig, seed: int = 0) -> nn.Module:
    return FFPolicy(config, seed=seed) if config.kind == "ff" else RNNPolicy(config, seed=seed)


def log_prob(actions: torch.Tensor, mean: torch.Tensor, sigma2: float) -> torch.Tensor:
    """Diagonal-Gaussian log density, summed over the last (action) dimension."""
    check_positive("sigma2", sigma2)
    d = actions.shape[-1]
    sq = ((actions - mean) ** 2).sum(dim=-1)
    return -0.5 * (d * math.log(2 * math.pi * sigma2) + sq / sigma2)


@dataclass
class Rollout:
    """Differentiable tape of one batched rollout."""

    states: torch.Tensor  # [B, T, N, d]
    actions_norm: torch.Tensor  # [B, T, N, a]
    means_norm: torch.Tensor  # [B, T, N, a]
    leader_states: torch.Tensor | None  # [B, T, d]
    dt: float

    @property
    def horizon(self) -> int:
        return self.states.shape[1]

    def actions_real(self, action_scale: tuple[float, ...]) -> torch.Tensor:
        scale = torch.as_tensor(action_scale, dtype=self.actions_norm.dtype)
        return self.actions_norm * scale


def rollout(
    policy: nn.Module,
    init_states: torch.Tensor,
    z: torch.Tensor,
    scene: SceneGraph,
    *,
    n_steps: int,
    dt: float,
    leader_init: torch.Tensor | None = None,
    leader_states: torch.Tensor | None = None,
    mode: str = "mean",
    generator: torch.Generator | None = None,
) -> Rollout:
    """Roll the policy forward `n_steps`, producing n_steps + 1 stored steps.

    The final stored action is the policy output at the final state; it drives
    no stored transition. The leader either replays a given state series or
    advances at constant velocity from `leader_init`.
    """
    check_int_range("n_steps", n_steps, low=1)
    check_positive("dt", dt)
    if mode not in ("mean", "sample"):
        raise InvalidArgumentError(f"unknown rollout mode {mode!r}")
    cfg = policy.config
    kind = cfg.dynamics_kind
    scale = torch.as_tensor(cfg.action_scale, dtype=DTYPE)
    with_leader = leader_init is not None or leader_states is not None
    if leader_states is not None and leader_states.shape[1] < n_steps + 1:
        raise InvalidArgumentError("replayed leader series shorter than the rollout")

    is_rnn = isinstance(policy, RNNPolicy)
    if is_rnn:
        hidden = policy.init_hidden(init_states.shape[0], scene.n_nodes, with_leader)

    states_t = init_states
    leader_t = leader_states[:, 0] if leader_states is not None else leader_init
    states_tape, actions_tape, means_tape, leader_tape = [], [], [], []
    for t in range(n_steps + 1):
        if is_rnn:
            mu, hidden = policy(states_t, z, scene, hidden, leader_state=leader_t)
        else:
            mu = policy(states_t, z, scene, leader_state=leader_t)
        if mode == "sample":
            noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
            act = mu + math.sqrt(cfg.sigma2) * noise
        else:
            act = mu
        states_tape.append(states_t)
        actions_tape.append(act)
        means_tape.append(mu)
        if with_leader:
            leader_tape.append(leader_t)
        if t < n_steps:
            states_t = dynamics.step(kind, states_t, act * scale, dt)
            if leader_states is not None:
                leader_t = leader_states[:, t + 1]
            elif leader_init is not None:
                leader_t = dynamics.leader_advance(kind, leader_t, dt)
    return Rollout(
        states=torch.stack(states_tape, dim=1),
        actions_norm=torch.stack(actions_tape, dim=1),
        means_norm=torch.stack(means_tape, dim=1),
        leader_states=torch.stack(leader_tape, dim=1) if with_leader else None,
        dt=dt,
    )


def policy_means(
    policy: nn.Module,
    states_series: torch.Tensor,
    z: torch.Tensor,
    scene: SceneGraph,
    leader_series: torch.Tensor | None = None,
) -> torch.Tensor:
    """Teacher-forced mean actions [B, T, N, a] along a given state series."""
    b, t, n, d = states_series.shape
    if isinstance(policy, RNNPolicy):
        hidden = policy.init_hidden(b, scene.n_nodes, leader_series is not None)
        out = []
        for step_i in range(t):
            leader_t = leader_series[:, step_i] if leader_series is not None else None
            mu, hidden = policy(states_series[:, step_i], z, scene, hidden, leader_state=leader_t)
            out.append(mu)
        return torch.stack(out, dim=1)
    flat_states = states_series.reshape(b * t, n, d)
    z_rep = z.repeat_interleave(t, dim=0)
    leader_flat = leader_series.reshape(b * t, d) if leader_series is not None else None
    mu = policy(flat_states, z_rep, scene, leader_state=leader_flat)
    return mu.reshape(b, t, n, -1)
