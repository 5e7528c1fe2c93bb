"""Model bundles and batch tensors.

A bundle ties a scenario to the concrete networks one model variant needs:

- expert: policy + frozen ground-truth reward
- gri: encoder + policy + semantic reward decoder
- gri_airl: policy + unstructured MLP reward on a fixed homogeneous graph
- gri_vairl: encoder + policy + unstructured MLP reward (type 0 still zero)
- nri: encoder + policy
- supervised: policy

Bundles persist to a single checkpoint file carrying the scenario, the model
kind, and every named parameter bit-exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .autodiff import DTYPE, ParameterStore, derive_seed
from .encoder import EdgeEncoder, one_hot_types, sparse_prior
from .errors import InvalidArgumentError
from .graphs import InteractionGraph, Sample, SceneGraph
from .policy import build_policy
from .rewards import RewardModel, build_reward, set_raw_weights
from .scenarios import ScenarioConfig

MODEL_KINDS = ("expert", "gri", "gri_airl", "gri_vairl", "nri", "supervised")


@dataclass
class Batch:
    """Dataset slice as stacked tensors."""

    states: torch.Tensor  # [B, T, N, d]
    actions_real: torch.Tensor  # [B, T, N, a]
    leader_states: torch.Tensor | None  # [B, T, d]
    edge_types: torch.Tensor | None  # [B, E] ground-truth graphs when known
    dt: float

    @property
    def size(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.states.shape[1]

    @property
    def n_agents(self) -> int:
        return self.states.shape[2]

    def select(self, idx: torch.Tensor) -> "Batch":
        return Batch(
            states=self.states[idx],
            actions_real=self.actions_real[idx],
            leader_states=None if self.leader_states is None else self.leader_states[idx],
            edge_types=None if self.edge_types is None else self.edge_types[idx],
            dt=self.dt,
        )


def tensorize(samples: list[Sample]) -> Batch:
    """Stack homogeneous samples into one batch."""
    if not samples:
        raise InvalidArgumentError("empty sample list")
    t0 = samples[0].trajectory
    with_leader = t0.leader_states is not None
    with_graph = samples[0].graph is not None
    for s in samples:
        tr = s.trajectory
        if tr.states.shape != t0.states.shape or tr.actions.shape != t0.actions.shape:
            raise InvalidArgumentError("samples must share trajectory shapes")
        if abs(tr.dt - t0.dt) > 1e-12:
            raise InvalidArgumentError("samples must share dt")
        if (tr.leader_states is not None) != with_leader:
            raise InvalidArgumentError("samples must agree on leader presence")
        if (s.graph is not None) != with_graph:
            raise InvalidArgumentError("samples must agree on graph presence")
    states = torch.from_numpy(np.stack([s.trajectory.states for s in samples]))
    actions = torch.from_numpy(np.stack([s.trajectory.actions for s in samples]))
    leader = (
        torch.from_numpy(np.stack([s.trajectory.leader_states for s in samples]))
        if with_leader
        else None
    )
    graphs = (
        torch.from_numpy(np.stack([s.graph.edge_types for s in samples]))
        if with_graph
        else None
    )
    return Batch(
        states=states.to(DTYPE),
        actions_real=actions.to(DTYPE),
        leader_states=None if leader is None else leader.to(DTYPE),
        edge_types=graphs,
        dt=t0.dt,
    )


@dataclass
class ModelBundle:
    scenario: ScenarioConfig
    model: str
    policy: nn.Module
    encoder: EdgeEncoder | None = None
    reward: RewardModel | None = None

    @property
    def scene(self) -> SceneGraph:
        return self.scenario.scene_graph()

    def prior(self) -> torch.Tensor:
        return sparse_prior(self.scenario.k_types, self.scenario.p_none)

    def modules(self) -> dict[str, nn.Module]:
        mods: dict[str, nn.Module] = {"policy": self.policy}
        if self.encoder is not None:
            mods["encoder"] = self.encoder
        if self.reward is not None:
            mods["reward"] = self.reward
        return mods

    def parameters_for(self, *names: str) -> list[torch.nn.Parameter]:
        mods = self.modules()
        out: list[torch.nn.Parameter] = []
        for n in names:
            if n in mods:
                out.extend(mods[n].parameters())
        return out

    def homogeneous_z(self, batch_size: int) -> torch.Tensor:
        """Fully-connected graph with every edge of type 1, one-hot [B, E, K]."""
        scene = self.scene
        types = np.ones(scene.n_edges, dtype=np.int64)
        z = one_hot_types(types, self.scenario.k_types)
        return z.unsqueeze(0).expand(batch_size, -1, -1)

    def save(self, path) -> None:
        store = ParameterStore.from_modules(
            self.modules(),
            meta={"model": self.model, "scenario": self.scenario.to_dict()},
        )
        store.save(path)

    @classmethod
    def load(cls, path) -> "ModelBundle":
        store = ParameterStore.load(path)
        meta = store.meta
        if "model" not in meta or "scenario" not in meta:
            raise InvalidArgumentError("checkpoint misses model/scenario metadata")
        scenario = ScenarioConfig.from_dict(meta["scenario"])
        bundle = build_bundle(scenario, meta["model"], seed=0)
        store.load_into(bundle.modules())
        return bundle


def build_bundle(scenario: ScenarioConfig, model: str, seed: int) -> ModelBundle:
    if model not in MODEL_KINDS:
        raise InvalidArgumentError(f"unknown model {model!r}; available: {MODEL_KINDS}")
    policy = build_policy(scenario.policy_config(), seed=derive_seed(seed, model, "policy"))
    encoder = None
    reward = None
    if model in ("gri", "gri_vairl", "nri"):
        encoder = EdgeEncoder(scenario.encoder_config(), seed=derive_seed(seed, model, "encoder"))
    if model == "gri":
        reward = build_reward(scenario.reward_config(), seed=derive_seed(seed, model, "reward"))
    elif model in ("gri_airl", "gri_vairl"):
        reward = build_reward(scenario.reward_config("mlp"), seed=derive_seed(seed, model, "reward"))
    elif model == "expert":
        reward = build_reward(scenario.reward_config(), seed=derive_seed(seed, model, "reward"))
        set_raw_weights(reward, scenario.gt_weights)
        for p in reward.parameters():
            p.requires_grad_(False)
    return ModelBundle(scenario=scenario, model=model, policy=policy, encoder=encoder, reward=reward)


def graphs_tensor(graphs: list[InteractionGraph], k_types: int) -> torch.Tensor:
    """One-hot [B, E, K] from a list of hard graphs."""
    types = np.stack([g.edge_types for g in graphs])
    return one_hot_types(types, k_types)
