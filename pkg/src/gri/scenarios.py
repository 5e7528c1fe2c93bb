"""Scenario definitions: scene layout, ground-truth graphs, model shapes.

A scenario bundles everything the pipeline needs to agree on: dynamics kind,
edge-type vocabulary, number of modeled agents, horizon and step size, the
initial-state sampler, the replayed leader's fixed-type edges, the reward
variant with its ground-truth weights, network widths, and the information
budget of the graph bottleneck.

Built-in scenes:

- cf_synthetic: single-lane chain (leader, then agents 0, 1, 2 front to
  back); agent 1 follows agent 0, agent 2 follows agent 1, agent 0 follows
  the replayed leader. K=2 vocabulary.
- lc_synthetic: two lanes; leader, agent 0 and agent 2 drive in lane 1,
  agent 1 starts in lane 0 and merges: it follows agent 0 across lanes,
  agent 2 yields to it, and it cuts in front of agent 2. K=4 vocabulary.
- cf_natural / lc_natural: ingested-log scenes with learned-reference
  rewards and recurrent policies; graphs come from hypothesis rules at load
  time rather than from the scenario.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import dynamics
from .autodiff import DTYPE
from .encoder import EncoderConfig
from .errors import InvalidArgumentError
from .features import FeatureMap, LaneGeometry
from .graphs import InteractionGraph, SceneGraph, build_scene_graph, EdgeTypeVocabulary, graph_from_pairs
from .policy import PolicyConfig
from .rewards import IdmParams, RewardConfig, RewardConstants
from .validation import check_int_range, check_positive


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    dynamics_kind: str
    vocab: tuple[str, ...]
    n_agents: int
    horizon: int  # stored steps per trajectory
    dt: float
    layout: str  # "chain" or "merge"
    speed_range: tuple[float, float] = (8.0, 12.0)
    leader_speed: float | None = None  # None samples from speed_range
    headway_range: tuple[float, float] = (4.0, 8.0)
    merger_offset_range: tuple[float, float] = (2.0, 6.0)
    lanes: LaneGeometry | None = None
    leader_edges: tuple[tuple[int, int], ...] = ()
    true_edges: tuple[tuple[int, int, str], ...] = ()
    ood_pair: tuple[int, int] = (0, 1)  # (front agent, following agent)
    reward_variant: str = "cf_synthetic"
    gt_weights: dict = field(default_factory=dict)
    idm: IdmParams = field(default_factory=IdmParams)
    constants: RewardConstants = field(default_factory=RewardConstants)
    feature: FeatureMap | None = None
    action_scale: tuple[float, ...] = (4.0,)
    policy_kind: str = "ff"
    hidden: int = 64
    reward_hidden: int = 32
    ic: float = 5.8
    p_none: float = 0.9
    sigma2: float = 0.05

    def __post_init__(self):
        check_int_range("n_agents", self.n_agents, low=2)
        check_int_range("horizon", self.horizon, low=2)
        check_positive("dt", self.dt)
        if self.layout not in ("chain", "merge"):
            raise InvalidArgumentError(f"unknown layout {self.layout!r}")
        if self.feature is None:
            object.__setattr__(self, "feature", FeatureMap(kind=self.dynamics_kind))

    # -- derived pieces ----------------------------------------------------
    @property
    def k_types(self) -> int:
        return len(self.vocab)

    def vocabulary(self) -> EdgeTypeVocabulary:
        return EdgeTypeVocabulary(labels=tuple(self.vocab))

    def scene_graph(self) -> SceneGraph:
        return build_scene_graph(self.n_agents)

    def true_graph(self) -> InteractionGraph:
        vocab = self.vocabulary()
        pairs = {(i, j): vocab.index(label) for i, j, label in self.true_edges}
        return graph_from_pairs(self.n_agents, self.k_types, pairs)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            k_types=self.k_types,
            feature=self.feature,
            hidden=self.hidden,
            p_none=self.p_none,
        )

    def policy_config(self, kind: str | None = None) -> PolicyConfig:
        return PolicyConfig(
            kind=kind or self.policy_kind,
            dynamics_kind=self.dynamics_kind,
            k_types=self.k_types,
            feature=self.feature,
            hidden=self.hidden,
            sigma2=self.sigma2,
            action_scale=self.action_scale,
            leader_edges=self.leader_edges,
        )

    def reward_config(self, variant: str | None = None) -> RewardConfig:
        return RewardConfig(
            variant=variant or self.reward_variant,
            dynamics_kind=self.dynamics_kind,
            k_types=self.k_types,
            feature=self.feature,
            lanes=self.lanes,
            idm=self.idm,
            constants=self.constants,
            action_scale=self.action_scale,
            hidden=self.reward_hidden,
            leader_edges=self.leader_edges,
        )

    @property
    def state_dim(self) -> int:
        return dynamics.state_dim(self.dynamics_kind)

    @property
    def action_dim(self) -> int:
        return dynamics.action_dim(self.dynamics_kind)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dynamics_kind": self.dynamics_kind,
            "vocab": list(self.vocab),
            "n_agents": self.n_agents,
            "horizon": self.horizon,
            "dt": self.dt,
            "layout": self.layout,
            "speed_range": list(self.speed_range),
            "leader_speed": self.leader_speed,
            "headway_range": list(self.headway_range),
            "merger_offset_range": list(self.merger_offset_range),
            "lanes": None if self.lanes is None else self.lanes.to_dict(),
            "leader_edges": [list(e) for e in self.leader_edges],
            "true_edges": [list(e) for e in self.true_edges],
            "ood_pair": list(self.ood_pair),
            "reward_variant": self.reward_variant,
            "gt_weights": {k: list(v) for k, v in self.gt_weights.items()},
            "idm": self.idm.to_dict(),
            "constants": self.constants.to_dict(),
            "feature": self.feature.to_dict(),
            "action_scale": list(self.action_scale),
            "policy_kind": self.policy_kind,
            "hidden": self.hidden,
            "reward_hidden": self.reward_hidden,
            "ic": self.ic,
            "p_none": self.p_none,
            "sigma2": self.sigma2,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        return cls(
            name=d["name"],
            dynamics_kind=d["dynamics_kind"],
            vocab=tuple(d["vocab"]),
            n_agents=int(d["n_agents"]),
            horizon=int(d["horizon"]),
            dt=float(d["dt"]),
            layout=d["layout"],
            speed_range=tuple(float(v) for v in d["speed_range"]),
            leader_speed=None if d.get("leader_speed") is None else float(d["leader_speed"]),
            headway_range=tuple(float(v) for v in d["headway_range"]),
            merger_offset_range=tuple(float(v) for v in d["merger_offset_range"]),
            lanes=None if d.get("lanes") is None else LaneGeometry.from_dict(d["lanes"]),
            leader_edges=tuple((int(a), int(k)) for a, k in d["leader_edges"]),
            true_edges=tuple((int(i), int(j), str(l)) for i, j, l in d["true_edges"]),
            ood_pair=tuple(int(v) for v in d["ood_pair"]),
            reward_variant=d["reward_variant"],
            gt_weights={k: [float(x) for x in v] for k, v in d["gt_weights"].items()},
            idm=IdmParams.from_dict(d["idm"]),
            constants=RewardConstants.from_dict(d["constants"]),
            feature=FeatureMap.from_dict(d["feature"]),
            action_scale=tuple(float(s) for s in d["action_scale"]),
            policy_kind=d["policy_kind"],
            hidden=int(d["hidden"]),
            reward_hidden=int(d["reward_hidden"]),
            ic=float(d["ic"]),
            p_none=float(d["p_none"]),
            sigma2=float(d["sigma2"]),
        )


def _unif(generator: torch.Generator, lo: float, hi: float, *shape) -> torch.Tensor:
    return lo + (hi - lo) * torch.rand(*shape, generator=generator, dtype=DTYPE)


def sample_initial_states(
    scenario: ScenarioConfig, n: int, generator: torch.Generator
) -> tuple[torch.Tensor, torch.Tensor | None]:
    """Draw initial scene states: (agent states [n, N, d], leader states [n, d]).

    Chain: agents 0..N-1 front to back in one lane, consecutive headways from
    headway_range, the leader ahead of agent 0. Merge: agents 0 and 2 plus the
    leader in lane 1, agent 1 in lane 0 slotted between agent 2 and agent 0.
    """
    check_int_range("n", n, low=1)
    kind = scenario.dynamics_kind
    d = scenario.state_dim
    n_agents = scenario.n_agents
    states = torch.zeros(n, n_agents, d, dtype=DTYPE)
    speeds = _unif(generator, *scenario.speed_range, n, n_agents + 1)
    if scenario.leader_speed is not None:
        speeds[:, n_agents] = scenario.leader_speed

    if scenario.layout == "chain":
        gaps = _unif(generator, *scenario.headway_range, n, n_agents)
        # x[N-1] = 0; x[i] = sum of gaps behind the vehicles ahead.
        xs = torch.zeros(n, n_agents, dtype=DTYPE)
        for i in range(n_agents - 2, -1, -1):
            xs[:, i] = xs[:, i + 1] + gaps[:, i + 1]
        leader_x = xs[:, 0] + gaps[:, 0]
        lane_y = 0.0 if scenario.lanes is None else float(scenario.lanes.centerlines()[0])
        states[..., 0] = xs
        leader = torch.zeros(n, d, dtype=DTYPE)
        leader[:, 0] = leader_x
        if kind == "point_1d":
            states[..., 1] = speeds[:, :n_agents]
            leader[:, 1] = speeds[:, n_agents]
        elif kind == "dubins":
            states[..., 1] = lane_y
            states[..., 2] = speeds[:, :n_agents]
            leader[:, 1] = lane_y
            leader[:, 2] = speeds[:, n_agents]
        else:
            states[..., 1] = lane_y
            states[..., 2] = speeds[:, :n_agents]
            leader[:, 1] = lane_y
            leader[:, 2] = speeds[:, n_agents]
        return states, leader

    # merge layout
    if scenario.n_agents != 3:
        raise InvalidArgumentError("merge layout is defined for 3 modeled agents")
    if scenario.lanes is None or scenario.lanes.n_lanes < 2:
        raise InvalidArgumentError("merge layout needs two lanes")
    y_source = float(scenario.lanes.centerlines()[0])
    y_target = float(scenario.lanes.centerlines()[1])
    x2 = torch.zeros(n, dtype=DTYPE)
    x1 = x2 + _unif(generator, *scenario.merger_offset_range, n)
    x0 = x1 + _unif(generator, *scenario.headway_range, n)
    leader_x = x0 + _unif(generator, *scenario.headway_range, n)
    xs = torch.stack([x0, x1, x2], dim=1)
    ys = torch.tensor([y_target, y_source, y_target], dtype=DTYPE).expand(n, 3)
    states[..., 0] = xs
    states[..., 1] = ys
    states[..., 2] = speeds[:, :3]
    leader = torch.zeros(n, d, dtype=DTYPE)
    leader[:, 0] = leader_x
    leader[:, 1] = y_target
    leader[:, 2] = speeds[:, 3]
    return states, leader


def cf_synthetic() -> ScenarioConfig:
    return ScenarioConfig(
        name="cf_synthetic",
        dynamics_kind="point_1d",
        vocab=("none", "follow"),
        n_agents=3,
        horizon=20,
        dt=0.2,
        layout="chain",
        leader_speed=10.0,
        headway_range=(4.0, 8.0),
        leader_edges=((0, 1),),
        true_edges=((0, 1, "follow"), (1, 2, "follow")),
        ood_pair=(0, 1),
        reward_variant="cf_synthetic",
        gt_weights={
            "node_raw": [-3.0, -2.0, -1.0],
            "follow_raw": [-2.0, 0.5],
        },
        # t_headway 0.4 puts the desired gap at 6 m for 10 m/s traffic, inside
        # the sampled headway range, so demonstrations hover near equilibrium.
        idm=IdmParams(t_headway=0.4),
        constants=RewardConstants(v_lim=10.0),
        action_scale=(2.0,),
        policy_kind="ff",
        ic=5.8,
    )


def lc_synthetic() -> ScenarioConfig:
    return ScenarioConfig(
        name="lc_synthetic",
        dynamics_kind="dubins",
        vocab=("none", "follow", "yield", "cutin"),
        n_agents=3,
        horizon=30,
        dt=0.2,
        layout="merge",
        leader_speed=10.0,
        headway_range=(8.0, 12.0),
        merger_offset_range=(2.0, 6.0),
        lanes=LaneGeometry(n_lanes=2, width=4.0, offset=0.0),
        leader_edges=((0, 1),),
        true_edges=((0, 1, "follow"), (1, 2, "yield"), (2, 1, "cutin")),
        ood_pair=(0, 1),
        reward_variant="lc_synthetic",
        gt_weights={
            "node_raw": [-3.0, -2.0, 0.0, 0.0, -1.0, 0.0, -1.0],
            "follow_raw": [-2.0, 0.5, 0.0],
            "yield_raw": [-2.0, 0.5],
            "cutin_raw": [-2.0, 0.5],
        },
        # t_headway 0.8 puts the desired gap at 10 m for 10 m/s traffic, the
        # middle of the sampled headway range.
        idm=IdmParams(t_headway=0.8),
        constants=RewardConstants(v_lim=10.0),
        action_scale=(2.0, 0.5),
        policy_kind="ff",
        ic=12.0,
    )


def cf_natural() -> ScenarioConfig:
    return ScenarioConfig(
        name="cf_natural",
        dynamics_kind="point_1d",
        vocab=("none", "follow"),
        n_agents=3,
        horizon=30,
        dt=0.1,
        layout="chain",
        headway_range=(5.0, 15.0),
        leader_edges=((0, 1),),
        true_edges=((0, 1, "follow"), (1, 2, "follow")),
        ood_pair=(0, 1),
        reward_variant="cf_natural",
        constants=RewardConstants(v_lim=15.0),
        action_scale=(4.0,),
        policy_kind="rnn",
        ic=5.8,
    )


def lc_natural() -> ScenarioConfig:
    return ScenarioConfig(
        name="lc_natural",
        dynamics_kind="point_2d",
        vocab=("none", "follow", "yield"),
        n_agents=3,
        horizon=40,
        dt=0.1,
        layout="merge",
        headway_range=(8.0, 16.0),
        merger_offset_range=(2.0, 6.0),
        lanes=LaneGeometry(n_lanes=2, width=4.0, offset=0.0),
        leader_edges=((0, 1),),
        true_edges=((0, 1, "follow"), (1, 2, "yield")),
        ood_pair=(0, 1),
        reward_variant="lc_natural",
        constants=RewardConstants(v_lim=15.0),
        action_scale=(4.0, 2.0),
        policy_kind="rnn",
        ic=11.0,
    )


SCENARIOS = {
    "cf_synthetic": cf_synthetic,
    "lc_synthetic": lc_synthetic,
    "cf_natural": cf_natural,
    "lc_natural": lc_natural,
}


def scenario_names() -> list[str]:
    return sorted(SCENARIOS)


def get_scenario(name: str) -> ScenarioConfig:
    if name not in SCENARIOS:
        raise InvalidArgumentError(
            f"unknown scenario {name!r}; available: {sorted(SCENARIOS)}"
        )
    return SCENARIOS[name]()
