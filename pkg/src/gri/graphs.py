"""Scene graphs, discrete interaction graphs, and trajectory containers.

A scene with N agents induces a complete bidirected graph over the agent
indices: every ordered pair (i, j), i != j, is an edge slot. An interaction
graph assigns each slot a discrete type from a vocabulary whose type 0 always
means "no interaction". Edge (i, j) describes the effect of agent i on agent
j; rewards and messages attached to it accrue to the receiver j.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .validation import check_array, check_int_range, check_positive, readonly


@dataclass(frozen=True)
class SceneGraph:
    """Complete bidirected graph over `n_nodes` agents, edges in row-major order."""

    n_nodes: int
    edges: tuple[tuple[int, int], ...] = field(init=False)

    def __post_init__(self):
        check_int_range("n_nodes", self.n_nodes, low=2)
        pairs = tuple(
            (i, j)
            for i in range(self.n_nodes)
            for j in range(self.n_nodes)
            if i != j
        )
        object.__setattr__(self, "edges", pairs)

    @property
    def n_edges(self) -> int:
        return self.n_nodes * (self.n_nodes - 1)

    def senders(self) -> np.ndarray:
        return np.array([i for i, _ in self.edges], dtype=np.int64)

    def receivers(self) -> np.ndarray:
        return np.array([j for _, j in self.edges], dtype=np.int64)


def build_scene_graph(n_nodes: int) -> SceneGraph:
    return SceneGraph(n_nodes=n_nodes)


def edge_index(scene: SceneGraph, sender: int, receiver: int) -> int:
    """Position of ordered pair (sender, receiver) in the row-major edge list."""
    check_int_range("sender", sender, low=0, high=scene.n_nodes - 1)
    check_int_range("receiver", receiver, low=0, high=scene.n_nodes - 1)
    if sender == receiver:
        raise InvalidArgumentError("self edges do not exist")
    # Row i holds n_nodes - 1 edges; receivers skip the diagonal entry.
    offset = receiver if receiver < sender else receiver - 1
    return sender * (scene.n_nodes - 1) + offset


@dataclass(frozen=True)
class EdgeTypeVocabulary:
    """Ordered edge-type labels; label 0 is always the null type."""

    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.labels) < 2:
            raise InvalidArgumentError("vocabulary needs at least the null type and one interaction type")
        if self.labels[0] != "none":
            raise InvalidArgumentError('label 0 must be "none"')
        if len(set(self.labels)) != len(self.labels):
            raise InvalidArgumentError("duplicate labels in vocabulary")

    @property
    def k(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise InvalidArgumentError(f"unknown edge type label {label!r}") from None


@dataclass(frozen=True)
class InteractionGraph:
    """Discrete edge-type assignment over a scene's ordered pairs."""

    scene: SceneGraph
    edge_types: np.ndarray
    k_types: int

    def __post_init__(self):
        check_int_range("k_types", self.k_types, low=2)
        types = check_array(
            "edge_types", self.edge_types, shape=(self.scene.n_edges,), dtype=np.int64
        )
        if types.size and (types.min() < 0 or types.max() >= self.k_types):
            raise InvalidArgumentError(
                f"edge types must lie in [0, {self.k_types}), got range "
                f"[{types.min()}, {types.max()}]"
            )
        object.__setattr__(self, "edge_types", readonly(types))

    def type_of(self, sender: int, receiver: int) -> int:
        return int(self.edge_types[edge_index(self.scene, sender, receiver)])

    def to_dict(self) -> dict:
        return {
            "n_nodes": self.scene.n_nodes,
            "k_types": self.k_types,
            "edge_types": [int(t) for t in self.edge_types],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InteractionGraph":
        return cls(
            scene=build_scene_graph(int(d["n_nodes"])),
            edge_types=np.asarray(d["edge_types"], dtype=np.int64),
            k_types=int(d["k_types"]),
        )


def empty_graph(n_nodes: int, k_types: int) -> InteractionGraph:
    scene = build_scene_graph(n_nodes)
    return InteractionGraph(scene=scene, edge_types=np.zeros(scene.n_edges, dtype=np.int64), k_types=k_types)


def graph_from_pairs(n_nodes: int, k_types: int, pairs: dict[tuple[int, int], int]) -> InteractionGraph:
    """Build a graph from {(sender, receiver): type}; unlisted pairs get type 0."""
    scene = build_scene_graph(n_nodes)
    types = np.zeros(scene.n_edges, dtype=np.int64)
    for (i, j), k in pairs.items():
        types[edge_index(scene, i, j)] = k
    return InteractionGraph(scene=scene, edge_types=types, k_types=k_types)


@dataclass(frozen=True)
class Trajectory:
    """A fixed-step rollout of one scene.

    states[t, j] is agent j's state at step t and actions[t, j] the action it
    took there; the transition states[t] -> states[t+1] is driven by
    actions[t]. The final stored action leads out of the stored window.
    An optional leader state series (same clock) rides along for scenes where
    a non-modeled vehicle is replayed from data.
    """

    dt: float
    states: np.ndarray
    actions: np.ndarray
    leader_states: np.ndarray | None = None

    def __post_init__(self):
        check_positive("dt", self.dt)
        states = check_array("states", self.states, ndim=3)
        if states.shape[0] < 2:
            raise InvalidArgumentError("trajectory needs at least 2 timesteps")
        if states.shape[1] < 1:
            raise InvalidArgumentError("trajectory needs at least 1 agent")
        actions = check_array(
            "actions", self.actions, shape=(states.shape[0], states.shape[1], None)
        )
        object.__setattr__(self, "states", readonly(states))
        object.__setattr__(self, "actions", readonly(actions))
        if self.leader_states is not None:
            leader = check_array(
                "leader_states", self.leader_states, shape=(states.shape[0], states.shape[2])
            )
            object.__setattr__(self, "leader_states", readonly(leader))

    @property
    def horizon(self) -> int:
        return self.states.shape[0]

    @property
    def n_agents(self) -> int:
        return self.states.shape[1]

    @property
    def state_dim(self) -> int:
        return self.states.shape[2]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[2]

    def to_dict(self) -> dict:
        d = {
            "dt": float(self.dt),
            "states": self.states.tolist(),
            "actions": self.actions.tolist(),
        }
        if self.leader_states is not None:
            d["leader_states"] = self.leader_states.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        leader = d.get("leader_states")
        return cls(
            dt=float(d["dt"]),
            states=np.asarray(d["states"], dtype=np.float64),
            actions=np.asarray(d["actions"], dtype=np.float64),
            leader_states=None if leader is None else np.asarray(leader, dtype=np.float64),
        )


@dataclass(frozen=True)
class Sample:
    """One dataset record: a trajectory plus its interaction graph when known."""

    trajectory: Trajectory
    graph: InteractionGraph | None = None

    def __post_init__(self):
        if self.graph is not None and self.graph.scene.n_nodes != self.trajectory.n_agents:
            raise InvalidArgumentError(
                f"graph has {self.graph.scene.n_nodes} nodes but trajectory has "
                f"{self.trajectory.n_agents} agents"
            )

    def to_dict(self) -> dict:
        d = {"trajectory": self.trajectory.to_dict()}
        if self.graph is not None:
            d["graph"] = self.graph.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Sample":
        g = d.get("graph")
        return cls(
            trajectory=Trajectory.from_dict(d["trajectory"]),
            graph=None if g is None else InteractionGraph.from_dict(g),
        )
