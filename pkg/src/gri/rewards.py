"""Structured reward decoders.

Every reward model exposes the same surface: a per-agent node reward, a
per-edge reward for each interaction type (type 0 is identically zero), and
shaping potentials whose temporal differences turn rewards into the shaped
form used by the discriminator. Semantic variants build edge rewards from
interpretable nonnegative features combined with weights (1 + exp(raw)) > 1,
so every active term is a strictly negative penalty; learned-feature variants
replace hand-derived references with small networks; the MLP variant drops
all structure except the null-type zero.

Edge (i, j) rewards accrue to the receiver j ("j follows/yields to/cuts in
front of i").
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from . import dynamics
from .autodiff import DTYPE, init_module, seeded_generator
from .encoder import mlp
from .errors import InvalidArgumentError
from .features import FeatureMap, LaneGeometry
from .graphs import SceneGraph

LeaderEdges = tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class IdmParams:
    """Desired-gap constants: s* = s0 + max(0, v*T + v*(v - v_lead)/(2*sqrt(a*b)))."""

    s0: float = 2.0
    t_headway: float = 1.5
    a_max: float = 2.0
    b_comf: float = 2.0

    def to_dict(self) -> dict:
        return {"s0": self.s0, "t_headway": self.t_headway, "a_max": self.a_max, "b_comf": self.b_comf}

    @classmethod
    def from_dict(cls, d: dict) -> "IdmParams":
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class RewardConstants:
    zeta: float = 5.0  # interaction length scale of the proximity penalty [m]
    dx_yield: float = 8.0  # goal headway while yielding across lanes [m]
    r_max: float = 100.0  # collision-point validity radius [m]
    v_lim: float = 30.0  # speed target [m/s]
    lane_eps: float = 0.1  # boundary-distance floor [m]
    lane_form: str = "inverse_square"  # or "offset"
    angle_tol: float = 1e-8  # parallel-ray tolerance [rad]

    def to_dict(self) -> dict:
        return {
            "zeta": self.zeta,
            "dx_yield": self.dx_yield,
            "r_max": self.r_max,
            "v_lim": self.v_lim,
            "lane_eps": self.lane_eps,
            "lane_form": self.lane_form,
            "angle_tol": self.angle_tol,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RewardConstants":
        d = dict(d)
        form = d.pop("lane_form", "inverse_square")
        return cls(lane_form=form, **{k: float(v) for k, v in d.items()})


# ---------------------------------------------------------------------------
# Structured features. All take/return tensors and are translation invariant.

def relu0(x: torch.Tensor) -> torch.Tensor:
    """max(x, 0) taking the zero branch at ties (d/dx = 0 at x = 0)."""
    return torch.relu(x)


def idm_desired_gap(v_follow: torch.Tensor, v_lead: torch.Tensor, idm: IdmParams) -> torch.Tensor:
    dyn = v_follow * idm.t_headway + v_follow * (v_follow - v_lead) / (
        2.0 * math.sqrt(idm.a_max * idm.b_comf)
    )
    return idm.s0 + relu0(dyn)


def g_idm(x_i, v_i, x_j, v_j, idm: IdmParams) -> torch.Tensor:
    """Squared deviation of the (clamped) headway from the desired gap; j follows i."""
    return (relu0(x_i - x_j) - idm_desired_gap(v_j, v_i, idm)) ** 2


def g_dist(x_i, x_j, zeta: float) -> torch.Tensor:
    """Proximity penalty, maximal (1) when j is at or ahead of i."""
    return torch.exp(-relu0(x_i - x_j) ** 2 / (zeta * zeta))


def g_lat(y_i, y_j, lanes: LaneGeometry) -> torch.Tensor:
    """Squared offset of j from the centerline of i's lane."""
    return (y_j - lanes.nearest_centerline(y_i)) ** 2


def g_goal(x_i, x_j, dx_yield: float) -> torch.Tensor:
    """Penalty once j lags i by more than the yield headway."""
    return relu0(x_i - x_j - dx_yield) ** 2


def g_yield(x_i, v_i, y_i, x_j, v_j, y_j, lanes: LaneGeometry, idm: IdmParams, dx_yield: float) -> torch.Tensor:
    """Gap keeping that switches from goal-headway to car-following when lanes merge."""
    same = lanes.same_lane(y_i, y_j)
    return same * g_idm(x_i, v_i, x_j, v_j, idm) + (1.0 - same) * g_goal(x_i, x_j, dx_yield)


def f_speed(v: torch.Tensor, v_lim: float) -> torch.Tensor:
    return (v - v_lim) ** 2


def f_lane(y: torch.Tensor, lanes: LaneGeometry, constants: RewardConstants) -> torch.Tensor:
    """Boundary-proximity penalty (default) or squared centerline offset."""
    if constants.lane_form == "inverse_square":
        d = torch.clamp(lanes.boundary_distance(y), min=constants.lane_eps)
        return 1.0 / (d * d)
    if constants.lane_form == "offset":
        return (y - lanes.nearest_centerline(y)) ** 2
    raise InvalidArgumentError(f"unknown lane_form {constants.lane_form!r}")


@dataclass
class CollisionPoint:
    """Heading-ray intersection of two vehicles; all fields batched tensors."""

    valid: torch.Tensor  # bool mask
    point: torch.Tensor  # [..., 2], zeros where invalid
    d_i: torch.Tensor  # distance from i to the point, 0 where invalid
    d_j: torch.Tensor
    t_i: torch.Tensor  # time to reach the point at current speed
    t_j: torch.Tensor


def collision_point(
    pos_i: torch.Tensor,
    vel_i: torch.Tensor,
    pos_j: torch.Tensor,
    vel_j: torch.Tensor,
    *,
    r_max: float = 100.0,
    angle_tol: float = 1e-8,
) -> CollisionPoint:
    """Intersect the two velocity rays p + t*v, t > 0.

    Invalid (no collision point) when the rays are parallel within angle_tol,
    the intersection lies behind either vehicle, either distance exceeds
    r_max, or either speed is zero. Invalid entries carry zeros and no
    gradient.
    """
    bx = pos_j[..., 0] - pos_i[..., 0]
    by = pos_j[..., 1] - pos_i[..., 1]
    vix, viy = vel_i[..., 0], vel_i[..., 1]
    vjx, vjy = vel_j[..., 0], vel_j[..., 1]
    det = vjx * viy - vix * vjy
    speed_i = torch.sqrt(vix * vix + viy * viy)
    speed_j = torch.sqrt(vjx * vjx + vjy * vjy)
    nonzero = (speed_i > 0) & (speed_j > 0)
    sin_angle = torch.where(nonzero, det.abs() / (speed_i * speed_j + 1e-300), torch.zeros_like(det))
    not_parallel = sin_angle > angle_tol
    safe_det = torch.where(not_parallel, det, torch.ones_like(det))
    t_i = (by * vjx - bx * vjy) / safe_det
    t_j = (by * vix - bx * viy) / safe_det
    d_i = t_i * speed_i
    d_j = t_j * speed_j
    valid = not_parallel & nonzero & (t_i > 0) & (t_j > 0) & (d_i <= r_max) & (d_j <= r_max)
    zero = torch.zeros_like(t_i)
    t_i = torch.where(valid, t_i, zero)
    t_j = torch.where(valid, t_j, zero)
    d_i = torch.where(valid, d_i, zero)
    d_j = torch.where(valid, d_j, zero)
    px = pos_i[..., 0] + t_i * vix
    py = pos_i[..., 1] + t_i * viy
    point = torch.where(valid.unsqueeze(-1), torch.stack([px, py], dim=-1), torch.zeros(*t_i.shape, 2, dtype=t_i.dtype))
    return CollisionPoint(valid=valid, point=point, d_i=d_i, d_j=d_j, t_i=t_i, t_j=t_j)


# ---------------------------------------------------------------------------
# Reward configs and models.

SEMANTIC_VARIANTS = ("cf_synthetic", "lc_synthetic", "cf_natural", "lc_natural")


@dataclass(frozen=True)
class RewardConfig:
    variant: str  # semantic variant or "mlp"
    dynamics_kind: str
    k_types: int
    feature: FeatureMap
    lanes: LaneGeometry | None = None
    idm: IdmParams = field(default_factory=IdmParams)
    constants: RewardConstants = field(default_factory=RewardConstants)
    action_scale: tuple[float, ...] = (4.0,)
    hidden: int = 32  # width of learned feature and shaping networks
    leader_edges: LeaderEdges = ()

    def __post_init__(self):
        if self.variant not in SEMANTIC_VARIANTS + ("mlp",):
            raise InvalidArgumentError(f"unknown reward variant {self.variant!r}")
        if self.variant in ("lc_synthetic", "lc_natural") and self.lanes is None:
            raise InvalidArgumentError(f"{self.variant} needs lane geometry")

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "dynamics_kind": self.dynamics_kind,
            "k_types": self.k_types,
            "feature": self.feature.to_dict(),
            "lanes": None if self.lanes is None else self.lanes.to_dict(),
            "idm": self.idm.to_dict(),
            "constants": self.constants.to_dict(),
            "action_scale": list(self.action_scale),
            "hidden": self.hidden,
            "leader_edges": [list(e) for e in self.leader_edges],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RewardConfig":
        return cls(
            variant=d["variant"],
            dynamics_kind=d["dynamics_kind"],
            k_types=int(d["k_types"]),
            feature=FeatureMap.from_dict(d["feature"]),
            lanes=None if d.get("lanes") is None else LaneGeometry.from_dict(d["lanes"]),
            idm=IdmParams.from_dict(d["idm"]),
            constants=RewardConstants.from_dict(d["constants"]),
            action_scale=tuple(float(s) for s in d["action_scale"]),
            hidden=int(d["hidden"]),
            leader_edges=tuple((int(a), int(k)) for a, k in d["leader_edges"]),
        )


RAW_INIT = -2.0  # fresh weights start near the floor: 1 + e^-2


def _weights(raw: torch.Tensor) -> torch.Tensor:
    return 1.0 + torch.exp(raw)


class RewardModel(nn.Module):
    """Common assembly: gating, leader edges, shaping, cumulative sums."""

    def __init__(self, config: RewardConfig, seed: int = 0):
        super().__init__()
        self.config = config
        h = config.hidden
        f = config.feature
        # Shaping potentials: one node net, one edge net per non-null type.
        self.node_potential_net = mlp(f.node_dim, h, 1)
        self.edge_potential_nets = nn.ModuleList(
            [mlp(f.edge_dim, h, 1) for _ in range(config.k_types - 1)]
        )
        # Free constant of the discriminator head. Pure penalty terms bound
        # the shaped reward above by zero, which pins the classifier on the
        # demonstration side; the offset restores the calibration freedom a
        # plain network head would have. It never enters the task reward.
        self.offset = nn.Parameter(torch.zeros((), dtype=DTYPE))

    # -- abstract pieces -------------------------------------------------
    def node_reward(self, states: torch.Tensor, actions_real: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def edge_reward(
        self,
        k: int,
        sender_states: torch.Tensor,
        receiver_states: torch.Tensor,
        sender_actions: torch.Tensor | None = None,
        receiver_actions: torch.Tensor | None = None,
    ) -> torch.Tensor:
        raise NotImplementedError

    # -- shaping ----------------------------------------------------------
    def node_potential(self, states: torch.Tensor) -> torch.Tensor:
        return self.node_potential_net(self.config.feature.node_features(states)).squeeze(-1)

    def edge_potential(self, k: int, sender_states: torch.Tensor, receiver_states: torch.Tensor) -> torch.Tensor:
        if k == 0:
            return torch.zeros(sender_states.shape[:-1], dtype=sender_states.dtype)
        feats = self.config.feature.edge_features(sender_states, receiver_states)
        return self.edge_potential_nets[k - 1](feats).squeeze(-1)

    # -- assembly ----------------------------------------------------------
    def _edge_terms(self, fn, z: torch.Tensor, scene: SceneGraph, sender_states, receiver_states, sender_actions=None, receiver_actions=None) -> torch.Tensor:
        """Sum over edges and types of z_k-gated per-edge scalars; [batch...]."""
        total = None
        for k in range(1, self.config.k_types):
            term = fn(k, sender_states, receiver_states, sender_actions, receiver_actions)
            gated = (term * z[..., k]).sum(dim=-1)
            total = gated if total is None else total + gated
        if total is None:
            total = torch.zeros(z.shape[:-2], dtype=z.dtype)
        return total

    def system_reward(
        self,
        states: torch.Tensor,
        actions_real: torch.Tensor,
        z: torch.Tensor,
        scene: SceneGraph,
        leader_states: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """r(x, a, z) summed over agents (and active edges) at one step.

        states [..., N, d], actions [..., N, a], z [..., E, K]; returns [...].
        """
        node = self.node_reward(states, actions_real).sum(dim=-1)
        send = torch.as_tensor(scene.senders())
        recv = torch.as_tensor(scene.receivers())
        dim = states.dim() - 2
        s_states = states.index_select(dim, send)
        r_states = states.index_select(dim, recv)
        s_act = actions_real.index_select(dim, send)
        r_act = actions_real.index_select(dim, recv)
        def term(k, ss, rs, sa, ra):
            return self.edge_reward(k, ss, rs, sa, ra)
        edge = self._edge_terms(term, z, scene, s_states, r_states, s_act, r_act)
        total = node + edge
        if leader_states is not None:
            zero_act = torch.zeros_like(actions_real[..., 0, :])
            for agent, k in self.config.leader_edges:
                total = total + self.edge_reward(
                    k,
                    leader_states,
                    states[..., agent, :],
                    zero_act,
                    actions_real[..., agent, :],
                )
        return total

    def shaped_transition_rewards(
        self,
        states: torch.Tensor,
        actions_real: torch.Tensor,
        z: torch.Tensor,
        scene: SceneGraph,
        leader_states: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Per-transition shaped system reward f_t, [B, T-1].

        states [B, T, N, d]; transition t uses (x_t, a_t, x_{t+1}) for
        t = 0 .. T-2. Each reward term r is augmented with the temporal
        difference of its potential: f = r + h(next) - h(cur).
        """
        cur, nxt = states[:, :-1], states[:, 1:]
        act = actions_real[:, :-1]
        node = self.node_reward(cur, act).sum(dim=-1)
        node = node + self.node_potential(nxt).sum(dim=-1) - self.node_potential(cur).sum(dim=-1)

        send = torch.as_tensor(scene.senders())
        recv = torch.as_tensor(scene.receivers())
        s_cur, r_cur = cur.index_select(2, send), cur.index_select(2, recv)
        s_nxt, r_nxt = nxt.index_select(2, send), nxt.index_select(2, recv)
        s_act, r_act = act.index_select(2, send), act.index_select(2, recv)
        total = node
        z_t = z.unsqueeze(1)  # broadcast over transitions
        for k in range(1, self.config.k_types):
            term = (
                self.edge_reward(k, s_cur, r_cur, s_act, r_act)
                + self.edge_potential(k, s_nxt, r_nxt)
                - self.edge_potential(k, s_cur, r_cur)
            )
            total = total + (term * z_t[..., k]).sum(dim=-1)
        if leader_states is not None:
            l_cur, l_nxt = leader_states[:, :-1], leader_states[:, 1:]
            zero_act = torch.zeros_like(act[..., 0, :])
            for agent, k in self.config.leader_edges:
                term = (
                    self.edge_reward(k, l_cur, cur[:, :, agent], zero_act, act[:, :, agent])
                    + self.edge_potential(k, l_nxt, nxt[:, :, agent])
                    - self.edge_potential(k, l_cur, cur[:, :, agent])
                )
                total = total + term
        return total + self.offset

    @torch.no_grad()
    def calibrate_offset(
        self,
        states: torch.Tensor,
        actions_real: torch.Tensor,
        z: torch.Tensor,
        scene: SceneGraph,
        leader_states: torch.Tensor | None = None,
    ) -> float:
        """Zero the mean shaped reward on a reference batch.

        Run once on demonstrations before adversarial training so the
        discriminator starts balanced instead of saturated by the penalty
        terms. Returns the offset value set.
        """
        self.offset.zero_()
        f = self.shaped_transition_rewards(states, actions_real, z, scene, leader_states)
        self.offset.copy_(-f.mean())
        return float(self.offset)

    def cumulative_reward(
        self,
        states: torch.Tensor,
        actions_real: torch.Tensor,
        z: torch.Tensor,
        scene: SceneGraph,
        leader_states: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Sum of system rewards over all stored steps, [B]."""
        z_t = z.unsqueeze(1)
        lead = leader_states if leader_states is None else leader_states
        return self.system_reward(states, actions_real, z_t, scene, lead).sum(dim=-1)


class SyntheticCarFollowingReward(RewardModel):
    """Longitudinal chain scene: speed/smoothness node terms, follow edges."""

    def __init__(self, config: RewardConfig, seed: int = 0):
        super().__init__(config, seed)
        if config.k_types != 2:
            raise InvalidArgumentError("car-following uses K=2 (none, follow)")
        self.node_raw = nn.Parameter(torch.full((3,), RAW_INIT, dtype=DTYPE))
        self.follow_raw = nn.Parameter(torch.full((2,), RAW_INIT, dtype=DTYPE))
        init_module(self, seeded_generator(seed))

    def node_reward(self, states, actions_real):
        w = _weights(self.node_raw)
        v, a = states[..., 1], states[..., 2]
        jerk = actions_real[..., 0]
        return -(
            w[0] * f_speed(v, self.config.constants.v_lim)
            + w[1] * a * a
            + w[2] * jerk * jerk
        )

    def edge_reward(self, k, sender_states, receiver_states, sender_actions=None, receiver_actions=None):
        if k != 1:
            raise InvalidArgumentError(f"no edge type {k} in a K=2 vocabulary")
        w = _weights(self.follow_raw)
        x_i, v_i = sender_states[..., 0], sender_states[..., 1]
        x_j, v_j = receiver_states[..., 0], receiver_states[..., 1]
        return -(
            w[0] * g_idm(x_i, v_i, x_j, v_j, self.config.idm)
            + w[1] * g_dist(x_i, x_j, self.config.constants.zeta)
        )


class SyntheticLaneChangingReward(RewardModel):
    """Two-lane merge scene on Dubins states: follow/yield/cut-in edge types."""

    def __init__(self, config: RewardConfig, seed: int = 0):
        super().__init__(config, seed)
        if config.k_types != 4:
            raise InvalidArgumentError("lane-changing uses K=4 (none, follow, yield, cutin)")
        self.node_raw = nn.Parameter(torch.full((7,), RAW_INIT, dtype=DTYPE))
        self.follow_raw = nn.Parameter(torch.full((3,), RAW_INIT, dtype=DTYPE))
        self.yield_raw = nn.Parameter(torch.full((2,), RAW_INIT, dtype=DTYPE))
        self.cutin_raw = nn.Parameter(torch.full((2,), RAW_INIT, dtype=DTYPE))
        init_module(self, seeded_generator(seed))

    def node_reward(self, states, actions_real):
        cfg = self.config
        w = _weights(self.node_raw)
        y, v, theta, a, omega = (states[..., i] for i in range(1, 6))
        ja, jw = actions_real[..., 0], actions_real[..., 1]
        return -(
            w[0] * f_speed(v, cfg.constants.v_lim)
            + w[1] * a * a
            + w[2] * theta * theta
            + w[3] * omega * omega
            + w[4] * ja * ja
            + w[5] * jw * jw
            + w[6] * f_lane(y, cfg.lanes, cfg.constants)
        )

    def _xyv(self, states):
        return states[..., 0], states[..., 1], states[..., 2]

    def edge_reward(self, k, sender_states, receiver_states, sender_actions=None, receiver_actions=None):
        cfg = self.config
        x_i, y_i, v_i = self._xyv(sender_states)
        x_j, y_j, v_j = self._xyv(receiver_states)
        if k == 1:  # j follows i, including across lanes
            w = _weights(self.follow_raw)
            return -(
                w[0] * g_idm(x_i, v_i, x_j, v_j, cfg.idm)
                + w[1] * g_dist(x_i, x_j, cfg.constants.zeta)
                + w[2] * g_lat(y_i, y_j, cfg.lanes)
            )
        if k == 2:  # j yields to i
            w = _weights(self.yield_raw)
            return -(
                w[0] * g_yield(x_i, v_i, y_i, x_j, v_j, y_j, cfg.lanes, cfg.idm, cfg.constants.dx_yield)
                + w[1] * g_dist(x_i, x_j, cfg.constants.zeta)
            )
        if k == 3:  # j cuts in front of i: yield form with the roles swapped
            w = _weights(self.cutin_raw)
            return -(
                w[0] * g_yield(x_j, v_j, y_j, x_i, v_i, y_i, cfg.lanes, cfg.idm, cfg.constants.dx_yield)
                + w[1] * g_dist(x_j, x_i, cfg.constants.zeta)
            )
        raise InvalidArgumentError(f"no edge type {k} in a K=4 vocabulary")


class NaturalCarFollowingReward(RewardModel):
    """Learned-reference rewards for ingested longitudinal logs (K=2)."""

    def __init__(self, config: RewardConfig, seed: int = 0):
        super().__init__(config, seed)
        if config.k_types != 2:
            raise InvalidArgumentError("car-following uses K=2 (none, follow)")
        h = config.hidden
        f = config.feature
        self.node_raw = nn.Parameter(torch.full((3,), RAW_INIT, dtype=DTYPE))
        self.follow_raw = nn.Parameter(torch.full((2,), RAW_INIT, dtype=DTYPE))
        # Nonnegative learned references (relu output activation).
        self.h_speed = nn.Sequential(mlp(f.node_dim, h, 1), nn.ReLU())
        self.h_pair_speed = nn.Sequential(mlp(f.edge_dim, h, 1), nn.ReLU())
        self.h_gap = nn.Sequential(mlp(f.edge_dim, h, 1), nn.ReLU())
        init_module(self, seeded_generator(seed))

    def node_reward(self, states, actions_real):
        w = _weights(self.node_raw)
        v = dynamics.longitudinal_speed(self.config.dynamics_kind, states)
        a = states[..., 2]
        jerk = actions_real[..., 0]
        ref = self.h_speed(self.config.feature.node_features(states)).squeeze(-1)
        return -(w[0] * (v - ref) ** 2 + w[1] * a * a + w[2] * jerk * jerk)

    def edge_reward(self, k, sender_states, receiver_states, sender_actions=None, receiver_actions=None):
        if k != 1:
            raise InvalidArgumentError(f"no edge type {k} in a K=2 vocabulary")
        w = _weights(self.follow_raw)
        feats = self.config.feature.edge_features(sender_states, receiver_states)
        v_j = dynamics.longitudinal_speed(self.config.dynamics_kind, receiver_states)
        x_i, x_j = sender_states[..., 0], receiver_states[..., 0]
        v_ref = self.h_pair_speed(feats).squeeze(-1)
        gap_ref = self.h_gap(feats).squeeze(-1)
        return -(
            w[0] * (v_j - v_ref) ** 2
            + w[1] * relu0(gap_ref - x_i + x_j) ** 2
        )


class NaturalLaneChangingReward(RewardModel):
    """Learned-reference rewards for planar logs (K=3: none, follow, yield)."""

    def __init__(self, config: RewardConfig, seed: int = 0):
        super().__init__(config, seed)
        if config.k_types != 3:
            raise InvalidArgumentError("natural lane-changing uses K=3 (none, follow, yield)")
        if config.dynamics_kind != "point_2d":
            raise InvalidArgumentError("natural lane-changing expects point_2d states")
        h = config.hidden
        f = config.feature
        self.node_raw = nn.Parameter(torch.full((6,), RAW_INIT, dtype=DTYPE))
        self.follow_raw = nn.Parameter(torch.full((2,), RAW_INIT, dtype=DTYPE))
        self.yield_raw = nn.Parameter(torch.full((2,), RAW_INIT, dtype=DTYPE))
        self.h_speed = nn.Sequential(mlp(f.node_dim, h, 1), nn.ReLU())
        self.h_pair_speed = nn.Sequential(mlp(f.edge_dim, h, 1), nn.ReLU())
        self.h_gap = nn.Sequential(mlp(f.edge_dim, h, 1), nn.ReLU())
        self.h_dpoc = nn.Sequential(mlp(f.edge_dim, h, 1), nn.ReLU())
        self.h_tcol = nn.Sequential(mlp(f.edge_dim, h, 1), nn.ReLU())
        init_module(self, seeded_generator(seed))

    def node_reward(self, states, actions_real):
        cfg = self.config
        w = _weights(self.node_raw)
        y, vx, vy, ax, ay = (states[..., i] for i in range(1, 6))
        jx, jy = actions_real[..., 0], actions_real[..., 1]
        ref = self.h_speed(cfg.feature.node_features(states)).squeeze(-1)
        y_target = cfg.lanes.nearest_centerline(y)
        return -(
            w[0] * (vx - ref) ** 2
            + w[1] * ax * ax
            + w[2] * (jx * jx + jy * jy)
            + w[3] * (y - y_target) ** 2
            + w[4] * vy * vy
            + w[5] * ay * ay
        )

    def edge_reward(self, k, sender_states, receiver_states, sender_actions=None, receiver_actions=None):
        cfg = self.config
        feats = cfg.feature.edge_features(sender_states, receiver_states)
        x_i, x_j = sender_states[..., 0], receiver_states[..., 0]
        if k == 1:
            w = _weights(self.follow_raw)
            v_j = dynamics.longitudinal_speed(cfg.dynamics_kind, receiver_states)
            v_ref = self.h_pair_speed(feats).squeeze(-1)
            gap_ref = self.h_gap(feats).squeeze(-1)
            return -(w[0] * (v_j - v_ref) ** 2 + w[1] * relu0(gap_ref - x_i + x_j) ** 2)
        if k == 2:
            w = _weights(self.yield_raw)
            cp = collision_point(
                dynamics.position_vector(cfg.dynamics_kind, sender_states),
                dynamics.velocity_vector(cfg.dynamics_kind, sender_states),
                dynamics.position_vector(cfg.dynamics_kind, receiver_states),
                dynamics.velocity_vector(cfg.dynamics_kind, receiver_states),
                r_max=cfg.constants.r_max,
                angle_tol=cfg.constants.angle_tol,
            )
            d_ref = self.h_dpoc(feats).squeeze(-1)
            t_ref = self.h_tcol(feats).squeeze(-1)
            spatial = relu0((x_j - cp.point[..., 0]) - d_ref) ** 2
            timing = relu0(t_ref - (cp.t_i - cp.t_j)) ** 2
            mask = cp.valid.to(feats.dtype)
            return -mask * (w[0] * spatial + w[1] * timing)
        raise InvalidArgumentError(f"no edge type {k} in a K=3 vocabulary")


class MlpReward(RewardModel):
    """Unstructured rewards: plain networks per node and per non-null type."""

    def __init__(self, config: RewardConfig, seed: int = 0):
        super().__init__(config, seed)
        h = config.hidden
        f = config.feature
        a_dim = dynamics.action_dim(config.dynamics_kind)
        self.node_net = mlp(f.node_dim + a_dim, h, 1)
        self.edge_nets = nn.ModuleList(
            [mlp(f.edge_dim + 2 * a_dim, h, 1) for _ in range(config.k_types - 1)]
        )
        init_module(self, seeded_generator(seed))

    def _norm_actions(self, actions_real):
        scale = torch.as_tensor(self.config.action_scale, dtype=DTYPE)
        return actions_real / scale

    def node_reward(self, states, actions_real):
        inp = torch.cat(
            [self.config.feature.node_features(states), self._norm_actions(actions_real)],
            dim=-1,
        )
        return self.node_net(inp).squeeze(-1)

    def edge_reward(self, k, sender_states, receiver_states, sender_actions=None, receiver_actions=None):
        if not 1 <= k < self.config.k_types:
            raise InvalidArgumentError(f"no edge type {k}")
        feats = self.config.feature.edge_features(sender_states, receiver_states)
        if sender_actions is None:
            sender_actions = torch.zeros(*sender_states.shape[:-1], len(self.config.action_scale), dtype=DTYPE)
        if receiver_actions is None:
            receiver_actions = torch.zeros_like(sender_actions)
        inp = torch.cat(
            [feats, self._norm_actions(sender_actions), self._norm_actions(receiver_actions)],
            dim=-1,
        )
        return self.edge_nets[k - 1](inp).squeeze(-1)


_VARIANTS = {
    "cf_synthetic": SyntheticCarFollowingReward,
    "lc_synthetic": SyntheticLaneChangingReward,
    "cf_natural": NaturalCarFollowingReward,
    "lc_natural": NaturalLaneChangingReward,
    "mlp": MlpReward,
}


def build_reward(config: RewardConfig, seed: int = 0) -> RewardModel:
    return _VARIANTS[config.variant](config, seed=seed)


def set_raw_weights(model: RewardModel, values: dict[str, list[float]]) -> RewardModel:
    """Overwrite named *_raw weight vectors (ground-truth reward construction)."""
    for name, vals in values.items():
        param = getattr(model, name, None)
        if not isinstance(param, nn.Parameter):
            raise InvalidArgumentError(f"{name!r} is not a weight vector of this model")
        t = torch.as_tensor(vals, dtype=DTYPE)
        if t.shape != param.shape:
            raise InvalidArgumentError(
                f"{name!r} expects shape {tuple(param.shape)}, got {tuple(t.shape)}"
            )
        with torch.no_grad():
            param.copy_(t)
    return model
