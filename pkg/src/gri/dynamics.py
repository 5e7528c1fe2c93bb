"""Vehicle kinematics.

Three deterministic discrete-time models, all driven by jerk-level actions so
accelerations stay differentiable state:

- point_1d: state (x, v, a), action (jerk,)
- dubins:   state (x, y, v, theta, a, omega), action (jerk, yaw_jerk)
- point_2d: state (x, y, vx, vy, ax, ay), action (jerk_x, jerk_y); two
  decoupled 1-d chains sharing the clock.

Position integrates with the trapezoidal v*dt + 0.5*a*dt^2 term; velocity and
acceleration integrate forward-Euler. All functions accept torch tensors with
arbitrary batch dimensions and are differentiable; the heading wrap keeps
theta in (-pi, pi] and is excluded from the gradient path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import InvalidArgumentError
from .validation import check_positive

STATE_FIELDS = {
    "point_1d": ("x", "v", "a"),
    "dubins": ("x", "y", "v", "theta", "a", "omega"),
    "point_2d": ("x", "y", "vx", "vy", "ax", "ay"),
}
ACTION_FIELDS = {
    "point_1d": ("jerk",),
    "dubins": ("jerk", "yaw_jerk"),
    "point_2d": ("jerk_x", "jerk_y"),
}


def state_dim(kind: str) -> int:
    return len(_fields(kind))


def action_dim(kind: str) -> int:
    return len(ACTION_FIELDS[_check_kind(kind)])


def _check_kind(kind: str) -> str:
    if kind not in STATE_FIELDS:
        raise InvalidArgumentError(f"unknown dynamics kind {kind!r}")
    return kind


def _fields(kind: str):
    return STATE_FIELDS[_check_kind(kind)]


def state_component(kind: str, name: str) -> int:
    fields = _fields(kind)
    if name not in fields:
        raise InvalidArgumentError(f"{kind} state has no component {name!r}")
    return fields.index(name)


def wrap_angle(theta: torch.Tensor) -> torch.Tensor:
    """Map angles into (-pi, pi]; the integer wrap count carries no gradient."""
    k = torch.ceil((theta - math.pi) / (2 * math.pi)).detach()
    return theta - 2 * math.pi * k


def _check_step_args(state, action, dt, kind):
    check_positive("dt", dt)
    if state.shape[-1] != state_dim(kind):
        raise InvalidArgumentError(
            f"{kind} state must have last dim {state_dim(kind)}, got {state.shape[-1]}"
        )
    if action.shape[-1] != action_dim(kind):
        raise InvalidArgumentError(
            f"{kind} action must have last dim {action_dim(kind)}, got {action.shape[-1]}"
        )


def step_point_1d(state: torch.Tensor, action: torch.Tensor, dt: float) -> torch.Tensor:
    _check_step_args(state, action, dt, "point_1d")
    x, v, a = state[..., 0], state[..., 1], state[..., 2]
    jerk = action[..., 0]
    return torch.stack(
        [x + v * dt + 0.5 * a * dt * dt, v + a * dt, a + jerk * dt], dim=-1
    )


def step_dubins(state: torch.Tensor, action: torch.Tensor, dt: float) -> torch.Tensor:
    _check_step_args(state, action, dt, "dubins")
    x, y, v, theta, a, omega = (state[..., i] for i in range(6))
    jerk, yaw_jerk = action[..., 0], action[..., 1]
    return torch.stack(
        [
            x + v * torch.cos(theta) * dt,
            y + v * torch.sin(theta) * dt,
            v + a * dt,
            wrap_angle(theta + omega * dt),
            a + jerk * dt,
            omega + yaw_jerk * dt,
        ],
        dim=-1,
    )


def step_point_2d(state: torch.Tensor, action: torch.Tensor, dt: float) -> torch.Tensor:
    _check_step_args(state, action, dt, "point_2d")
    x, y, vx, vy, ax, ay = (state[..., i] for i in range(6))
    jx, jy = action[..., 0], action[..., 1]
    return torch.stack(
        [
            x + vx * dt + 0.5 * ax * dt * dt,
            y + vy * dt + 0.5 * ay * dt * dt,
            vx + ax * dt,
            vy + ay * dt,
            ax + jx * dt,
            ay + jy * dt,
        ],
        dim=-1,
    )


_STEPS = {"point_1d": step_point_1d, "dubins": step_dubins, "point_2d": step_point_2d}


def step(kind: str, state: torch.Tensor, action: torch.Tensor, dt: float) -> torch.Tensor:
    return _STEPS[_check_kind(kind)](state, action, dt)


def leader_advance(kind: str, state: torch.Tensor, dt: float) -> torch.Tensor:
    """Advance a replayed leader at constant velocity; accelerations forced to zero."""
    _check_kind(kind)
    check_positive("dt", dt)
    out = state.clone()
    if kind == "point_1d":
        out[..., 0] = state[..., 0] + state[..., 1] * dt
        out[..., 2] = 0.0
    elif kind == "dubins":
        out[..., 0] = state[..., 0] + state[..., 2] * torch.cos(state[..., 3]) * dt
        out[..., 1] = state[..., 1] + state[..., 2] * torch.sin(state[..., 3]) * dt
        out[..., 4] = 0.0
        out[..., 5] = 0.0
    else:
        out[..., 0] = state[..., 0] + state[..., 2] * dt
        out[..., 1] = state[..., 1] + state[..., 3] * dt
        out[..., 4] = 0.0
        out[..., 5] = 0.0
    return out


def longitudinal_position(kind: str, states: torch.Tensor) -> torch.Tensor:
    return states[..., 0]


def lateral_position(kind: str, states: torch.Tensor) -> torch.Tensor:
    """y coordinate; zero for 1-d states."""
    _check_kind(kind)
    if kind == "point_1d":
        return torch.zeros_like(states[..., 0])
    return states[..., 1]


def speed(kind: str, states: torch.Tensor) -> torch.Tensor:
    """Scalar speed: v for 1-d/dubins, velocity magnitude for planar point mass."""
    _check_kind(kind)
    if kind == "point_2d":
        return torch.sqrt(states[..., 2] ** 2 + states[..., 3] ** 2 + 1e-300)
    if kind == "dubins":
        return states[..., 2]
    return states[..., 1]


def longitudinal_speed(kind: str, states: torch.Tensor) -> torch.Tensor:
    _check_kind(kind)
    if kind == "point_2d":
        return states[..., 2]
    if kind == "dubins":
        return states[..., 2]
    return states[..., 1]


def velocity_vector(kind: str, states: torch.Tensor) -> torch.Tensor:
    """Planar velocity (vx, vy); 1-d states get vy = 0."""
    _check_kind(kind)
    if kind == "point_1d":
        v = states[..., 1]
        return torch.stack([v, torch.zeros_like(v)], dim=-1)
    if kind == "dubins":
        v, theta = states[..., 2], states[..., 3]
        return torch.stack([v * torch.cos(theta), v * torch.sin(theta)], dim=-1)
    return states[..., 2:4]


def position_vector(kind: str, states: torch.Tensor) -> torch.Tensor:
    _check_kind(kind)
    if kind == "point_1d":
        x = states[..., 0]
        return torch.stack([x, torch.zeros_like(x)], dim=-1)
    return states[..., 0:2]


@dataclass(frozen=True)
class State1D:
    x: float
    v: float
    a: float = 0.0

    @property
    def array(self) -> np.ndarray:
        return np.array([self.x, self.v, self.a], dtype=np.float64)


@dataclass(frozen=True)
class StateDubins:
    x: float
    y: float
    v: float
    theta: float = 0.0
    a: float = 0.0
    omega: float = 0.0

    @property
    def array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.v, self.theta, self.a, self.omega], dtype=np.float64)


@dataclass(frozen=True)
class State2D:
    x: float
    y: float
    vx: float
    vy: float = 0.0
    ax: float = 0.0
    ay: float = 0.0

    @property
    def array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy, self.ax, self.ay], dtype=np.float64)
