"""Network input features and lane geometry.

Policies, encoders, and learned reward components consume features rather
than raw states so that behavior is invariant to longitudinal translation:
node features drop absolute x entirely, edge features carry the x gap, and
the encoder's per-agent series is centered on the scene's mean initial x.
Lateral position stays absolute because lane geometry is fixed. Scales are
plain constants recorded in the scenario config.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from . import dynamics
from .errors import InvalidArgumentError
from .validation import check_positive


@dataclass(frozen=True)
class LaneGeometry:
    """Parallel straight lanes along x: centerlines at y = offset + i*width."""

    n_lanes: int = 1
    width: float = 4.0
    offset: float = 0.0

    def __post_init__(self):
        if self.n_lanes < 1:
            raise InvalidArgumentError("need at least one lane")
        check_positive("width", self.width)

    def centerlines(self) -> torch.Tensor:
        return self.offset + self.width * torch.arange(self.n_lanes, dtype=torch.float64)

    def nearest_centerline(self, y: torch.Tensor) -> torch.Tensor:
        idx = self.lane_index(y)
        return self.offset + self.width * idx.to(y.dtype)

    def lane_index(self, y) -> torch.Tensor:
        y = torch.as_tensor(y, dtype=torch.float64) if not torch.is_tensor(y) else y
        raw = torch.round((y - self.offset) / self.width)
        return raw.clamp(0, self.n_lanes - 1).long()

    def boundary_distance(self, y: torch.Tensor) -> torch.Tensor:
        """Distance to the nearest lane boundary (half-width offsets from centerlines)."""
        bounds = self.offset + self.width * (
            torch.arange(self.n_lanes + 1, dtype=y.dtype) - 0.5
        )
        return (y.unsqueeze(-1) - bounds).abs().amin(dim=-1)

    def same_lane(self, y1: torch.Tensor, y2: torch.Tensor) -> torch.Tensor:
        return (self.lane_index(y1) == self.lane_index(y2)).to(y1.dtype)

    def to_dict(self) -> dict:
        return {"n_lanes": self.n_lanes, "width": self.width, "offset": self.offset}

    @classmethod
    def from_dict(cls, d: dict) -> "LaneGeometry":
        return cls(n_lanes=int(d["n_lanes"]), width=float(d["width"]), offset=float(d["offset"]))


@dataclass(frozen=True)
class FeatureMap:
    """State-to-feature maps for one dynamics kind."""

    kind: str
    pos_scale: float = 10.0
    vel_scale: float = 10.0
    acc_scale: float = 5.0

    def __post_init__(self):
        if self.kind not in dynamics.STATE_FIELDS:
            raise InvalidArgumentError(f"unknown dynamics kind {self.kind!r}")

    def node_features(self, states: torch.Tensor) -> torch.Tensor:
        """Per-agent features without absolute longitudinal position."""
        k = self.kind
        if k == "point_1d":
            return torch.stack(
                [states[..., 1] / self.vel_scale, states[..., 2] / self.acc_scale], dim=-1
            )
        if k == "dubins":
            return torch.stack(
                [
                    states[..., 1] / self.pos_scale,
                    states[..., 2] / self.vel_scale,
                    torch.sin(states[..., 3]),
                    torch.cos(states[..., 3]),
                    states[..., 4] / self.acc_scale,
                    states[..., 5],
                ],
                dim=-1,
            )
        return torch.stack(
            [
                states[..., 1] / self.pos_scale,
                states[..., 2] / self.vel_scale,
                states[..., 3] / self.vel_scale,
                states[..., 4] / self.acc_scale,
                states[..., 5] / self.acc_scale,
            ],
            dim=-1,
        )

    @property
    def node_dim(self) -> int:
        return {"point_1d": 2, "dubins": 6, "point_2d": 5}[self.kind]

    def edge_features(self, sender: torch.Tensor, receiver: torch.Tensor) -> torch.Tensor:
        """Pair features: x gap plus both nodes' features."""
        gap = (sender[..., 0] - receiver[..., 0]) / self.pos_scale
        return torch.cat(
            [gap.unsqueeze(-1), self.node_features(sender), self.node_features(receiver)],
            dim=-1,
        )

    @property
    def edge_dim(self) -> int:
        return 1 + 2 * self.node_dim

    def series_features(self, states: torch.Tensor, center: torch.Tensor) -> torch.Tensor:
        """Encoder inputs: node features plus x centered on the scene offset.

        `states` is [..., N, d]; `center` broadcasts against states[..., 0].
        """
        x_rel = (states[..., 0] - center) / self.pos_scale
        return torch.cat([x_rel.unsqueeze(-1), self.node_features(states)], dim=-1)

    @property
    def series_dim(self) -> int:
        return 1 + self.node_dim

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "pos_scale": self.pos_scale,
            "vel_scale": self.vel_scale,
            "acc_scale": self.acc_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureMap":
        return cls(
            kind=d["kind"],
            pos_scale=float(d["pos_scale"]),
            vel_scale=float(d["vel_scale"]),
            acc_scale=float(d["acc_scale"]),
        )


def scene_center(states: torch.Tensor) -> torch.Tensor:
    """Mean initial x over agents for a [B, T, N, d] batch -> [B, 1, 1]."""
    return states[:, 0, :, 0].mean(dim=-1).reshape(-1, 1, 1)
