"""Posterior over discrete interaction graphs.

The encoder embeds each agent's full state series with a 1-d convolution and
attentive pooling, then runs one node -> edge -> node -> edge message-passing
round over the complete bidirected scene graph, producing independent
categorical logits per ordered pair. Sampling uses the concrete
(Gumbel-softmax) relaxation during optimization and straight-through hard
one-hots for evaluation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .autodiff import DTYPE, init_module, seeded_generator
from .errors import InvalidArgumentError, NumericFaultError
from .features import FeatureMap, scene_center
from .graphs import SceneGraph
from .validation import check_array, check_positive

EPS = 1e-20


def mlp(d_in: int, hidden: int, d_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(d_in, hidden), nn.ReLU(), nn.Linear(hidden, d_out)
    )


@dataclass(frozen=True)
class EncoderConfig:
    k_types: int
    feature: FeatureMap
    hidden: int = 64
    conv_kernel: int = 5
    p_none: float = 0.9  # null mass of the prior the head bias starts at

    def to_dict(self) -> dict:
        return {
            "k_types": self.k_types,
            "feature": self.feature.to_dict(),
            "hidden": self.hidden,
            "conv_kernel": self.conv_kernel,
            "p_none": self.p_none,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(
            k_types=int(d["k_types"]),
            feature=FeatureMap.from_dict(d["feature"]),
            hidden=int(d["hidden"]),
            conv_kernel=int(d["conv_kernel"]),
            p_none=float(d.get("p_none", 0.9)),
        )


class EdgeEncoder(nn.Module):
    """q(z | trajectory): per-edge categorical logits over K types."""

    def __init__(self, config: EncoderConfig, seed: int = 0):
        super().__init__()
        self.config = config
        h = config.hidden
        d_in = config.feature.series_dim
        pad = config.conv_kernel // 2
        self.conv = nn.Sequential(
            nn.Conv1d(d_in, h, config.conv_kernel, padding=pad),
            nn.ReLU(),
            nn.Conv1d(h, h, config.conv_kernel, padding=pad),
            nn.ReLU(),
        )
        self.attn = nn.Linear(h, 1)
        self.edge1 = mlp(2 * h, h, h)
        self.node1 = mlp(h, h, h)
        self.edge2 = mlp(2 * h, h, config.k_types)
        init_module(self, seeded_generator(seed))
        # Fresh posteriors start near the sparse prior: a confident null basin
        # at the start starves rare types of gradient, and a near-uniform start
        # floods scenes with spurious edges.
        with torch.no_grad():
            self.edge2[2].bias.copy_(torch.log(sparse_prior(config.k_types, config.p_none)))

    def embed(self, series: torch.Tensor) -> torch.Tensor:
        """[B, T, N, f] series -> [B, N, h] per-agent embeddings."""
        b, t, n, f = series.shape
        x = series.permute(0, 2, 3, 1).reshape(b * n, f, t)
        feat = self.conv(x)  # [B*N, h, T]
        scores = self.attn(feat.transpose(1, 2))  # [B*N, T, 1]
        weights = torch.softmax(scores, dim=1)
        pooled = (feat.transpose(1, 2) * weights).sum(dim=1)
        return pooled.reshape(b, n, -1)

    def forward(self, states: torch.Tensor, scene: SceneGraph) -> torch.Tensor:
        """[B, T, N, d] raw states -> [B, n_edges, K] logits."""
        if states.dim() != 4:
            raise InvalidArgumentError("encoder expects [batch, time, agent, state] input")
        if states.shape[2] != scene.n_nodes:
            raise InvalidArgumentError(
                f"scene has {scene.n_nodes} nodes but states carry {states.shape[2]} agents"
            )
        series = self.config.feature.series_features(states, scene_center(states))
        h1 = self.embed(series)  # [B, N, h]
        send = torch.as_tensor(scene.senders())
        recv = torch.as_tensor(scene.receivers())
        e1 = self.edge1(torch.cat([h1[:, send], h1[:, recv]], dim=-1))  # [B, E, h]
        # Incoming-message sum per receiver node.
        agg = torch.zeros_like(h1)
        agg = agg.index_add(1, recv, e1)
        h2 = self.node1(agg)
        logits = self.edge2(torch.cat([h2[:, send], h2[:, recv]], dim=-1))
        return logits


def edge_probabilities(logits: torch.Tensor) -> torch.Tensor:
    return torch.softmax(logits, dim=-1)


def map_edges(logits: torch.Tensor) -> torch.Tensor:
    """Most likely type per edge; ties resolve to the lowest index."""
    return torch.argmax(logits, dim=-1)


def sample_edges(
    logits: torch.Tensor,
    *,
    temperature: float,
    generator: torch.Generator | None = None,
    hard: bool = False,
) -> torch.Tensor:
    """Concrete relaxation sample of one-hot edge types, [B, E, K].

    Differentiable w.r.t. logits; with hard=True the forward value is an exact
    one-hot (straight-through gradient).
    """
    check_positive("temperature", temperature)
    u = torch.rand(logits.shape, generator=generator, dtype=logits.dtype)
    gumbel = -torch.log(-torch.log(u + EPS) + EPS)
    y = torch.softmax((logits + gumbel) / temperature, dim=-1)
    if hard:
        idx = y.argmax(dim=-1, keepdim=True)
        y_hard = torch.zeros_like(y).scatter_(-1, idx, 1.0)
        y = (y_hard - y).detach() + y
    return y


def one_hot_types(edge_types: np.ndarray | torch.Tensor, k_types: int) -> torch.Tensor:
    """Hard one-hot encoding [..., K] of integer edge types."""
    if torch.is_tensor(edge_types):
        t = edge_types.detach().clone().long()
    else:
        t = torch.from_numpy(np.array(edge_types, dtype=np.int64))
    return torch.nn.functional.one_hot(t, num_classes=k_types).to(DTYPE)


def sparse_prior(k_types: int, p_none: float = 0.9) -> torch.Tensor:
    """Prior with mass p_none on the null type, remainder uniform."""
    if not 0 < p_none < 1:
        raise InvalidArgumentError("p_none must lie in (0, 1)")
    p = torch.full((k_types,), (1.0 - p_none) / (k_types - 1), dtype=DTYPE)
    p[0] = p_none
    return p


def kl_to_prior(logits: torch.Tensor, prior: torch.Tensor) -> torch.Tensor:
    """Mean over batch of sum over edges of KL(q_edge || prior), in nats."""
    prior = torch.as_tensor(prior, dtype=logits.dtype)
    if prior.shape[-1] != logits.shape[-1]:
        raise InvalidArgumentError("prior and posterior must share K")
    if not torch.all(prior > 0):
        q_check = torch.softmax(logits, dim=-1).reshape(-1, logits.shape[-1])
        if torch.any((prior <= 0) & (q_check > 0).any(dim=0)):
            raise NumericFaultError("posterior places mass on a zero-prior type")
    log_q = torch.log_softmax(logits, dim=-1)
    q = torch.exp(log_q)
    kl_per_edge = (q * (log_q - torch.log(prior))).sum(dim=-1)
    return kl_per_edge.sum(dim=-1).mean()


def annealed_temperature(step: int, total: int, start: float, end: float) -> float:
    """Linear anneal from start to end over `total` steps."""
    if total <= 1:
        return end
    frac = min(max(step / (total - 1), 0.0), 1.0)
    return start + (end - start) * frac
