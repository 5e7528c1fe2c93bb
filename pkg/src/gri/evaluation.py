"""Evaluation metrics and reports.

Reconstruction replays each held-out scene: the encoder picks the MAP graph,
the policy rolls out mean actions from the demonstrated initial state (with
the leader replayed from data), and errors are measured per state component.
Graph metrics compare hard edge-type assignments; baselines whose latent
labels carry no fixed meaning are scored after the best label permutation.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from . import dynamics
from .autodiff import DTYPE
from .encoder import map_edges, one_hot_types
from .errors import InvalidArgumentError
from .graphs import SceneGraph
from .models import Batch, ModelBundle
from .policy import rollout
from .validation import check_array, check_choice, check_positive


def component_values(kind: str, states: np.ndarray | torch.Tensor, component: str) -> np.ndarray:
    """Extract a named component series; "v" is scalar speed for any kind."""
    arr = states.detach().numpy() if torch.is_tensor(states) else np.asarray(states)
    if component == "v":
        t = torch.as_tensor(arr, dtype=DTYPE)
        return dynamics.speed(kind, t).numpy()
    idx = dynamics.state_component(kind, component)
    return arr[..., idx]


def rmse(
    expert_states: np.ndarray,
    predicted_states: np.ndarray,
    *,
    kind: str,
    component: str = "x",
) -> float:
    """Root mean squared component error over modeled agents and all steps.

    Inputs are [B, T, N, d] (or [T, N, d]); the mean runs over every stored
    (sample, step, modeled agent) entry. Replayed leaders are not part of
    these arrays and contribute nothing.
    """
    e = check_array("expert_states", expert_states)
    p = check_array("predicted_states", predicted_states)
    if e.shape != p.shape:
        raise InvalidArgumentError(f"shape mismatch {e.shape} vs {p.shape}")
    err = component_values(kind, e, component) - component_values(kind, p, component)
    return float(np.sqrt(np.mean(err * err)))


def graph_accuracy(
    predicted: np.ndarray,
    reference: np.ndarray,
    *,
    k_types: int,
    permute: bool = False,
) -> float:
    """Fraction of ordered pairs with matching edge types, over all samples.

    With permute=True the score is maximized over all K! relabelings of the
    predicted types (baselines with arbitrary latent labels).
    """
    pred = check_array("predicted", predicted, dtype=np.int64)
    ref = check_array("reference", reference, dtype=np.int64)
    if pred.shape != ref.shape:
        raise InvalidArgumentError(f"shape mismatch {pred.shape} vs {ref.shape}")
    if not permute:
        return float(np.mean(pred == ref))
    best = 0.0
    for perm in itertools.permutations(range(k_types)):
        relabeled = np.asarray(perm, dtype=np.int64)[pred]
        best = max(best, float(np.mean(relabeled == ref)))
    return best


def edge_frequency_matrices(predicted: np.ndarray, scene: SceneGraph, k_types: int) -> np.ndarray:
    """Per-type adjacency frequencies [K, N, N]; rows index the receiver.

    entry [k, i, j] = relative frequency of edge (sender j -> receiver i)
    taking type k; diagonals are zero.
    """
    pred = check_array("predicted", predicted, ndim=2, dtype=np.int64)
    if pred.shape[1] != scene.n_edges:
        raise InvalidArgumentError("prediction width does not match the scene's edge count")
    n = scene.n_nodes
    out = np.zeros((k_types, n, n), dtype=np.float64)
    b = pred.shape[0]
    for e, (s, r) in enumerate(scene.edges):
        for k in range(k_types):
            out[k, r, s] = np.mean(pred[:, e] == k)
    return out


def horizon_std(ensemble: np.ndarray) -> np.ndarray:
    """Per-step, per-component std over an ensemble [M, T, N, d] -> [T, d].

    Population convention (divide by M), averaged over agents.
    """
    arr = check_array("ensemble", ensemble, ndim=4)
    return arr.std(axis=0, ddof=0).mean(axis=1)


def _wald_ci(p_hat: float, n: int) -> tuple[float, float]:
    half = 1.96 * math.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / n)
    return (p_hat - half, p_hat + half)


def ood_metrics(
    states: np.ndarray,
    *,
    kind: str,
    front: int,
    follower: int,
    delta_f: float = 2.0,
    delta_c: float = 2.0,
) -> dict:
    """Headway-keeping metrics over rolled-out scenes [B, T, N, d].

    success: final headway x_front - x_follower >= delta_f.
    collision: min-over-time center distance <= delta_c.
    delta_y: change of the pair's absolute lateral offset, end minus start.
    All three come with 95% normal-approximation CIs.
    """
    arr = check_array("states", states, ndim=4)
    check_positive("delta_f", delta_f)
    check_positive("delta_c", delta_c)
    n = arr.shape[0]
    t = torch.as_tensor(arr, dtype=DTYPE)
    pos = dynamics.position_vector(kind, t).numpy()  # [B, T, N, 2]
    final_headway = pos[:, -1, front, 0] - pos[:, -1, follower, 0]
    success = (final_headway >= delta_f).astype(np.float64)
    dist = np.sqrt(((pos[:, :, front, :] - pos[:, :, follower, :]) ** 2).sum(axis=-1))
    collision = (dist.min(axis=1) <= delta_c).astype(np.float64)
    lat = np.abs(pos[:, :, front, 1] - pos[:, :, follower, 1])
    delta_y = lat[:, -1] - lat[:, 0]
    p_s, p_c = float(success.mean()), float(collision.mean())
    dy_mean = float(delta_y.mean())
    dy_sem = float(delta_y.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return {
        "n": n,
        "success_rate": p_s,
        "success_ci": _wald_ci(p_s, n),
        "collision_rate": p_c,
        "collision_ci": _wald_ci(p_c, n),
        "delta_y": dy_mean,
        "delta_y_ci": (dy_mean - 1.96 * dy_sem, dy_mean + 1.96 * dy_sem),
        "final_headway_mean": float(final_headway.mean()),
    }


# ---------------------------------------------------------------------------
# Model-level evaluation.

def _scene_for(batch: Batch) -> SceneGraph:
    """Scene sized to the batch; OOD pair scenes are smaller than training ones."""
    return SceneGraph(n_nodes=batch.n_agents)


def infer_map_graphs(bundle: ModelBundle, batch: Batch) -> torch.Tensor:
    """MAP edge types [B, E] from the bundle's encoder."""
    if bundle.encoder is None:
        raise InvalidArgumentError(f"model {bundle.model!r} has no encoder")
    with torch.no_grad():
        logits = bundle.encoder(batch.states, _scene_for(batch))
        return map_edges(logits)


def reconstruct(bundle: ModelBundle, batch: Batch, edge_types: torch.Tensor) -> torch.Tensor:
    """Mean-action rollouts from each scene's initial state, [B, T, N, d]."""
    z = one_hot_types(edge_types, bundle.scenario.k_types)
    with torch.no_grad():
        ro = rollout(
            bundle.policy,
            batch.states[:, 0],
            z,
            _scene_for(batch),
            n_steps=batch.horizon - 1,
            dt=batch.dt,
            leader_states=batch.leader_states,
            mode="mean",
        )
    return ro.states


def ood_evaluate(
    bundle: ModelBundle,
    batch: Batch,
    *,
    delta_f: float = 2.0,
    delta_c: float = 2.0,
) -> dict:
    """Roll out the studied pair under its stored relation graph and score it.

    The pair scene has no leader and the graph is enforced (agent 0 front,
    agent 1 follower); only the initial states of the batch matter.
    """
    if batch.edge_types is None:
        raise InvalidArgumentError("OOD scenes must carry their relation graph")
    recon = reconstruct(bundle, batch, batch.edge_types)
    return ood_metrics(
        recon.numpy(),
        kind=bundle.scenario.dynamics_kind,
        front=0,
        follower=1,
        delta_f=delta_f,
        delta_c=delta_c,
    )


@dataclass
class EvalReport:
    scenario: str
    model: str
    n_samples: int
    metrics: dict = field(default_factory=dict)
    adjacency: list | None = None  # [K, N, N] nested lists
    ood: dict | None = None

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "model": self.model,
            "n_samples": self.n_samples,
            "metrics": self.metrics,
            "adjacency": self.adjacency,
            "ood": self.ood,
        }

    def to_text(self) -> str:
        lines = [
            f"scenario: {self.scenario}",
            f"model: {self.model}",
            f"samples: {self.n_samples}",
        ]
        for k in sorted(self.metrics):
            lines.append(f"{k}: {self.metrics[k]:.6f}")
        if self.ood:
            key = self.ood.get("key", "dx")
            lines.append("ood:")
            for row in self.ood.get("sweep", []):
                parts = [f"{key}={row[key]:+.2f}"]
                if "success_rate" in row:
                    parts.append(f"success={row['success_rate']:.3f}")
                if "success_ci" in row:
                    lo, hi = row["success_ci"]
                    parts.append(f"ci=({lo:.3f},{hi:.3f})")
                if "collision_rate" in row:
                    parts.append(f"collision={row['collision_rate']:.3f}")
                if "delta_y" in row:
                    parts.append(f"delta_y={row['delta_y']:+.3f}")
                lines.append("  " + " ".join(parts))
        return "\n".join(lines) + "\n"

    def save(self, directory) -> None:
        """Write report.json plus flat CSV tables into `directory`."""
        import os

        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "report.json"), "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(directory, "metrics.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            for k in sorted(self.metrics):
                w.writerow([k, repr(float(self.metrics[k]))])
        if self.adjacency is not None:
            with open(os.path.join(directory, "adjacency.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["type", "receiver", "sender", "frequency"])
                arr = np.asarray(self.adjacency)
                for k in range(arr.shape[0]):
                    for i in range(arr.shape[1]):
                        for j in range(arr.shape[2]):
                            w.writerow([k, i, j, repr(float(arr[k, i, j]))])
        if self.ood is not None:
            key = self.ood.get("key", "dx")
            sweep = self.ood.get("sweep", [])
            cols = [key] + sorted({c for row in sweep for c in row} - {key})
            with open(os.path.join(directory, "ood.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(cols)
                for row in sweep:
                    out = []
                    for c in cols:
                        v = row.get(c, "")
                        if isinstance(v, (list, tuple)):
                            v = ";".join(repr(float(x)) for x in v)
                        elif isinstance(v, float):
                            v = repr(v)
                        out.append(v)
                    w.writerow(out)

    @classmethod
    def load(cls, directory) -> "EvalReport":
        import os

        with open(os.path.join(directory, "report.json")) as fh:
            d = json.load(fh)
        return cls(
            scenario=d["scenario"],
            model=d["model"],
            n_samples=d["n_samples"],
            metrics=d["metrics"],
            adjacency=d.get("adjacency"),
            ood=d.get("ood"),
        )


def evaluate_model(
    bundle: ModelBundle,
    batch: Batch,
    *,
    permute: bool = False,
    graphs_override: torch.Tensor | None = None,
) -> EvalReport:
    """Reconstruction + graph metrics on a held-out batch.

    Models without an encoder evaluate under `graphs_override` (or the
    homogeneous graph for the fixed-graph ablation, or ground truth for
    the supervised baseline).
    """
    scn = bundle.scenario
    kind = scn.dynamics_kind
    if graphs_override is not None:
        pred_types = graphs_override
    elif bundle.encoder is not None:
        pred_types = infer_map_graphs(bundle, batch)
    elif batch.edge_types is not None:
        pred_types = batch.edge_types
    else:
        raise InvalidArgumentError("no way to assign graphs for this model")
    recon = reconstruct(bundle, batch, pred_types)
    expert = batch.states.numpy()
    recon_np = recon.numpy()
    metrics = {"rmse_x": rmse(expert, recon_np, kind=kind, component="x")}
    if kind != "point_1d":
        metrics["rmse_y"] = rmse(expert, recon_np, kind=kind, component="y")
    metrics["rmse_v"] = rmse(expert, recon_np, kind=kind, component="v")
    report_acc = bundle.encoder is not None or graphs_override is not None
    if batch.edge_types is not None and report_acc:
        metrics["graph_accuracy"] = graph_accuracy(
            pred_types.numpy(), batch.edge_types.numpy(), k_types=scn.k_types
        )
        if permute:
            metrics["graph_accuracy_permuted"] = graph_accuracy(
                pred_types.numpy(), batch.edge_types.numpy(), k_types=scn.k_types, permute=True
            )
    adjacency = edge_frequency_matrices(
        pred_types.numpy() if torch.is_tensor(pred_types) else np.asarray(pred_types),
        _scene_for(batch),
        scn.k_types,
    ).tolist()
    return EvalReport(
        scenario=scn.name,
        model=bundle.model,
        n_samples=batch.size,
        metrics=metrics,
        adjacency=adjacency,
    )
