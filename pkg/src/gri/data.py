"""Datasets: generation, file format, naturalistic-log ingestion, OOD edits.

Trajectory files are line-delimited text, one record per trajectory:

    traj {"dt": ..., "n_agents": ..., "horizon": ..., ...}
    step [x00, v00, ..., actions..., leader state...]
    step [...]

Every number is written with full float precision, so write -> read is
bit-exact. A dataset directory holds one file per split plus manifest.json
carrying the scenario, its hash, the seed, and the split sizes.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np
import torch

from . import dynamics
from .autodiff import DTYPE, derive_seed, seeded_generator
from .encoder import one_hot_types
from .errors import InvalidArgumentError, NumericFaultError, ParseError
from .graphs import InteractionGraph, Sample, SceneGraph, Trajectory, graph_from_pairs
from .models import ModelBundle
from .policy import rollout
from .scenarios import ScenarioConfig, sample_initial_states
from .validation import check_int_range

FORMAT_VERSION = 1
SPLITS = ("train", "val", "test")


# ---------------------------------------------------------------------------
# Trajectory text format.

def _pack_row(sample: Sample, t: int) -> list[float]:
    tr = sample.trajectory
    row = list(tr.states[t].reshape(-1)) + list(tr.actions[t].reshape(-1))
    if tr.leader_states is not None:
        row += list(tr.leader_states[t])
    return [float(v) for v in row]


def save_samples(samples: list[Sample], path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        for sample in samples:
            tr = sample.trajectory
            header = {
                "dt": tr.dt,
                "n_agents": tr.n_agents,
                "horizon": tr.horizon,
                "state_dim": tr.state_dim,
                "action_dim": tr.action_dim,
                "leader": tr.leader_states is not None,
                "edge_types": None if sample.graph is None
                else [int(k) for k in sample.graph.edge_types],
            }
            fh.write("traj " + json.dumps(header, sort_keys=True) + "\n")
            for t in range(tr.horizon):
                fh.write("step " + json.dumps(_pack_row(sample, t)) + "\n")


def load_samples(path, *, k_types: int | None = None) -> list[Sample]:
    """Parse a trajectory file; `k_types` sizes the graphs' type vocabulary.

    Files written by save_samples load back bit-exactly. Malformed lines
    raise a parse error carrying the 1-based line number.
    """
    samples: list[Sample] = []
    header: dict | None = None
    rows: list[list[float]] = []
    start_line = 0

    def finish(line_no: int):
        nonlocal header, rows
        if header is None:
            return
        if len(rows) != header["horizon"]:
            raise ParseError(
                "row count does not match the header horizon", path=str(path), line=start_line
            )
        n, d = header["n_agents"], header["state_dim"]
        a = header["action_dim"]
        arr = np.asarray(rows, dtype=np.float64)
        want = n * d + n * a + (d if header["leader"] else 0)
        if arr.shape[1] != want:
            raise ParseError(
                f"rows carry {arr.shape[1]} values, expected {want}",
                path=str(path),
                line=start_line,
            )
        states = arr[:, : n * d].reshape(-1, n, d)
        actions = arr[:, n * d : n * d + n * a].reshape(-1, n, a)
        leader = arr[:, n * d + n * a :] if header["leader"] else None
        graph = None
        if header["edge_types"] is not None:
            if k_types is None:
                raise InvalidArgumentError("k_types is required to load graphs")
            scene = SceneGraph(n_nodes=n)
            graph = InteractionGraph(
                scene=scene,
                k_types=k_types,
                edge_types=np.asarray(header["edge_types"], dtype=np.int64),
            )
        samples.append(
            Sample(
                trajectory=Trajectory(
                    dt=header["dt"], states=states, actions=actions, leader_states=leader
                ),
                graph=graph,
            )
        )
        header, rows = None, []

    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            kind, _, payload = line.partition(" ")
            try:
                obj = json.loads(payload)
            except json.JSONDecodeError as exc:
                raise ParseError(
                    f"bad JSON payload: {exc}", path=str(path), line=line_no
                ) from exc
            if kind == "traj":
                finish(line_no)
                header = obj
                start_line = line_no
            elif kind == "step":
                if header is None:
                    raise ParseError(
                        "step row before any traj header", path=str(path), line=line_no
                    )
                rows.append(obj)
            else:
                raise ParseError(f"unknown record kind {kind!r}", path=str(path), line=line_no)
    finish(-1)
    return samples


# ---------------------------------------------------------------------------
# Manifests and dataset directories.

def config_hash(scenario: ScenarioConfig) -> str:
    blob = json.dumps(scenario.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass
class DatasetManifest:
    scenario: dict
    config_sha256: str
    seed: int
    counts: dict  # split -> n samples
    format_version: int = FORMAT_VERSION

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "scenario": self.scenario,
            "config_sha256": self.config_sha256,
            "seed": self.seed,
            "counts": self.counts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(
            scenario=d["scenario"],
            config_sha256=d["config_sha256"],
            seed=int(d["seed"]),
            counts={k: int(v) for k, v in d["counts"].items()},
            format_version=int(d["format_version"]),
        )

    def check(self) -> ScenarioConfig:
        """Re-validate the stored config against its hash; return it."""
        scenario = ScenarioConfig.from_dict(self.scenario)
        if config_hash(scenario) != self.config_sha256:
            raise InvalidArgumentError("manifest hash does not match its stored scenario")
        return scenario


def split_counts(n: int, fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)) -> dict:
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidArgumentError("split fractions must sum to 1")
    n_train = int(round(n * fractions[0]))
    n_val = int(round(n * fractions[1]))
    n_val = min(n_val, n - n_train)
    return {"train": n_train, "val": n_val, "test": n - n_train - n_val}


def write_dataset(
    out_dir,
    scenario: ScenarioConfig,
    samples: list[Sample],
    *,
    seed: int,
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> DatasetManifest:
    """Split contiguously (order is already random) and write one file per split."""
    os.makedirs(out_dir, exist_ok=True)
    counts = split_counts(len(samples), fractions)
    manifest = DatasetManifest(
        scenario=scenario.to_dict(),
        config_sha256=config_hash(scenario),
        seed=seed,
        counts=counts,
    )
    start = 0
    for split in SPLITS:
        part = samples[start : start + counts[split]]
        start += counts[split]
        save_samples(part, os.path.join(out_dir, f"{split}.traj"))
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_manifest(dataset_dir) -> DatasetManifest:
    path = os.path.join(dataset_dir, "manifest.json")
    with open(path) as fh:
        return DatasetManifest.from_dict(json.load(fh))


def load_dataset(dataset_dir, split: str = "train") -> tuple[ScenarioConfig, list[Sample]]:
    """Load one split; the manifest hash is re-checked on every load."""
    if split not in SPLITS:
        raise InvalidArgumentError(f"unknown split {split!r}")
    manifest = load_manifest(dataset_dir)
    scenario = manifest.check()
    samples = load_samples(
        os.path.join(dataset_dir, f"{split}.traj"), k_types=scenario.k_types
    )
    if len(samples) != manifest.counts[split]:
        raise InvalidArgumentError(
            f"split {split} holds {len(samples)} samples, manifest says {manifest.counts[split]}"
        )
    return scenario, samples


# ---------------------------------------------------------------------------
# Synthetic generation.

def _samples_from_rollout(ro, scenario: ScenarioConfig, graph: InteractionGraph) -> list[Sample]:
    states = ro.states.detach().numpy()
    actions = ro.actions_real(scenario.action_scale).detach().numpy()
    leader = None if ro.leader_states is None else ro.leader_states.detach().numpy()
    out = []
    for b in range(states.shape[0]):
        out.append(
            Sample(
                trajectory=Trajectory(
                    dt=scenario.dt,
                    states=states[b],
                    actions=actions[b],
                    leader_states=None if leader is None else leader[b],
                ),
                graph=graph,
            )
        )
    return out


def generate_dataset(
    scenario: ScenarioConfig,
    bundle: ModelBundle,
    n_samples: int,
    seed: int,
    *,
    max_retries: int = 20,
) -> list[Sample]:
    """Expert rollouts from freshly sampled scenes, ground-truth graph attached.

    Sampled (stochastic) actions; non-finite rollouts are regenerated from a
    fresh derived seed, up to `max_retries` per slot.
    """
    check_int_range("n_samples", n_samples, low=1)
    graph = scenario.true_graph()
    z = one_hot_types(graph.edge_types, scenario.k_types)

    def roll(n: int, stream: int) -> list[Sample]:
        gen = seeded_generator(derive_seed(seed, "dataset", stream))
        init, leader = sample_initial_states(scenario, n, gen)
        ro = rollout(
            bundle.policy, init, z.unsqueeze(0).expand(n, -1, -1), scenario.scene_graph(),
            n_steps=scenario.horizon - 1, dt=scenario.dt,
            leader_init=leader, mode="sample", generator=gen,
        )
        return _samples_from_rollout(ro, scenario, graph)

    samples = roll(n_samples, 0)
    ok = [s for s in samples if np.isfinite(s.trajectory.states).all()]
    retries = 0
    while len(ok) < n_samples:
        retries += 1
        if retries > max_retries:
            raise NumericFaultError("rollout kept producing non-finite states")
        warnings.warn(f"regenerating {n_samples - len(ok)} non-finite rollouts")
        extra = roll(n_samples - len(ok), retries)
        ok.extend(s for s in extra if np.isfinite(s.trajectory.states).all())
    return ok[:n_samples]


# ---------------------------------------------------------------------------
# Naturalistic-log ingestion.

LOG_COLUMNS = ("segment_id", "vehicle_id", "frame", "t", "x", "y", "lane_id")
VEL_COLUMNS = ("vx", "vy")


def _diff_series(values: np.ndarray, dt: float) -> np.ndarray:
    """Centered 3-point differences; one-sided 3-point at the ends.

    Second-order accurate everywhere, so derivatives of quadratic series
    are recovered exactly. Falls back to a 2-point difference when the
    series is too short for the 3-point stencil.
    """
    out = np.empty_like(values)
    out[1:-1] = (values[2:] - values[:-2]) / (2 * dt)
    if len(values) >= 3:
        out[0] = (-3 * values[0] + 4 * values[1] - values[2]) / (2 * dt)
        out[-1] = (3 * values[-1] - 4 * values[-2] + values[-3]) / (2 * dt)
    else:
        out[0] = (values[1] - values[0]) / dt
        out[-1] = (values[-1] - values[-2]) / dt
    return out


def _series_to_states(kind: str, x, y, vx, vy, dt) -> tuple[np.ndarray, np.ndarray]:
    """(states [T, d], actions [T, a]) for one vehicle from position series."""
    if kind == "point_1d":
        a = _diff_series(vx, dt)
        jerk = _diff_series(a, dt)
        return np.stack([x, vx, a], axis=1), jerk[:, None]
    if kind == "point_2d":
        ax, ay = _diff_series(vx, dt), _diff_series(vy, dt)
        jx, jy = _diff_series(ax, dt), _diff_series(ay, dt)
        return np.stack([x, y, vx, vy, ax, ay], axis=1), np.stack([jx, jy], axis=1)
    raise InvalidArgumentError(f"log ingestion supports point dynamics, not {kind!r}")


def _canonical_order(scenario: ScenarioConfig, per_vehicle: dict) -> tuple[list, object]:
    """(modeled vehicle ids front-to-back per layout, leader id)."""
    x0 = {vid: rec["x"][0] for vid, rec in per_vehicle.items()}
    if scenario.layout == "chain":
        order = sorted(per_vehicle, key=lambda v: -x0[v])
        return order[1:], order[0]
    lanes = scenario.lanes
    lane0 = {vid: int(lanes.lane_index(float(rec["y"][0]))) for vid, rec in per_vehicle.items()}
    counts: dict[int, list] = {}
    for vid, lane in lane0.items():
        counts.setdefault(lane, []).append(vid)
    target = max(counts, key=lambda lane: len(counts[lane]))
    mergers = [v for v in per_vehicle if lane0[v] != target]
    if len(mergers) != 1:
        raise InvalidArgumentError(
            f"merge layout needs exactly one off-lane vehicle, found {len(mergers)}"
        )
    in_lane = sorted(counts[target], key=lambda v: -x0[v])
    if len(in_lane) != 3:
        raise InvalidArgumentError("merge layout needs a leader and two in-lane vehicles")
    leader, front, rear = in_lane
    return [front, mergers[0], rear], leader


def load_natural_log(path, scenario: ScenarioConfig) -> list[Sample]:
    """Ingest a pre-segmented CSV log into scenario-shaped samples.

    Columns: segment_id, vehicle_id, frame, t, x, y, lane_id and optionally
    vx, vy. Missing velocities (and always accelerations and the jerk
    actions) are derived by centered 3-point differencing. Each segment must
    hold the scenario's agents plus one leader; vehicles are reordered to the
    layout's canonical roles and the scenario's relation pattern is attached
    as the hypothesis graph.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError("empty file", path=str(path), line=1)
        missing = [c for c in LOG_COLUMNS if c not in reader.fieldnames and c != "segment_id"]
        if missing:
            raise ParseError(f"missing columns: {missing}", path=str(path), line=1)
        has_vel = all(c in reader.fieldnames for c in VEL_COLUMNS)
        has_segment = "segment_id" in reader.fieldnames
        rows_by_segment: dict = {}
        for line_no, row in enumerate(reader, start=2):
            try:
                seg = row["segment_id"] if has_segment else "0"
                rec = {
                    "vehicle_id": row["vehicle_id"],
                    "frame": int(row["frame"]),
                    "t": float(row["t"]),
                    "x": float(row["x"]),
                    "y": float(row["y"]),
                }
                if has_vel:
                    rec["vx"] = float(row["vx"])
                    rec["vy"] = float(row["vy"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad row: {exc}", path=str(path), line=line_no) from exc
            rows_by_segment.setdefault(seg, []).append(rec)

    samples = []
    for seg in sorted(rows_by_segment):
        rows = rows_by_segment[seg]
        per_vehicle: dict = {}
        for rec in rows:
            per_vehicle.setdefault(rec["vehicle_id"], []).append(rec)
        n_needed = scenario.n_agents + 1
        if len(per_vehicle) != n_needed:
            raise InvalidArgumentError(
                f"segment {seg!r} holds {len(per_vehicle)} vehicles, expected {n_needed}"
            )
        series: dict = {}
        horizon = None
        dt = None
        for vid, recs in per_vehicle.items():
            recs.sort(key=lambda r: r["frame"])
            ts = np.asarray([r["t"] for r in recs])
            if len(ts) < 3:
                raise InvalidArgumentError(f"vehicle {vid!r} in segment {seg!r} is too short")
            steps = np.diff(ts)
            if np.ptp(steps) > 1e-9:
                raise InvalidArgumentError(f"non-uniform timestamps in segment {seg!r}")
            dt_v = float(steps[0])
            dt = dt_v if dt is None else dt
            if abs(dt_v - dt) > 1e-9:
                raise InvalidArgumentError(f"vehicles disagree on dt in segment {seg!r}")
            if horizon is None:
                horizon = len(ts)
            elif len(ts) != horizon:
                raise InvalidArgumentError(f"ragged vehicle lengths in segment {seg!r}")
            x = np.asarray([r["x"] for r in recs])
            y = np.asarray([r["y"] for r in recs])
            if has_vel:
                vx = np.asarray([r["vx"] for r in recs])
                vy = np.asarray([r["vy"] for r in recs])
            else:
                vx, vy = _diff_series(x, dt_v), _diff_series(y, dt_v)
            series[vid] = {"x": x, "y": y, "vx": vx, "vy": vy}
        modeled, leader_id = _canonical_order(scenario, series)
        kind = scenario.dynamics_kind
        states = []
        actions = []
        for vid in modeled:
            s = series[vid]
            st, ac = _series_to_states(kind, s["x"], s["y"], s["vx"], s["vy"], dt)
            states.append(st)
            actions.append(ac)
        lead = series[leader_id]
        lead_states, _ = _series_to_states(kind, lead["x"], lead["y"], lead["vx"], lead["vy"], dt)
        samples.append(
            Sample(
                trajectory=Trajectory(
                    dt=dt,
                    states=np.stack(states, axis=1),
                    actions=np.stack(actions, axis=1),
                    leader_states=lead_states,
                ),
                graph=scenario.true_graph(),
            )
        )
    return samples


def write_standin_log(path, scenario: ScenarioConfig, n_segments: int, seed: int) -> None:
    """Write a synthetic stand-in for a recorded highway log.

    Followers run an intelligent-driver rule behind their predecessor; a
    merge scenario's off-lane vehicle drifts to the target centerline with a
    smooth lateral profile. Positions only, so ingestion exercises the
    differencing path.
    """
    check_int_range("n_segments", n_segments, low=1)
    idm = scenario.idm
    lanes = scenario.lanes
    horizon, dt = scenario.horizon, scenario.dt
    rows = []
    for seg in range(n_segments):
        gen = seeded_generator(derive_seed(seed, "standin", seg))
        init, leader = sample_initial_states(scenario, 1, gen)
        init = init[0].numpy()
        leader = leader[0].numpy()
        kind = scenario.dynamics_kind
        n = scenario.n_agents
        x = np.empty(n + 1)
        y = np.empty(n + 1)
        v = np.empty(n + 1)
        x[0], y[0] = leader[0], dynamics.lateral_position(kind, torch.as_tensor(leader)).item()
        v[0] = dynamics.speed(kind, torch.as_tensor(leader)).item()
        for i in range(n):
            st = torch.as_tensor(init[i])
            x[i + 1] = init[i][0]
            y[i + 1] = dynamics.lateral_position(kind, st).item()
            v[i + 1] = dynamics.speed(kind, st).item()
        # predecessor index per vehicle: leader chain in file order
        if scenario.layout == "chain":
            front = list(range(n))  # vehicle i+1 follows i
            y_goal = y.copy()
        else:
            # order: leader, agent0, merger, agent2; merger follows agent0,
            # rear agent follows the merger's projected slot
            front = [0, 1, 2]
            y_goal = y.copy()
            y_goal[2] = float(lanes.centerlines()[1])
        t_merge0, t_merge1 = 0.2 * horizon * dt, 0.8 * horizon * dt
        for k in range(horizon):
            t_now = k * dt
            for vid in range(n + 1):
                lane = int(lanes.lane_index(float(y[vid]))) if lanes else 0
                rows.append((seg, vid, k, t_now, x[vid], y[vid], lane))
            acc = np.zeros(n + 1)
            for vid in range(1, n + 1):
                lead_i = front[vid - 1]
                gap = x[lead_i] - x[vid]
                s_star = idm.s0 + max(
                    0.0,
                    v[vid] * idm.t_headway
                    + v[vid] * (v[vid] - v[lead_i]) / (2 * math.sqrt(idm.a_max * idm.b_comf)),
                )
                acc[vid] = idm.a_max * (
                    1 - (v[vid] / max(v[0], 1e-6)) ** 4 - (s_star / max(gap, 0.5)) ** 2
                )
            x += v * dt + 0.5 * acc * dt * dt
            v = np.maximum(v + acc * dt, 0.0)
            if scenario.layout == "merge":
                frac = min(max((t_now - t_merge0) / (t_merge1 - t_merge0), 0.0), 1.0)
                blend = frac * frac * (3 - 2 * frac)
                y[2] = (1 - blend) * float(lanes.centerlines()[0]) + blend * y_goal[2]
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for seg, vid, k, t_now, xv, yv, lane in rows:
            w.writerow([seg, vid, k, repr(float(t_now)), repr(float(xv)), repr(float(yv)), lane])


# ---------------------------------------------------------------------------
# OOD perturbation.

def make_ood_dataset(
    samples: list[Sample],
    scenario: ScenarioConfig,
    *,
    delta: float | None = None,
    dx: float | None = None,
) -> list[Sample]:
    """Keep the scenario's studied pair, shift the follower's initial headway.

    delta scales: new headway = (1 - delta) * old. dx sets it absolutely.
    Only initial states are meaningful downstream (evaluation re-rolls); the
    stored tail advances ballistically. Samples whose graph lacks the studied
    relation are skipped with a warning.
    """
    if (delta is None) == (dx is None):
        raise InvalidArgumentError("pass exactly one of delta or dx")
    front, follower = scenario.ood_pair
    kind = scenario.dynamics_kind
    out: list[Sample] = []
    skipped = 0
    for sample in samples:
        if sample.graph is None or sample.graph.type_of(front, follower) == 0:
            skipped += 1
            continue
        tr = sample.trajectory
        init = tr.states[0]
        pair = np.stack([init[front], init[follower]]).astype(np.float64)
        headway = pair[0, 0] - pair[1, 0]
        new_headway = (1.0 - delta) * headway if delta is not None else dx
        pair[1, 0] = pair[0, 0] - new_headway
        states = _ballistic_states(kind, pair, tr.horizon, tr.dt)
        actions = np.zeros((tr.horizon, 2, tr.action_dim), dtype=np.float64)
        k_fwd = sample.graph.type_of(front, follower)
        k_bwd = sample.graph.type_of(follower, front)
        graph = graph_from_pairs(
            2, scenario.k_types, {(0, 1): k_fwd, **({(1, 0): k_bwd} if k_bwd else {})}
        )
        out.append(
            Sample(
                trajectory=Trajectory(dt=tr.dt, states=states, actions=actions),
                graph=graph,
            )
        )
    if skipped:
        warnings.warn(f"skipped {skipped} samples lacking the studied relation")
    return out


def _ballistic_states(kind: str, init: np.ndarray, horizon: int, dt: float) -> np.ndarray:
    """Constant-velocity placeholder tail after the (perturbed) initial state."""
    cur = torch.as_tensor(init, dtype=DTYPE)
    frames = [cur]
    for _ in range(horizon - 1):
        cur = dynamics.leader_advance(kind, cur, dt)
        frames.append(cur)
    return torch.stack(frames).numpy()
