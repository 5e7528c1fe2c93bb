"""Datasets: file round-trips, manifests, natural-log ingestion, headway shifts."""
import json
import math
import os

import numpy as np
import pytest
import torch

import gri
from gri.data import (
    DatasetManifest,
    config_hash,
    generate_dataset,
    load_dataset,
    load_manifest,
    load_natural_log,
    load_samples,
    make_ood_dataset,
    save_samples,
    split_counts,
    write_dataset,
    write_standin_log,
)
from gri.errors import GriError, InvalidArgumentError, ParseError
from gri.graphs import InteractionGraph, Sample, Trajectory, graph_from_pairs
from gri.models import build_bundle


def random_samples(n=3, with_graph=True, with_leader=True, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        traj = Trajectory(
            dt=0.2,
            states=rng.normal(size=(5, 3, 3)),
            actions=rng.normal(size=(5, 3, 1)),
            leader_states=rng.normal(size=(5, 3)) if with_leader else None,
        )
        graph = graph_from_pairs(3, 2, {(0, 1): 1}) if with_graph else None
        out.append(Sample(trajectory=traj, graph=graph))
    return out


def test_samples_round_trip_bit_exactly(tmp_path):
    """Every float, graph, and leader row must survive save -> load unchanged."""
    samples = random_samples()
    path = tmp_path / "d.traj"
    save_samples(samples, path)
    back = load_samples(path, k_types=2)
    assert len(back) == len(samples)
    for a, b in zip(samples, back):
        assert np.array_equal(a.trajectory.states, b.trajectory.states)
        assert np.array_equal(a.trajectory.actions, b.trajectory.actions)
        assert np.array_equal(a.trajectory.leader_states, b.trajectory.leader_states)
        assert a.trajectory.dt == b.trajectory.dt
        assert np.array_equal(a.graph.edge_types, b.graph.edge_types)


def test_save_is_deterministic_bytes(tmp_path):
    samples = random_samples()
    p1, p2 = tmp_path / "a.traj", tmp_path / "b.traj"
    save_samples(samples, p1)
    save_samples(samples, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_graphless_samples_round_trip_without_k_types(tmp_path):
    samples = random_samples(with_graph=False, with_leader=False)
    path = tmp_path / "d.traj"
    save_samples(samples, path)
    back = load_samples(path)
    assert back[0].graph is None
    assert back[0].trajectory.leader_states is None
    # graphs present but no vocabulary size given: refuse to guess
    save_samples(random_samples(), path)
    with pytest.raises(InvalidArgumentError):
        load_samples(path)


def test_parse_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "bad.traj"
    path.write_text('step [1.0]\n')
    with pytest.raises(ParseError, match="line 1"):
        load_samples(path)

    good = 'traj {"action_dim": 1, "dt": 0.2, "edge_types": null, "horizon": 2, "leader": false, "n_agents": 1, "state_dim": 3}\n'
    path.write_text(good + 'step [0,0,0,0]\nstep not-json\n')
    with pytest.raises(ParseError, match="line 3"):
        load_samples(path)

    path.write_text(good + 'step [0,0,0,0]\n')  # one row short
    with pytest.raises(ParseError, match="line 1"):
        load_samples(path)

    path.write_text(good + 'step [0,0,0]\nstep [0,0,0]\n')  # wrong width
    with pytest.raises(ParseError, match="expected 4"):
        load_samples(path)

    path.write_text('blob {"x": 1}\n')
    with pytest.raises(ParseError, match="unknown record kind"):
        load_samples(path)

    assert issubclass(ParseError, GriError)


def test_split_counts_cover_everything():
    c = split_counts(10)
    assert c == {"train": 8, "val": 1, "test": 1}
    c = split_counts(7, (0.5, 0.25, 0.25))
    assert sum(c.values()) == 7
    assert split_counts(1) == {"train": 1, "val": 0, "test": 0}
    with pytest.raises(InvalidArgumentError):
        split_counts(10, (0.5, 0.2, 0.2))


def test_dataset_directory_round_trip(tmp_path):
    scn = gri.get_scenario("cf_synthetic")
    bundle = build_bundle(scn, "expert", seed=0)
    samples = generate_dataset(scn, bundle, 10, seed=3)
    manifest = write_dataset(tmp_path / "ds", scn, samples, seed=3)
    assert manifest.counts == {"train": 8, "val": 1, "test": 1}
    back_scn, train = load_dataset(tmp_path / "ds", "train")
    assert back_scn == scn
    assert len(train) == 8
    assert np.array_equal(train[0].trajectory.states, samples[0].trajectory.states)
    with pytest.raises(InvalidArgumentError):
        load_dataset(tmp_path / "ds", "holdout")


def test_manifest_detects_tampering(tmp_path):
    scn = gri.get_scenario("cf_synthetic")
    bundle = build_bundle(scn, "expert", seed=0)
    samples = generate_dataset(scn, bundle, 5, seed=3)
    write_dataset(tmp_path / "ds", scn, samples, seed=3)
    mpath = tmp_path / "ds" / "manifest.json"
    blob = json.loads(mpath.read_text())
    blob["scenario"]["horizon"] = 99
    mpath.write_text(json.dumps(blob))
    with pytest.raises(InvalidArgumentError, match="hash"):
        load_dataset(tmp_path / "ds", "train")
    # count mismatch is also caught
    blob["scenario"]["horizon"] = 20
    blob["counts"]["train"] = 2
    mpath.write_text(json.dumps(blob))
    with pytest.raises(InvalidArgumentError, match="manifest says"):
        load_dataset(tmp_path / "ds", "train")


def test_generated_samples_carry_true_graph_and_leader():
    scn = gri.get_scenario("cf_synthetic")
    bundle = build_bundle(scn, "expert", seed=0)
    samples = generate_dataset(scn, bundle, 4, seed=1)
    assert len(samples) == 4
    g = scn.true_graph()
    for s in samples:
        assert s.trajectory.horizon == scn.horizon
        assert s.trajectory.leader_states is not None
        assert np.array_equal(s.graph.edge_types, g.edge_types)
        assert np.isfinite(s.trajectory.states).all()
    again = generate_dataset(scn, bundle, 4, seed=1)
    for a, b in zip(samples, again):
        assert np.array_equal(a.trajectory.states, b.trajectory.states)


# -- natural-log ingestion -----------------------------------------------------


def write_log(path, rows, columns=("vehicle_id", "frame", "t", "x", "y", "lane_id")):
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(str(v) for v in r) + "\n")


def cf_natural_rows(x_fns, dt=0.1, n_steps=40):
    """One segment of the 1-d log: vehicle 0 is the leader (front)."""
    rows = []
    for vid, fn in enumerate(x_fns):
        for k in range(n_steps):
            t = k * dt
            rows.append((vid, k, round(t, 6), fn(t), 0.0, 0))
    return rows


def test_constant_velocity_log_yields_zero_accelerations(tmp_path):
    scn = gri.get_scenario("cf_natural")
    path = tmp_path / "log.csv"
    speeds = [12.0, 11.0, 10.0, 9.0]
    offsets = [90.0, 60.0, 30.0, 0.0]
    fns = [lambda t, v=v, o=o: o + v * t for v, o in zip(speeds, offsets)]
    write_log(path, cf_natural_rows(fns, n_steps=scn.horizon))
    samples = load_natural_log(path, scn)
    assert len(samples) == 1
    tr = samples[0].trajectory
    assert tr.n_agents == scn.n_agents
    # leader (front-most vehicle) is split out of the modeled set
    assert tr.leader_states is not None
    assert np.allclose(tr.leader_states[:, 1], 12.0, atol=1e-9)
    assert np.allclose(tr.states[:, :, 2], 0.0, atol=1e-9)  # zero accel
    assert np.allclose(tr.states[:, 0, 1], 11.0, atol=1e-9)
    assert np.allclose(tr.actions, 0.0, atol=1e-9)  # zero jerk


def test_quadratic_log_recovers_exact_derivatives(tmp_path):
    """Centered and one-sided 3-point differences are exact on parabolas."""
    scn = gri.get_scenario("cf_natural")
    path = tmp_path / "log.csv"
    coef = [(0.0, 10.0, 0.4), (30.0, 9.0, -0.3), (60.0, 12.0, 0.2), (90.0, 8.0, 0.1)]

    def make(c):
        return lambda t: c[0] + c[1] * t + 0.5 * c[2] * t * t

    # front to back by initial x: vehicle order above is back-to-front
    write_log(path, cf_natural_rows([make(c) for c in reversed(coef)], n_steps=scn.horizon))
    samples = load_natural_log(path, scn)
    tr = samples[0].trajectory
    dt = 0.1
    # modeled agents are the three rear vehicles, front first
    want = list(reversed(coef))[1:]
    for agent, c in enumerate(want):
        ts = np.arange(scn.horizon) * dt
        assert np.allclose(tr.states[:, agent, 0], make(c)(ts), atol=1e-9)
        assert np.allclose(tr.states[:, agent, 1], c[1] + c[2] * ts, atol=1e-6)
        assert np.allclose(tr.states[:, agent, 2], c[2], atol=1e-6)


def test_natural_log_validates_timing_and_shape(tmp_path):
    scn = gri.get_scenario("cf_natural")
    path = tmp_path / "log.csv"
    fns = [lambda t, o=o: o + 10.0 * t for o in (90.0, 60.0, 30.0, 0.0)]
    rows = cf_natural_rows(fns, n_steps=scn.horizon)
    # non-uniform timestamps
    bad = [(vid, f, t + (0.05 if f == 3 and vid == 0 else 0.0), x, y, l)
           for vid, f, t, x, y, l in rows]
    write_log(path, bad)
    with pytest.raises(GriError, match="uniform"):
        load_natural_log(path, scn)
    # ragged vehicle series
    write_log(path, [r for r in rows if not (r[0] == 2 and r[1] > 20)])
    with pytest.raises(GriError, match="ragged"):
        load_natural_log(path, scn)
    # wrong vehicle count
    write_log(path, cf_natural_rows(fns[:2], n_steps=scn.horizon))
    with pytest.raises(GriError, match="vehicles"):
        load_natural_log(path, scn)


def test_standin_log_ingests_for_both_natural_scenarios(tmp_path):
    for name in ("cf_natural", "lc_natural"):
        scn = gri.get_scenario(name)
        path = tmp_path / f"{name}.csv"
        write_standin_log(path, scn, n_segments=3, seed=7)
        samples = load_natural_log(path, scn)
        assert len(samples) == 3
        for s in samples:
            assert s.trajectory.horizon == scn.horizon
            assert s.trajectory.n_agents == scn.n_agents
            assert np.isfinite(s.trajectory.states).all()
            assert np.array_equal(s.graph.edge_types, scn.true_graph().edge_types)


def test_standin_log_is_seed_deterministic(tmp_path):
    scn = gri.get_scenario("cf_natural")
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_standin_log(p1, scn, n_segments=2, seed=9)
    write_standin_log(p2, scn, n_segments=2, seed=9)
    assert p1.read_bytes() == p2.read_bytes()


def test_ingestion_round_trips_through_trajectory_file(tmp_path):
    """CSV -> samples -> .traj -> samples must preserve every value."""
    scn = gri.get_scenario("lc_natural")
    log = tmp_path / "log.csv"
    write_standin_log(log, scn, n_segments=2, seed=3)
    first = load_natural_log(log, scn)
    save_samples(first, tmp_path / "d.traj")
    second = load_samples(tmp_path / "d.traj", k_types=scn.k_types)
    for a, b in zip(first, second):
        assert np.array_equal(a.trajectory.states, b.trajectory.states)
        assert np.array_equal(a.trajectory.actions, b.trajectory.actions)
        assert np.array_equal(a.trajectory.leader_states, b.trajectory.leader_states)
        assert np.array_equal(a.graph.edge_types, b.graph.edge_types)


# -- headway-shifted initial conditions ----------------------------------------


def ood_base_samples(scn, n=4):
    bundle = build_bundle(scn, "expert", seed=0)
    return generate_dataset(scn, bundle, n, seed=2)


def test_headway_shift_delta_examples():
    """delta = 0 keeps the gap; 1 collapses it; 1.5 mirrors it negative."""
    scn = gri.get_scenario("cf_synthetic")
    samples = ood_base_samples(scn)
    front, follower = scn.ood_pair
    for delta in (0.0, 1.0, 1.5):
        shifted = make_ood_dataset(samples, scn, delta=delta)
        assert len(shifted) == len(samples)
        for orig, s in zip(samples, shifted):
            init = orig.trajectory.states[0]
            old = init[front, 0] - init[follower, 0]
            new = s.trajectory.states[0, 0, 0] - s.trajectory.states[0, 1, 0]
            assert abs(new - (1.0 - delta) * old) < 1e-12
            # non-positional components are untouched
            assert np.array_equal(s.trajectory.states[0, 0, 1:], init[front, 1:])
            assert np.array_equal(s.trajectory.states[0, 1, 1:], init[follower, 1:])


def test_headway_shift_dx_sets_absolute_gap():
    scn = gri.get_scenario("cf_synthetic")
    samples = ood_base_samples(scn)
    shifted = make_ood_dataset(samples, scn, dx=-4.0)
    for s in shifted:
        gap = s.trajectory.states[0, 0, 0] - s.trajectory.states[0, 1, 0]
        assert abs(gap - (-4.0)) < 1e-12
        assert s.graph.type_of(0, 1) == 1
    with pytest.raises(InvalidArgumentError):
        make_ood_dataset(samples, scn, delta=0.5, dx=1.0)
    with pytest.raises(InvalidArgumentError):
        make_ood_dataset(samples, scn)


def test_headway_shift_skips_unrelated_pairs():
    scn = gri.get_scenario("cf_synthetic")
    samples = ood_base_samples(scn)
    cut = []
    for s in samples:
        g = graph_from_pairs(3, 2, {})  # no relation between the studied pair
        cut.append(Sample(trajectory=s.trajectory, graph=g))
    with pytest.warns(UserWarning, match="skipped"):
        out = make_ood_dataset(cut, scn, dx=2.0)
    assert out == []
