"""Bundle composition, checkpoint round trips, and batch stacking."""
import numpy as np
import pytest
import torch

import gri
from gri.data import generate_dataset
from gri.errors import InvalidArgumentError
from gri.graphs import InteractionGraph, Sample, SceneGraph, Trajectory
from gri.models import MODEL_KINDS, Batch, ModelBundle, build_bundle, graphs_tensor, tensorize

TOL = 1e-12

# which submodules each model kind carries
COMPOSITION = {
    "expert": {"policy", "reward"},
    "gri": {"policy", "encoder", "reward"},
    "gri_airl": {"policy", "reward"},
    "gri_vairl": {"policy", "encoder", "reward"},
    "nri": {"policy", "encoder"},
    "supervised": {"policy"},
}


@pytest.mark.parametrize("model", MODEL_KINDS)
def test_bundle_composition_matches_model_kind(model):
    scn = gri.get_scenario("cf_synthetic")
    bundle = build_bundle(scn, model, seed=3)
    assert set(bundle.modules()) == COMPOSITION[model]
    assert bundle.model == model
    assert bundle.scenario is scn


def test_build_bundle_rejects_unknown_model():
    scn = gri.get_scenario("cf_synthetic")
    with pytest.raises(InvalidArgumentError, match="unknown model"):
        build_bundle(scn, "dqn", seed=0)


def test_expert_reward_is_frozen_at_ground_truth():
    scn = gri.get_scenario("cf_synthetic")
    bundle = build_bundle(scn, "expert", seed=3)
    assert all(not p.requires_grad for p in bundle.reward.parameters())
    raws = dict(bundle.reward.named_parameters())
    for name, values in scn.gt_weights.items():
        assert name in raws
        assert np.allclose(raws[name].detach().numpy(), values, atol=TOL)


def test_trainable_bundles_expose_gradients():
    scn = gri.get_scenario("cf_synthetic")
    bundle = build_bundle(scn, "gri", seed=3)
    for mod in bundle.modules().values():
        assert all(p.requires_grad for p in mod.parameters())


def test_parameters_for_filters_missing_modules():
    scn = gri.get_scenario("cf_synthetic")
    bundle = build_bundle(scn, "supervised", seed=0)
    assert bundle.parameters_for("encoder") == []
    assert bundle.parameters_for("reward") == []
    n_policy = len(list(bundle.policy.parameters()))
    assert len(bundle.parameters_for("policy", "encoder", "reward")) == n_policy


def test_bundle_seed_controls_initialization():
    scn = gri.get_scenario("cf_synthetic")
    a = build_bundle(scn, "gri", seed=7)
    b = build_bundle(scn, "gri", seed=7)
    c = build_bundle(scn, "gri", seed=8)
    pa = torch.cat([p.flatten() for p in a.parameters_for("policy", "encoder", "reward")])
    pb = torch.cat([p.flatten() for p in b.parameters_for("policy", "encoder", "reward")])
    pc = torch.cat([p.flatten() for p in c.parameters_for("policy", "encoder", "reward")])
    assert torch.equal(pa, pb)
    assert not torch.equal(pa, pc)


@pytest.mark.parametrize("model", MODEL_KINDS)
def test_checkpoint_round_trip_is_bit_exact(model, tmp_path):
    scn = gri.get_scenario("lc_synthetic" if model in ("gri", "nri") else "cf_synthetic")
    bundle = build_bundle(scn, model, seed=21)
    path = tmp_path / f"{model}.npz"
    bundle.save(path)
    back = ModelBundle.load(path)
    assert back.model == model
    assert back.scenario.to_dict() == scn.to_dict()
    want = {f"{m}.{n}": p for m, mod in bundle.modules().items() for n, p in mod.named_parameters()}
    got = {f"{m}.{n}": p for m, mod in back.modules().items() for n, p in mod.named_parameters()}
    assert set(want) == set(got)
    for key in want:
        assert torch.equal(want[key], got[key]), key


def test_checkpoint_without_metadata_is_rejected(tmp_path):
    from gri.autodiff import ParameterStore

    scn = gri.get_scenario("cf_synthetic")
    bundle = build_bundle(scn, "supervised", seed=0)
    store = ParameterStore.from_modules(bundle.modules(), meta={})
    path = tmp_path / "bare.npz"
    store.save(path)
    with pytest.raises(InvalidArgumentError, match="metadata"):
        ModelBundle.load(path)


def test_homogeneous_z_is_all_type_one():
    scn = gri.get_scenario("cf_synthetic")
    bundle = build_bundle(scn, "gri_airl", seed=0)
    z = bundle.homogeneous_z(4)
    e = bundle.scene.n_edges
    assert z.shape == (4, e, scn.k_types)
    assert torch.equal(z[..., 1], torch.ones(4, e, dtype=z.dtype))
    assert float(z.sum()) == 4 * e


# ---------------------------------------------------------------------------
# Batch stacking.


def _samples(n=4, with_graph=True, with_leader=True, t=5):
    rng = np.random.default_rng(99)
    scene = SceneGraph(n_nodes=3)
    out = []
    for _ in range(n):
        graph = None
        if with_graph:
            graph = InteractionGraph(
                scene=scene, k_types=2, edge_types=rng.integers(0, 2, size=scene.n_edges)
            )
        out.append(
            Sample(
                trajectory=Trajectory(
                    dt=0.2,
                    states=rng.normal(size=(t, 3, 3)),
                    actions=rng.normal(size=(t, 3, 1)),
                    leader_states=rng.normal(size=(t, 3)) if with_leader else None,
                ),
                graph=graph,
            )
        )
    return out


def test_tensorize_stacks_shapes_and_values():
    samples = _samples()
    batch = tensorize(samples)
    assert batch.states.shape == (4, 5, 3, 3)
    assert batch.actions_real.shape == (4, 5, 3, 1)
    assert batch.leader_states.shape == (4, 5, 3)
    assert batch.edge_types.shape == (4, 6)
    assert batch.dt == 0.2
    assert batch.size == 4 and batch.horizon == 5 and batch.n_agents == 3
    assert batch.states.dtype == torch.float64
    for i, s in enumerate(samples):
        assert np.array_equal(batch.states[i].numpy(), s.trajectory.states)
        assert np.array_equal(batch.edge_types[i].numpy(), s.graph.edge_types)


def test_tensorize_handles_graphless_and_leaderless():
    batch = tensorize(_samples(with_graph=False, with_leader=False))
    assert batch.edge_types is None
    assert batch.leader_states is None


def test_tensorize_rejects_heterogeneous_samples():
    with pytest.raises(InvalidArgumentError):
        tensorize([])
    base = _samples(2)
    short = _samples(1, t=4)
    with pytest.raises(InvalidArgumentError, match="shapes"):
        tensorize(base + short)
    mixed = base + _samples(1, with_graph=False)
    with pytest.raises(InvalidArgumentError, match="graph"):
        tensorize(mixed)
    odd = _samples(1)
    odd[0].trajectory.__dict__["dt"] = 0.1
    with pytest.raises(InvalidArgumentError, match="dt"):
        tensorize(base + odd)


def test_batch_select_slices_every_field():
    batch = tensorize(_samples(6))
    sub = batch.select(torch.tensor([4, 1]))
    assert sub.size == 2
    assert torch.equal(sub.states[0], batch.states[4])
    assert torch.equal(sub.states[1], batch.states[1])
    assert torch.equal(sub.edge_types[0], batch.edge_types[4])
    assert torch.equal(sub.leader_states[1], batch.leader_states[1])
    assert sub.dt == batch.dt


def test_graphs_tensor_stacks_edge_types():
    scene = SceneGraph(n_nodes=3)
    graphs = [
        InteractionGraph(scene=scene, k_types=2, edge_types=np.array([0, 1, 0, 0, 1, 1])),
        InteractionGraph(scene=scene, k_types=2, edge_types=np.zeros(6, dtype=np.int64)),
    ]
    t = graphs_tensor(graphs, 2)
    assert t.shape == (2, 6, 2)  # one-hot over the type axis
    assert t.argmax(dim=-1)[0].tolist() == [0, 1, 0, 0, 1, 1]
    assert torch.equal(t.sum(dim=-1), torch.ones(2, 6, dtype=t.dtype))


def test_generated_batch_round_trips_through_tensorize():
    scn = gri.get_scenario("cf_synthetic")
    bundle = build_bundle(scn, "expert", seed=1)
    samples = generate_dataset(scn, bundle, 3, seed=2)
    batch = tensorize(samples)
    assert batch.states.shape == (3, scn.horizon, scn.n_agents, 3)
    assert batch.leader_states is not None
    assert batch.edge_types.shape == (3, bundle.scene.n_edges)
