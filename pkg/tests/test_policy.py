"""Graph-conditioned policies and differentiable rollouts."""
import math

import pytest
import torch

from gri.autodiff import seeded_generator
from gri.encoder import one_hot_types
from gri.errors import InvalidArgumentError
from gri.features import FeatureMap
from gri.graphs import build_scene_graph, edge_index, graph_from_pairs
from gri.policy import (
    FFPolicy,
    PolicyConfig,
    RNNPolicy,
    Rollout,
    build_policy,
    log_prob,
    policy_means,
    rollout,
)

TOL = 1e-12


def make_config(kind="ff", k=2, leader_edges=((0, 1),)):
    return PolicyConfig(
        kind=kind,
        dynamics_kind="point_1d",
        k_types=k,
        feature=FeatureMap(kind="point_1d"),
        hidden=16,
        sigma2=0.05,
        action_scale=(4.0,),
        leader_edges=leader_edges,
    )


def states_for(batch, n, gen):
    s = torch.randn(batch, n, 3, generator=gen, dtype=torch.float64)
    s[..., 0] = s[..., 0].abs() * 5.0
    return s


def test_log_prob_matches_gaussian_formula():
    actions = torch.tensor([[0.3, -0.2]], dtype=torch.float64)
    mean = torch.tensor([[0.1, 0.1]], dtype=torch.float64)
    s2 = 0.05
    want = sum(
        -0.5 * math.log(2 * math.pi * s2) - (a - m) ** 2 / (2 * s2)
        for a, m in zip([0.3, -0.2], [0.1, 0.1])
    )
    assert abs(log_prob(actions, mean, s2)[0].item() - want) < TOL
    with pytest.raises(InvalidArgumentError):
        log_prob(actions, mean, 0.0)


def test_null_graph_blocks_agent_to_agent_messages():
    """With all-zero edge types only the leader edge can influence an agent."""
    cfg = make_config(leader_edges=())
    pol = FFPolicy(cfg, seed=3)
    scene = build_scene_graph(3)
    gen = seeded_generator(0)
    states = states_for(4, 3, gen)
    z = one_hot_types(torch.zeros(6, dtype=torch.int64), 2).expand(4, 6, 2)
    base = pol(states, z, scene)
    bumped = states.clone()
    bumped[:, 1] += 3.0  # perturb agent 1 only
    out = pol(bumped, z, scene)
    assert torch.allclose(out[:, 0], base[:, 0], atol=TOL)
    assert torch.allclose(out[:, 2], base[:, 2], atol=TOL)
    assert not torch.allclose(out[:, 1], base[:, 1], atol=1e-3)


def test_follow_edge_routes_influence_to_its_receiver_only():
    cfg = make_config(leader_edges=())
    pol = FFPolicy(cfg, seed=3)
    scene = build_scene_graph(3)
    gen = seeded_generator(1)
    states = states_for(4, 3, gen)
    g = graph_from_pairs(3, 2, {(0, 1): 1})  # 0 influences 1
    z = one_hot_types(g.edge_types, 2).expand(4, 6, 2)
    base = pol(states, z, scene)
    bumped = states.clone()
    bumped[:, 0, 0] += 2.0  # move sender 0
    out = pol(bumped, z, scene)
    assert not torch.allclose(out[:, 1], base[:, 1], atol=1e-6)
    assert torch.allclose(out[:, 2], base[:, 2], atol=TOL)


def test_leader_edge_feeds_configured_agent():
    cfg = make_config()
    pol = FFPolicy(cfg, seed=5)
    scene = build_scene_graph(3)
    gen = seeded_generator(2)
    states = states_for(2, 3, gen)
    leader = torch.tensor([[30.0, 10.0, 0.0], [28.0, 9.0, 0.0]], dtype=torch.float64)
    z = one_hot_types(torch.zeros(6, dtype=torch.int64), 2).expand(2, 6, 2)
    base = pol(states, z, scene, leader_state=leader)
    moved = pol(states, z, scene, leader_state=leader + torch.tensor([2.0, 0.0, 0.0]))
    assert not torch.allclose(moved[:, 0], base[:, 0], atol=1e-6)
    assert torch.allclose(moved[:, 1:], base[:, 1:], atol=TOL)


def test_rollout_integrates_stored_actions_exactly():
    """states[t+1] must equal step(states[t], scale * actions_norm[t])."""
    from gri import dynamics

    cfg = make_config()
    pol = FFPolicy(cfg, seed=7)
    scene = build_scene_graph(3)
    init = states_for(2, 3, seeded_generator(3))
    leader = torch.tensor([[40.0, 10.0, 0.0], [42.0, 11.0, 0.0]], dtype=torch.float64)
    z = one_hot_types(torch.zeros(6, dtype=torch.int64), 2).expand(2, 6, 2)
    ro = rollout(
        pol, init, z, scene, n_steps=6, dt=0.2, leader_init=leader,
        mode="sample", generator=seeded_generator(4),
    )
    assert ro.states.shape == (2, 7, 3, 3)
    assert ro.actions_norm.shape == (2, 7, 3, 1)
    real = ro.actions_real(cfg.action_scale)
    for t in range(6):
        want = dynamics.step("point_1d", ro.states[:, t], real[:, t], 0.2)
        assert torch.allclose(ro.states[:, t + 1], want, atol=TOL)
    # leader advances at constant velocity from its initial state
    assert torch.allclose(ro.leader_states[:, 3, 0], leader[:, 0] + 3 * 0.2 * leader[:, 1], atol=TOL)
    assert torch.allclose(ro.leader_states[:, 3, 1], leader[:, 1], atol=TOL)


def test_rollout_replays_leader_series_verbatim():
    cfg = make_config()
    pol = FFPolicy(cfg, seed=7)
    scene = build_scene_graph(3)
    init = states_for(1, 3, seeded_generator(5))
    series = torch.randn(1, 9, 3, generator=seeded_generator(6), dtype=torch.float64)
    z = one_hot_types(torch.zeros(6, dtype=torch.int64), 2).expand(1, 6, 2)
    ro = rollout(pol, init, z, scene, n_steps=8, dt=0.2, leader_states=series)
    assert torch.equal(ro.leader_states, series[:, :9])
    with pytest.raises(InvalidArgumentError):
        rollout(pol, init, z, scene, n_steps=9, dt=0.2, leader_states=series)


def test_mean_rollout_is_deterministic_and_noise_free():
    cfg = make_config(leader_edges=())
    pol = FFPolicy(cfg, seed=9)
    scene = build_scene_graph(2)
    init = states_for(3, 2, seeded_generator(8))
    z = one_hot_types(torch.zeros(2, dtype=torch.int64), 2).expand(3, 2, 2)
    r1 = rollout(pol, init, z, scene, n_steps=4, dt=0.1)
    r2 = rollout(pol, init, z, scene, n_steps=4, dt=0.1)
    assert torch.equal(r1.states, r2.states)
    assert torch.equal(r1.actions_norm, r1.means_norm)


def test_sampled_rollout_reproduces_under_same_seed():
    cfg = make_config(leader_edges=())
    pol = FFPolicy(cfg, seed=9)
    scene = build_scene_graph(2)
    init = states_for(3, 2, seeded_generator(8))
    z = one_hot_types(torch.zeros(2, dtype=torch.int64), 2).expand(3, 2, 2)
    r1 = rollout(pol, init, z, scene, n_steps=4, dt=0.1, mode="sample", generator=seeded_generator(1))
    r2 = rollout(pol, init, z, scene, n_steps=4, dt=0.1, mode="sample", generator=seeded_generator(1))
    r3 = rollout(pol, init, z, scene, n_steps=4, dt=0.1, mode="sample", generator=seeded_generator(2))
    assert torch.equal(r1.states, r2.states)
    assert not torch.equal(r1.states, r3.states)
    assert not torch.equal(r1.actions_norm, r1.means_norm)


def test_policy_means_reproduces_rollout_means_teacher_forced():
    """Feeding a rollout's own states back must return its stored means."""
    cfg = make_config()
    for kind, seed in (("ff", 3), ("rnn", 4)):
        cfg_k = make_config(kind=kind)
        pol = build_policy(cfg_k, seed=seed)
        scene = build_scene_graph(3)
        init = states_for(2, 3, seeded_generator(10))
        leader = torch.tensor([[50.0, 10.0, 0.0], [51.0, 9.5, 0.0]], dtype=torch.float64)
        z = one_hot_types(torch.ones(6, dtype=torch.int64), 2).expand(2, 6, 2)
        ro = rollout(
            pol, init, z, scene, n_steps=5, dt=0.2, leader_init=leader,
            mode="sample", generator=seeded_generator(11),
        )
        mu = policy_means(pol, ro.states, z, scene, leader_series=ro.leader_states)
        assert torch.allclose(mu, ro.means_norm, atol=TOL)


def test_rnn_policy_carries_memory_across_steps():
    """Same current state but different history must give different actions."""
    cfg = make_config(kind="rnn", leader_edges=())
    pol = RNNPolicy(cfg, seed=13)
    scene = build_scene_graph(2)
    z = one_hot_types(torch.ones(2, dtype=torch.int64), 2).expand(1, 2, 2)
    s_now = states_for(1, 2, seeded_generator(14))
    h0 = pol.init_hidden(1, 2, False)
    _, h_a = pol(s_now + 1.0, z, scene, h0)
    _, h_b = pol(s_now - 1.0, z, scene, h0)
    mu_a, _ = pol(s_now, z, scene, h_a)
    mu_b, _ = pol(s_now, z, scene, h_b)
    assert not torch.allclose(mu_a, mu_b, atol=1e-6)
    with pytest.raises(InvalidArgumentError):
        pol(s_now, z, scene, pol.init_hidden(1, 2, True))


def test_build_policy_dispatches_on_kind():
    assert isinstance(build_policy(make_config("ff")), FFPolicy)
    assert isinstance(build_policy(make_config("rnn")), RNNPolicy)
    with pytest.raises(InvalidArgumentError):
        PolicyConfig(
            kind="transformer", dynamics_kind="point_1d", k_types=2,
            feature=FeatureMap(kind="point_1d"), action_scale=(4.0,),
        )


def test_rollout_rejects_bad_mode_and_step_count():
    cfg = make_config(leader_edges=())
    pol = FFPolicy(cfg, seed=1)
    scene = build_scene_graph(2)
    init = states_for(1, 2, seeded_generator(0))
    z = one_hot_types(torch.zeros(2, dtype=torch.int64), 2).expand(1, 2, 2)
    with pytest.raises(InvalidArgumentError):
        rollout(pol, init, z, scene, n_steps=0, dt=0.1)
    with pytest.raises(InvalidArgumentError):
        rollout(pol, init, z, scene, n_steps=3, dt=0.1, mode="greedy")
