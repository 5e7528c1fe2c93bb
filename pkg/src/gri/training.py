"""Objectives and training loops.

The adversarial objective scores trajectories with a discriminator built from
the shaped reward f and the policy density: D = sigmoid(f - log pi) per
transition. Demonstrations should score high, generated rollouts low:

    J = E_demo[ sum_t -log D_t ] + E_gen[ sum_t -log(1 - D_t) ]

computed in the numerically stable softplus forms. Training alternates two
phases per iteration: first d_steps minimization steps where the reward and
encoder descend J + beta * (KL - Ic) on fresh minibatches, then one
maximization step where the policy ascends J through its reparameterized
rollout tape (the encoder's graph samples are detached there, so each step
touches only the modules of its own phase). Generated rollouts always reuse
the demo initial states. beta follows a dual update against the information
budget Ic.

Reconstruction baselines reuse the same loop shape with a Gaussian
state-matching loss instead of the adversarial one.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import torch

from .autodiff import DTYPE, clip_gradients, derive_seed, gradient, seeded_generator
from .encoder import annealed_temperature, kl_to_prior, map_edges, one_hot_types, sample_edges
from .errors import DivergenceError, InvalidArgumentError
from .evaluation import graph_accuracy, rmse
from .models import Batch, ModelBundle, build_bundle
from .policy import Rollout, log_prob, policy_means, rollout
from .scenarios import ScenarioConfig, sample_initial_states
from .validation import check_choice, check_int_range, check_positive

BETA_UPDATES = ("incremental", "literal")


@dataclass
class TrainConfig:
    n_iterations: int = 400
    batch_size: int = 64
    lr: float = 5e-4
    lr_policy: float | None = None  # None falls back to lr
    lr_reward: float | None = None
    lr_encoder: float | None = None
    d_steps: int = 1  # reward/encoder updates per policy update
    grad_clip: float = 5.0
    beta_init: float = 0.0
    alpha_beta: float = 0.01
    beta_update: str = "incremental"
    temperature_start: float = 2.0
    temperature_end: float = 0.5
    n_z_samples: int = 1
    hard_samples: bool = False
    teacher_forcing: bool = False
    eval_every: int = 25
    divergence_limit: float = 1e8
    seed: int = 0

    def __post_init__(self):
        check_int_range("n_iterations", self.n_iterations, low=1)
        check_int_range("batch_size", self.batch_size, low=1)
        check_int_range("d_steps", self.d_steps, low=1)
        check_int_range("n_z_samples", self.n_z_samples, low=1)
        check_int_range("eval_every", self.eval_every, low=1)
        check_positive("lr", self.lr)
        for name in ("lr_policy", "lr_reward", "lr_encoder"):
            value = getattr(self, name)
            if value is not None:
                check_positive(name, value)
        check_positive("grad_clip", self.grad_clip)
        check_positive("divergence_limit", self.divergence_limit)
        check_choice("beta_update", self.beta_update, BETA_UPDATES)
        if self.beta_init < 0 or self.alpha_beta < 0:
            raise InvalidArgumentError("beta_init and alpha_beta must be nonnegative")

    def rate(self, module: str) -> float:
        """Learning rate for one module, falling back to the shared lr."""
        value = {
            "policy": self.lr_policy,
            "reward": self.lr_reward,
            "encoder": self.lr_encoder,
        }[module]
        return self.lr if value is None else value

    def to_dict(self) -> dict:
        return {
            "n_iterations": self.n_iterations,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "lr_policy": self.lr_policy,
            "lr_reward": self.lr_reward,
            "lr_encoder": self.lr_encoder,
            "d_steps": self.d_steps,
            "grad_clip": self.grad_clip,
            "beta_init": self.beta_init,
            "alpha_beta": self.alpha_beta,
            "beta_update": self.beta_update,
            "temperature_start": self.temperature_start,
            "temperature_end": self.temperature_end,
            "n_z_samples": self.n_z_samples,
            "hard_samples": self.hard_samples,
            "teacher_forcing": self.teacher_forcing,
            "eval_every": self.eval_every,
            "divergence_limit": self.divergence_limit,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: d[k] for k in cls().to_dict() if k in d})


def update_beta(beta: float, kl: float, ic: float, alpha: float, mode: str = "incremental") -> float:
    """Dual step on the information constraint KL <= Ic; never negative.

    incremental: beta <- max(0, beta + alpha * (KL - Ic))
    literal:     beta <- max(0, alpha * (KL - Ic))
    """
    check_choice("mode", mode, BETA_UPDATES)
    base = beta if mode == "incremental" else 0.0
    return max(0.0, base + alpha * (kl - ic))


# ---------------------------------------------------------------------------
# Objective pieces.

def transition_log_density(
    actions_norm: torch.Tensor, means_norm: torch.Tensor, sigma2: float
) -> torch.Tensor:
    """log pi of the joint action per transition, [B, T-1].

    Inputs are [B, T, N, a] tapes; the action at the final stored state drives
    no transition and is dropped.
    """
    lp = log_prob(actions_norm, means_norm, sigma2).sum(dim=-1)  # [B, T]
    return lp[:, :-1]


def discriminator_logits(
    bundle: ModelBundle,
    states: torch.Tensor,
    actions_norm: torch.Tensor,
    means_norm: torch.Tensor,
    z: torch.Tensor,
    leader_states: torch.Tensor | None,
) -> torch.Tensor:
    """f_t - log pi_t per transition, [B, T-1]; D = sigmoid of this."""
    cfg = bundle.policy.config
    scale = torch.as_tensor(cfg.action_scale, dtype=DTYPE)
    f = bundle.reward.shaped_transition_rewards(
        states, actions_norm * scale, z, bundle.scene, leader_states
    )
    return f - transition_log_density(actions_norm, means_norm, cfg.sigma2)


def generate_rollout(
    bundle: ModelBundle,
    batch: Batch,
    z: torch.Tensor,
    generator: torch.Generator | None,
    mode: str = "sample",
) -> Rollout:
    """Policy rollout from the batch's initial states with the leader replayed."""
    return rollout(
        bundle.policy,
        batch.states[:, 0],
        z,
        bundle.scene,
        n_steps=batch.horizon - 1,
        dt=batch.dt,
        leader_states=batch.leader_states,
        mode=mode,
        generator=generator,
    )


def gri_objective(
    bundle: ModelBundle,
    batch: Batch,
    z: torch.Tensor,
    *,
    generator: torch.Generator | None = None,
    mode: str = "sample",
) -> tuple[torch.Tensor, dict]:
    """J for one sampled (or given) graph assignment z, plus diagnostics.

    Demo transitions score -log D = softplus(log pi - f); generated ones
    score -log(1 - D) = softplus(f - log pi). When the discriminator is blind
    (D = 1/2 everywhere) J equals 2 * (T - 1) * ln 2 per scene.
    """
    cfg = bundle.policy.config
    demo_norm = batch.actions_real / torch.as_tensor(cfg.action_scale, dtype=DTYPE)
    demo_means = policy_means(
        bundle.policy, batch.states, z, bundle.scene, leader_series=batch.leader_states
    )
    demo_logits = discriminator_logits(
        bundle, batch.states, demo_norm, demo_means, z, batch.leader_states
    )
    ro = generate_rollout(bundle, batch, z, generator, mode=mode)
    gen_logits = discriminator_logits(
        bundle, ro.states, ro.actions_norm, ro.means_norm, z, ro.leader_states
    )
    j = (
        torch.nn.functional.softplus(-demo_logits).sum(dim=1).mean()
        + torch.nn.functional.softplus(gen_logits).sum(dim=1).mean()
    )
    with torch.no_grad():
        disc_acc = 0.5 * (
            (demo_logits > 0).to(DTYPE).mean() + (gen_logits < 0).to(DTYPE).mean()
        )
    return j, {"disc_acc": float(disc_acc)}


def nri_objective(
    bundle: ModelBundle,
    batch: Batch,
    z: torch.Tensor,
    *,
    teacher_forcing: bool = False,
) -> torch.Tensor:
    """Gaussian reconstruction NLL per scene (mean over the batch).

    Free-running: mean rollout from the initial state; the reconstruction of
    step t >= 1 is compared against the demonstration under a fixed-variance
    Gaussian. Teacher forcing predicts each next state from the demonstrated
    current one instead.
    """
    from . import dynamics

    cfg = bundle.policy.config
    sigma2 = cfg.sigma2
    scale = torch.as_tensor(cfg.action_scale, dtype=DTYPE)
    if teacher_forcing:
        means = policy_means(
            bundle.policy, batch.states, z, bundle.scene, leader_series=batch.leader_states
        )
        b, t, n, d = batch.states.shape
        cur = batch.states[:, :-1].reshape(-1, n, d)
        act = (means[:, :-1] * scale).reshape(-1, n, means.shape[-1])
        pred = dynamics.step(cfg.dynamics_kind, cur, act, batch.dt).reshape(b, t - 1, n, d)
    else:
        ro = generate_rollout(bundle, batch, z, None, mode="mean")
        pred = ro.states[:, 1:]
    err = pred - batch.states[:, 1:]
    d_total = err.shape[1] * err.shape[2] * err.shape[3]
    nll = 0.5 * ((err * err).sum(dim=(1, 2, 3)) / sigma2 + d_total * math.log(2 * math.pi * sigma2))
    return nll.mean()


# ---------------------------------------------------------------------------
# Loop plumbing.

def write_log(rows: list[dict], path) -> None:
    """One JSON object per line, keys sorted; floats round-trip exactly."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_log(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _snapshot(bundle: ModelBundle) -> dict[str, torch.Tensor]:
    out = {}
    for mod_name, mod in bundle.modules().items():
        for p_name, p in mod.named_parameters():
            out[f"{mod_name}.{p_name}"] = p.detach().clone()
    return out


def _restore(bundle: ModelBundle, snap: dict[str, torch.Tensor]) -> None:
    with torch.no_grad():
        for mod_name, mod in bundle.modules().items():
            for p_name, p in mod.named_parameters():
                p.copy_(snap[f"{mod_name}.{p_name}"])


def _guard(value: torch.Tensor, iteration: int, bundle: ModelBundle, snap, limit: float) -> None:
    value = value.detach()
    bad = not torch.isfinite(value).all() or float(value.abs().max()) > limit
    if bad:
        _restore(bundle, snap)
        raise DivergenceError(
            f"objective diverged at iteration {iteration}; parameters restored "
            f"to the last finite snapshot"
        )


def _apply_grads(params: list[torch.nn.Parameter], grads: list[torch.Tensor], clip: float) -> None:
    for p, g in zip(params, grads):
        p.grad = g.clone()
    clip_gradients(params, clip)


def _minibatch(batch: Batch, size: int, generator: torch.Generator) -> Batch:
    if batch.size <= size:
        return batch
    idx = torch.randperm(batch.size, generator=generator)[:size]
    return batch.select(idx)


@dataclass
class TrainResult:
    bundle: ModelBundle
    log: list[dict] = field(default_factory=list)

    def final(self, key: str):
        for row in reversed(self.log):
            if key in row:
                return row[key]
        return None


# ---------------------------------------------------------------------------
# Trainers.

def train_expert(
    scenario: ScenarioConfig,
    config: TrainConfig,
    *,
    bundle: ModelBundle | None = None,
    start_iteration: int = 0,
) -> TrainResult:
    """Maximize the ground-truth cumulative reward with sampled rollouts.

    Fresh initial scenes every iteration; the true interaction graph is fixed
    and the reward weights are frozen, so only the policy learns.
    """
    bundle = bundle or build_bundle(scenario, "expert", seed=config.seed)
    scene = bundle.scene
    z_true = one_hot_types(scenario.true_graph().edge_types, scenario.k_types)
    opt = torch.optim.Adam(bundle.parameters_for("policy"), lr=config.rate("policy"))
    rows: list[dict] = []
    snap = _snapshot(bundle)
    for off in range(config.n_iterations):
        it = start_iteration + off
        gen = seeded_generator(derive_seed(config.seed, "expert", it))
        init, leader = sample_initial_states(scenario, config.batch_size, gen)
        z = z_true.unsqueeze(0).expand(config.batch_size, -1, -1)
        ro = rollout(
            bundle.policy, init, z, scene,
            n_steps=scenario.horizon - 1, dt=scenario.dt,
            leader_init=leader, mode="sample", generator=gen,
        )
        reward = bundle.reward.cumulative_reward(
            ro.states, ro.actions_real(scenario.action_scale), z, scene, ro.leader_states
        ).mean()
        loss = -reward
        _guard(loss, it, bundle, snap, config.divergence_limit)
        opt.zero_grad()
        loss.backward()
        clip_gradients(bundle.parameters_for("policy"), config.grad_clip)
        opt.step()
        row = {"iteration": it, "reward": float(reward.detach())}
        if (it + 1) % config.eval_every == 0 or off == config.n_iterations - 1:
            with torch.no_grad():
                ro_m = rollout(
                    bundle.policy, init, z, scene,
                    n_steps=scenario.horizon - 1, dt=scenario.dt,
                    leader_init=leader, mode="mean",
                )
                row["eval_reward"] = float(
                    bundle.reward.cumulative_reward(
                        ro_m.states, ro_m.actions_real(scenario.action_scale), z, scene,
                        ro_m.leader_states,
                    ).mean()
                )
            snap = _snapshot(bundle)
        rows.append(row)
    return TrainResult(bundle=bundle, log=rows)


def _eval_row(bundle: ModelBundle, batch: Batch, row: dict) -> None:
    from .evaluation import infer_map_graphs, reconstruct

    scn = bundle.scenario
    with torch.no_grad():
        if bundle.encoder is not None:
            pred = infer_map_graphs(bundle, batch)
        elif batch.edge_types is not None:
            pred = batch.edge_types
        else:
            pred = map_edges(bundle.homogeneous_z(batch.size))
        recon = reconstruct(bundle, batch, pred)
    row["eval_rmse_x"] = rmse(
        batch.states.numpy(), recon.numpy(), kind=scn.dynamics_kind, component="x"
    )
    if batch.edge_types is not None and bundle.encoder is not None:
        row["eval_graph_acc"] = graph_accuracy(
            pred.numpy(), batch.edge_types.numpy(), k_types=scn.k_types
        )


def _gri_forward(
    bundle: ModelBundle,
    mb: Batch,
    prior: torch.Tensor,
    temperature: float,
    config: TrainConfig,
    gen: torch.Generator,
    *,
    detach_encoder: bool,
) -> tuple[torch.Tensor, torch.Tensor, float]:
    """(J averaged over z samples, KL to prior, discriminator accuracy).

    detach_encoder cuts the graph-sample gradient path so the policy phase
    cannot reach encoder parameters.
    """
    has_encoder = bundle.encoder is not None
    if has_encoder:
        logits = bundle.encoder(mb.states, bundle.scene)
        if detach_encoder:
            logits = logits.detach()
        kl = kl_to_prior(logits, prior)
    else:
        kl = torch.zeros((), dtype=DTYPE)
    j_total = None
    disc_acc = 0.0
    for _ in range(config.n_z_samples):
        if has_encoder:
            z = sample_edges(
                logits, temperature=temperature, generator=gen, hard=config.hard_samples
            )
        else:
            z = bundle.homogeneous_z(mb.size)
        j_s, diag = gri_objective(bundle, mb, z, generator=gen, mode="sample")
        j_total = j_s if j_total is None else j_total + j_s
        disc_acc += diag["disc_acc"]
    return j_total / config.n_z_samples, kl, disc_acc / config.n_z_samples


def train_gri(
    scenario: ScenarioConfig,
    train_batch: Batch,
    config: TrainConfig,
    *,
    variant: str = "gri",
    eval_batch: Batch | None = None,
    bundle: ModelBundle | None = None,
    start_iteration: int = 0,
    total_iterations: int | None = None,
) -> TrainResult:
    """Adversarial training of reward (+ encoder) against the policy.

    variant "gri": semantic reward decoder + encoder + bottleneck.
    variant "gri_vairl": unstructured per-type MLP reward, same machinery.
    variant "gri_airl": fixed homogeneous graph, no encoder, no bottleneck.

    Each iteration runs config.d_steps minimization steps on the reward and
    encoder, one dual update of beta, then one policy maximization step; the
    phases draw separate minibatches and each optimizer holds only its own
    phase's parameters. A fresh start (start_iteration 0) first calibrates
    the reward offset on the demonstrations under the initial graph posterior
    so the discriminator begins balanced.
    """
    check_choice("variant", variant, ("gri", "gri_vairl", "gri_airl"))
    bundle = bundle or build_bundle(scenario, variant, seed=config.seed)
    has_encoder = bundle.encoder is not None
    prior = bundle.prior()
    if start_iteration == 0:
        with torch.no_grad():
            if has_encoder:
                z0 = one_hot_types(
                    map_edges(bundle.encoder(train_batch.states, bundle.scene)),
                    scenario.k_types,
                )
            else:
                z0 = bundle.homogeneous_z(train_batch.size)
        bundle.reward.calibrate_offset(
            train_batch.states,
            train_batch.actions_real,
            z0,
            bundle.scene,
            train_batch.leader_states,
        )
    reward_params = bundle.parameters_for("reward")
    encoder_params = bundle.parameters_for("encoder") if has_encoder else []
    d_params = reward_params + encoder_params
    g_params = bundle.parameters_for("policy")
    d_groups = [{"params": reward_params, "lr": config.rate("reward")}]
    if has_encoder:
        d_groups.append({"params": encoder_params, "lr": config.rate("encoder")})
    opt_d = torch.optim.Adam(d_groups)
    opt_g = torch.optim.Adam(g_params, lr=config.rate("policy"))
    beta = config.beta_init
    probe = eval_batch if eval_batch is not None else train_batch
    total = total_iterations or (start_iteration + config.n_iterations)
    rows: list[dict] = []
    snap = _snapshot(bundle)
    for off in range(config.n_iterations):
        it = start_iteration + off
        temperature = annealed_temperature(
            it, total, config.temperature_start, config.temperature_end
        )
        for step in range(config.d_steps):
            gen = seeded_generator(derive_seed(config.seed, variant, it, "d", step))
            mb = _minibatch(train_batch, config.batch_size, gen)
            j, kl, disc_acc = _gri_forward(
                bundle, mb, prior, temperature, config, gen, detach_encoder=False
            )
            _guard(j, it, bundle, snap, config.divergence_limit)
            loss_d = j + beta * (kl - scenario.ic) if has_encoder else j
            grads_d = torch.autograd.grad(loss_d, d_params, allow_unused=True)
            grads_d = [
                torch.zeros_like(p) if g is None else g for p, g in zip(d_params, grads_d)
            ]
            _apply_grads(d_params, grads_d, config.grad_clip)
            opt_d.step()
            opt_d.zero_grad()
        if has_encoder:
            beta = update_beta(
                beta, float(kl.detach()), scenario.ic, config.alpha_beta, config.beta_update
            )
        gen = seeded_generator(derive_seed(config.seed, variant, it, "g"))
        mb = _minibatch(train_batch, config.batch_size, gen)
        j_g, _, _ = _gri_forward(
            bundle, mb, prior, temperature, config, gen, detach_encoder=True
        )
        _guard(j_g, it, bundle, snap, config.divergence_limit)
        grads_g = gradient(-j_g, g_params)
        _apply_grads(g_params, grads_g, config.grad_clip)
        opt_g.step()
        opt_g.zero_grad()
        row = {
            "iteration": it,
            "j": float(j.detach()),
            "kl": float(kl.detach()),
            "beta": beta,
            "disc_acc": disc_acc,
            "temperature": temperature,
        }
        if (it + 1) % config.eval_every == 0 or off == config.n_iterations - 1:
            _eval_row(bundle, probe, row)
            snap = _snapshot(bundle)
        rows.append(row)
    return TrainResult(bundle=bundle, log=rows)


def train_nri(
    scenario: ScenarioConfig,
    train_batch: Batch,
    config: TrainConfig,
    *,
    eval_batch: Batch | None = None,
    bundle: ModelBundle | None = None,
    start_iteration: int = 0,
    total_iterations: int | None = None,
) -> TrainResult:
    """Latent-graph reconstruction baseline: encoder + policy, no reward."""
    bundle = bundle or build_bundle(scenario, "nri", seed=config.seed)
    prior = bundle.prior()
    params = bundle.parameters_for("encoder", "policy")
    opt = torch.optim.Adam(
        [
            {"params": bundle.parameters_for("encoder"), "lr": config.rate("encoder")},
            {"params": bundle.parameters_for("policy"), "lr": config.rate("policy")},
        ]
    )
    beta = config.beta_init
    probe = eval_batch if eval_batch is not None else train_batch
    total = total_iterations or (start_iteration + config.n_iterations)
    rows: list[dict] = []
    snap = _snapshot(bundle)
    for off in range(config.n_iterations):
        it = start_iteration + off
        gen = seeded_generator(derive_seed(config.seed, "nri", it))
        mb = _minibatch(train_batch, config.batch_size, gen)
        temperature = annealed_temperature(
            it, total, config.temperature_start, config.temperature_end
        )
        logits = bundle.encoder(mb.states, bundle.scene)
        kl = kl_to_prior(logits, prior)
        z = sample_edges(logits, temperature=temperature, generator=gen, hard=config.hard_samples)
        recon = nri_objective(bundle, mb, z, teacher_forcing=config.teacher_forcing)
        _guard(recon, it, bundle, snap, config.divergence_limit)
        loss = recon + beta * (kl - scenario.ic)
        opt.zero_grad()
        loss.backward()
        clip_gradients(params, config.grad_clip)
        opt.step()
        beta = update_beta(beta, float(kl.detach()), scenario.ic, config.alpha_beta, config.beta_update)
        row = {
            "iteration": it,
            "recon": float(recon.detach()),
            "kl": float(kl.detach()),
            "beta": beta,
            "temperature": temperature,
        }
        if (it + 1) % config.eval_every == 0 or off == config.n_iterations - 1:
            _eval_row(bundle, probe, row)
            snap = _snapshot(bundle)
        rows.append(row)
    return TrainResult(bundle=bundle, log=rows)


def train_supervised(
    scenario: ScenarioConfig,
    train_batch: Batch,
    config: TrainConfig,
    *,
    eval_batch: Batch | None = None,
    bundle: ModelBundle | None = None,
    start_iteration: int = 0,
) -> TrainResult:
    """Policy regression on demonstrations under the ground-truth graphs."""
    if train_batch.edge_types is None:
        raise InvalidArgumentError("supervised training needs ground-truth graphs")
    bundle = bundle or build_bundle(scenario, "supervised", seed=config.seed)
    params = bundle.parameters_for("policy")
    opt = torch.optim.Adam(params, lr=config.rate("policy"))
    probe = eval_batch if eval_batch is not None else train_batch
    rows: list[dict] = []
    snap = _snapshot(bundle)
    for off in range(config.n_iterations):
        it = start_iteration + off
        gen = seeded_generator(derive_seed(config.seed, "supervised", it))
        mb = _minibatch(train_batch, config.batch_size, gen)
        z = one_hot_types(mb.edge_types, scenario.k_types)
        ro = generate_rollout(bundle, mb, z, None, mode="mean")
        err = ro.states[:, 1:] - mb.states[:, 1:]
        loss = (err * err).mean()
        _guard(loss, it, bundle, snap, config.divergence_limit)
        opt.zero_grad()
        loss.backward()
        clip_gradients(params, config.grad_clip)
        opt.step()
        row = {"iteration": it, "mse": float(loss.detach())}
        if (it + 1) % config.eval_every == 0 or off == config.n_iterations - 1:
            _eval_row(bundle, probe, row)
            snap = _snapshot(bundle)
        rows.append(row)
    return TrainResult(bundle=bundle, log=rows)


TRAINERS = {
    "gri": lambda scn, batch, cfg, **kw: train_gri(scn, batch, cfg, variant="gri", **kw),
    "gri_airl": lambda scn, batch, cfg, **kw: train_gri(scn, batch, cfg, variant="gri_airl", **kw),
    "gri_vairl": lambda scn, batch, cfg, **kw: train_gri(scn, batch, cfg, variant="gri_vairl", **kw),
    "nri": train_nri,
    "supervised": train_supervised,
}
