"""Parameter stores, seeding, gradient helpers, and the finite-diff harness."""
import math

import numpy as np
import pytest
import torch

from gri.autodiff import (
    DTYPE,
    Computation,
    ParameterStore,
    clip_gradients,
    derive_seed,
    evaluate,
    finite_diff_check,
    gradient,
    init_module,
    seeded_generator,
    to_tensor,
)
from gri.errors import InvalidArgumentError, NumericFaultError


def test_derive_seed_is_deterministic_and_name_sensitive():
    a = derive_seed(7, "encoder")
    assert a == derive_seed(7, "encoder")
    assert a != derive_seed(8, "encoder")
    assert a != derive_seed(7, "policy")
    assert derive_seed(7, "it", 3) == derive_seed(7, "it", "3")
    assert derive_seed(7, "it", 3) != derive_seed(7, "it", 4)
    assert 0 <= a < 2 ** 63


def test_seeded_generator_reproduces_draws():
    x1 = torch.rand(5, generator=seeded_generator(42), dtype=DTYPE)
    x2 = torch.rand(5, generator=seeded_generator(42), dtype=DTYPE)
    assert torch.equal(x1, x2)


def test_init_module_is_deterministic_and_zeroes_biases():
    def build():
        m = torch.nn.Sequential(torch.nn.Linear(4, 8), torch.nn.ELU(), torch.nn.Linear(8, 2))
        return init_module(m, seeded_generator(5))

    m1, m2 = build(), build()
    for p1, p2 in zip(m1.parameters(), m2.parameters()):
        assert torch.equal(p1, p2)
        assert p1.dtype == DTYPE
    for name, p in m1.named_parameters():
        if p.dim() == 1:
            assert torch.all(p == 0), name


def test_parameter_store_round_trips_bit_exactly(tmp_path):
    gen = seeded_generator(1)
    store = ParameterStore(meta={"model": "gri", "scenario": "cf_synthetic"})
    store.add("w", torch.randn(3, 4, generator=gen, dtype=DTYPE))
    store.add("b", torch.randn(4, generator=gen, dtype=DTYPE) * 1e-17)
    path = tmp_path / "ckpt.npz"
    store.save(path)
    back = ParameterStore.load(path)
    assert back.meta == store.meta
    assert back.names() == ["b", "w"]
    for n in store.names():
        assert np.array_equal(back[n].detach().numpy(), store[n].detach().numpy())


def test_parameter_store_save_is_byte_identical(tmp_path):
    store = ParameterStore(meta={"k": 1})
    store.add("w", torch.full((2, 2), 1.0 / 3.0, dtype=DTYPE))
    p1, p2 = tmp_path / "a.npz", tmp_path / "b.npz"
    store.save(p1)
    store.save(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_parameter_store_rejects_duplicates_and_unknown_names():
    store = ParameterStore()
    store.add("w", torch.zeros(2))
    with pytest.raises(InvalidArgumentError):
        store.add("w", torch.zeros(2))
    with pytest.raises(InvalidArgumentError):
        store["missing"]


def test_load_into_checks_shapes_and_copies_values():
    m = init_module(torch.nn.Linear(3, 2), seeded_generator(0))
    store = ParameterStore.from_modules({"net": m})
    path_vals = {n: store[n].detach().clone() + 1.0 for n in store.names()}
    fresh = ParameterStore({n: v for n, v in path_vals.items()})
    fresh.load_into({"net": m})
    for n, p in m.named_parameters():
        assert torch.equal(p, path_vals[f"net.{n}"])
    bad = ParameterStore({"net.weight": torch.zeros(2, 4), "net.bias": torch.zeros(2)})
    with pytest.raises(InvalidArgumentError):
        bad.load_into({"net": m})


def test_gradient_returns_zeros_for_unused_params():
    a = torch.nn.Parameter(torch.tensor(2.0, dtype=DTYPE))
    b = torch.nn.Parameter(torch.tensor(3.0, dtype=DTYPE))
    out = a * a
    ga, gb = gradient(out, [a, b])
    assert ga.item() == 4.0
    assert gb.item() == 0.0
    with pytest.raises(InvalidArgumentError):
        gradient(torch.stack([a, b]), [a])


def test_clip_gradients_scales_to_max_norm():
    a = torch.nn.Parameter(torch.tensor([3.0, 4.0], dtype=DTYPE))
    a.grad = torch.tensor([3.0, 4.0], dtype=DTYPE)
    norm = clip_gradients([a], 1.0)
    assert abs(norm - 5.0) < 1e-12
    assert torch.allclose(a.grad, torch.tensor([0.6, 0.8], dtype=DTYPE), atol=1e-12)
    # below the cap nothing changes
    a.grad = torch.tensor([0.3, 0.4], dtype=DTYPE)
    norm = clip_gradients([a], 1.0)
    assert abs(norm - 0.5) < 1e-12
    assert torch.allclose(a.grad, torch.tensor([0.3, 0.4], dtype=DTYPE), atol=0)


def test_evaluate_flags_nonfinite_inputs_and_outputs():
    comp = Computation(name="inverse", fn=lambda x: 1.0 / x)
    ok = evaluate(comp, torch.tensor([2.0], dtype=DTYPE))
    assert ok.item() == 0.5
    with pytest.raises(NumericFaultError, match="inverse"):
        evaluate(comp, torch.tensor([0.0], dtype=DTYPE))
    with pytest.raises(NumericFaultError, match="input 0"):
        evaluate(comp, torch.tensor([float("nan")], dtype=DTYPE))


def test_evaluate_names_offending_submodule():
    class Exploder(torch.nn.Module):
        def forward(self, x):
            return torch.log(-x.abs())

    net = torch.nn.Sequential(torch.nn.Identity(), Exploder()).to(DTYPE)
    with pytest.raises(NumericFaultError, match="node '1'"):
        evaluate(net, torch.ones(2, dtype=DTYPE), name="net")


def test_finite_diff_accepts_correct_gradient():
    """Quartic-plus-trig scalar with a hand-checkable gradient."""
    p = torch.nn.Parameter(torch.tensor([0.3, -0.7, 1.1], dtype=DTYPE))

    def fn():
        return (p ** 4).sum() + torch.sin(p).prod()

    report = finite_diff_check(fn, [p], n_probes=20, generator=seeded_generator(3))
    assert report.passed
    assert report.max_rel_err < 1e-6


def test_finite_diff_rejects_wrong_gradient():
    p = torch.nn.Parameter(torch.tensor([0.5, 0.25], dtype=DTYPE))

    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            return (x ** 2).sum()

        @staticmethod
        def backward(ctx, g):
            return g * torch.tensor([1.0, 1.0], dtype=DTYPE)  # truth is 2x

    report = finite_diff_check(lambda: Wrong.apply(p), [p], n_probes=8, generator=seeded_generator(4))
    assert not report.passed
    assert report.max_rel_err > 1e-2


def test_finite_diff_flags_kinks_instead_of_failing():
    p = torch.nn.Parameter(torch.tensor([0.0], dtype=DTYPE))
    report = finite_diff_check(
        lambda: torch.relu(p).sum() * 3.0,
        [p],
        n_probes=6,
        generator=seeded_generator(5),
    )
    assert report.n_kinks == 6
    assert report.passed  # kinks are excluded, not failed
    assert "kink" in report.summary()


def test_finite_diff_per_param_mode_covers_every_scalar():
    p = torch.nn.Parameter(torch.tensor([[1.0, 2.0], [3.0, 4.0]], dtype=DTYPE))
    report = finite_diff_check(lambda: (p ** 3).sum(), [p], mode="per_param")
    assert len(report.entries) == 4
    assert report.passed


def test_to_tensor_enforces_dtype():
    t = to_tensor(np.array([1, 2, 3]))
    assert t.dtype == DTYPE
    assert to_tensor(t) is not None
