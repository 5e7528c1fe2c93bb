"""Shared test configuration.

Everything in the package runs on CPU float64 with one torch thread; tests
pin the same so tolerances and bit-exactness claims hold.
"""
import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(20260817)


@pytest.fixture
def gen():
    g = torch.Generator()
    g.manual_seed(20260817)
    return g


def make_states(gen, *shape, kind="point_1d"):
    """Random plausible states for a dynamics kind, last dim set by the kind."""
    from gri import dynamics

    d = dynamics.state_dim(kind)
    out = torch.randn(*shape, d, generator=gen, dtype=torch.float64)
    if kind == "point_1d":
        out[..., 0] = out[..., 0] * 10.0
        out[..., 1] = out[..., 1].abs() * 5.0 + 2.0
    elif kind == "dubins":
        out[..., 0] = out[..., 0] * 10.0
        out[..., 2] = out[..., 2].abs() * 5.0 + 2.0
        out[..., 3] = out[..., 3] * 0.3
    else:
        out[..., 0] = out[..., 0] * 10.0
        out[..., 2] = out[..., 2].abs() * 5.0 + 2.0
    return out
