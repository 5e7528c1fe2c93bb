"""Differentiable computation utilities.

All learnable state lives in float64 torch tensors. This module pins the
conventions the rest of the package relies on: deterministic seeded parameter
initialization, named parameter stores with bit-exact save/load, gradient
evaluation, and finite-difference verification of analytic gradients.

Subgradient convention: max(x, 0) and relu take the zero branch at ties, so
d/dx max(x, 0) = 0 at x = 0.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np
import torch

from .errors import InvalidArgumentError, NumericFaultError

DTYPE = torch.float64


def seeded_generator(seed: int) -> torch.Generator:
    g = torch.Generator(device="cpu")
    g.manual_seed(int(seed) & 0x7FFFFFFFFFFFFFFF)
    return g


def derive_seed(master_seed: int, *names) -> int:
    """Derive a per-component seed from a master seed and a name path.

    Name parts may be strings or integers (iteration counters). Uses a
    stable textual hash so the stream layout does not depend on call order
    or on Python's randomized string hashing.
    """
    import hashlib

    parts = [str(int(master_seed))] + [str(n) for n in names]
    h = hashlib.sha256("/".join(parts).encode()).digest()
    return int.from_bytes(h[:8], "little") & 0x7FFFFFFFFFFFFFFF


def init_module(module: torch.nn.Module, generator: torch.Generator) -> torch.nn.Module:
    """Re-initialize all parameters of `module` deterministically.

    Weights with >= 2 dims get uniform(-b, b) with b = 1/sqrt(fan_in); all
    1-d parameters (biases, gains) are zeroed unless their name marks them as
    a log-weight style parameter, which keeps its constructed value.
    """
    module.to(DTYPE)
    for name, p in sorted(module.named_parameters(), key=lambda kv: kv[0]):
        with torch.no_grad():
            if p.dim() >= 2:
                fan_in = int(np.prod(p.shape[1:]))
                bound = 1.0 / np.sqrt(max(fan_in, 1))
                p.uniform_(-bound, bound, generator=generator)
            elif name.endswith("raw"):  # reward log-weights keep their set value
                pass
            else:
                p.zero_()
    return module


@dataclass
class Computation:
    """A named differentiable function of tensor inputs."""

    name: str
    fn: Callable[..., torch.Tensor]

    def __call__(self, *args, **kwargs) -> torch.Tensor:
        return self.fn(*args, **kwargs)


def _first_nonfinite_submodule(module: torch.nn.Module, args, kwargs) -> str | None:
    """Re-run a module forward with hooks to locate the first non-finite output."""
    offender: list[str] = []

    def make_hook(name):
        def hook(_mod, _inp, out):
            if offender:
                return
            tensors = out if isinstance(out, (tuple, list)) else (out,)
            for t in tensors:
                if torch.is_tensor(t) and not torch.isfinite(t).all():
                    offender.append(name)
                    return
        return hook

    handles = [m.register_forward_hook(make_hook(n)) for n, m in module.named_modules() if n]
    try:
        with torch.no_grad():
            module(*args, **kwargs)
    finally:
        for h in handles:
            h.remove()
    return offender[0] if offender else None


def evaluate(computation: Computation | Callable, *args, name: str | None = None, **kwargs) -> torch.Tensor:
    """Run a computation, raising NumericFaultError naming the faulty node on NaN/Inf."""
    if isinstance(computation, Computation):
        fn, label = computation.fn, computation.name
    else:
        fn, label = computation, name or getattr(computation, "__name__", "computation")
    for i, a in enumerate(args):
        if torch.is_tensor(a) and not torch.isfinite(a).all():
            raise NumericFaultError(f"input {i} of '{label}' contains NaN or Inf")
    out = fn(*args, **kwargs)
    if torch.is_tensor(out) and not torch.isfinite(out).all():
        node = None
        target = fn
        if isinstance(target, torch.nn.Module):
            node = _first_nonfinite_submodule(target, args, kwargs)
        where = f"'{label}'" + (f" at node '{node}'" if node else "")
        raise NumericFaultError(f"non-finite value produced in {where}")
    return out


class ParameterStore:
    """Named float64 parameters with deterministic, bit-exact persistence."""

    FORMAT_VERSION = 1

    def __init__(self, params: Mapping[str, torch.Tensor] | None = None, meta: dict | None = None):
        self._params: dict[str, torch.nn.Parameter] = {}
        self.meta: dict = dict(meta or {})
        if params:
            for k, v in params.items():
                self.add(k, v)

    @classmethod
    def from_modules(cls, modules: Mapping[str, torch.nn.Module], meta: dict | None = None) -> "ParameterStore":
        store = cls(meta=meta)
        for prefix, mod in modules.items():
            for name, p in mod.named_parameters():
                store.add(f"{prefix}.{name}", p, share=True)
        return store

    def add(self, name: str, tensor: torch.Tensor, *, share: bool = False):
        if name in self._params:
            raise InvalidArgumentError(f"duplicate parameter name {name!r}")
        if isinstance(tensor, torch.nn.Parameter) and share:
            p = tensor
        else:
            p = torch.nn.Parameter(torch.as_tensor(tensor, dtype=DTYPE).clone())
        self._params[name] = p

    def names(self) -> list[str]:
        return sorted(self._params)

    def __getitem__(self, name: str) -> torch.nn.Parameter:
        try:
            return self._params[name]
        except KeyError:
            raise InvalidArgumentError(f"unknown parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def tensors(self) -> list[torch.nn.Parameter]:
        return [self._params[n] for n in self.names()]

    def n_scalars(self) -> int:
        return sum(p.numel() for p in self._params.values())

    def save(self, path) -> None:
        arrays = {f"param/{n}": self._params[n].detach().numpy() for n in self.names()}
        arrays["__meta__"] = np.frombuffer(
            json.dumps({"format_version": self.FORMAT_VERSION, "meta": self.meta}).encode(),
            dtype=np.uint8,
        )
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "ParameterStore":
        with np.load(path) as data:
            raw = bytes(data["__meta__"].tobytes())
            header = json.loads(raw.decode())
            if header.get("format_version") != cls.FORMAT_VERSION:
                raise InvalidArgumentError(
                    f"unsupported checkpoint format version {header.get('format_version')!r}"
                )
            store = cls(meta=header.get("meta", {}))
            for key in data.files:
                if key.startswith("param/"):
                    store.add(key[len("param/"):], torch.from_numpy(data[key].copy()))
        return store

    def load_into(self, modules: Mapping[str, torch.nn.Module]) -> None:
        """Copy stored values into matching module parameters (by prefixed name)."""
        for prefix, mod in modules.items():
            for name, p in mod.named_parameters():
                full = f"{prefix}.{name}"
                if full not in self._params:
                    raise InvalidArgumentError(f"checkpoint missing parameter {full!r}")
                src = self._params[full]
                if src.shape != p.shape:
                    raise InvalidArgumentError(
                        f"shape mismatch for {full!r}: checkpoint {tuple(src.shape)} vs model {tuple(p.shape)}"
                    )
                with torch.no_grad():
                    p.copy_(src)


def gradient(output: torch.Tensor, params: Iterable[torch.Tensor], *, allow_unused: bool = True) -> list[torch.Tensor]:
    """Gradients of a scalar output w.r.t. params (zeros for unused params)."""
    params = list(params)
    if output.numel() != 1:
        raise InvalidArgumentError("gradient target must be a scalar")
    grads = torch.autograd.grad(output, params, allow_unused=allow_unused, create_graph=False)
    out = []
    for p, g in zip(params, grads):
        out.append(torch.zeros_like(p) if g is None else g)
    return out


@dataclass
class FiniteDiffEntry:
    name: str
    analytic: float
    numeric: float
    rel_err: float
    kink: bool = False


@dataclass
class FiniteDiffReport:
    entries: list[FiniteDiffEntry] = field(default_factory=list)
    step: float = 1e-5
    rel_tol: float = 1e-4

    @property
    def max_rel_err(self) -> float:
        errs = [e.rel_err for e in self.entries if not e.kink]
        return max(errs) if errs else 0.0

    @property
    def n_kinks(self) -> int:
        return sum(e.kink for e in self.entries)

    @property
    def passed(self) -> bool:
        return all(e.rel_err < self.rel_tol for e in self.entries if not e.kink)

    def summary(self) -> str:
        return (
            f"finite-diff check: {len(self.entries)} probes, max rel err "
            f"{self.max_rel_err:.3e}, {self.n_kinks} kink(s) excluded, "
            f"{'PASS' if self.passed else 'FAIL'} at tol {self.rel_tol:g}"
        )


def _rel_err(a: float, b: float, floor: float = 1e-7) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def finite_diff_check(
    fn: Callable[[], torch.Tensor],
    params: Iterable[torch.Tensor] | ParameterStore,
    *,
    mode: str = "directional",
    n_probes: int = 1,
    step: float = 1e-5,
    rel_tol: float = 1e-4,
    generator: torch.Generator | None = None,
    kink_tol: float = 1e-3,
) -> FiniteDiffReport:
    """Compare analytic gradients of the scalar `fn()` against central differences.

    In "directional" mode each probe perturbs all parameters along one random
    unit direction (two extra evaluations per probe); "per_param" mode runs a
    central difference for every scalar entry. Probes where the one-sided
    differences disagree beyond `kink_tol` are flagged as kinks and excluded
    from the pass/fail verdict, since a subgradient at a tie point has no
    unique finite-difference value.
    """
    if isinstance(params, ParameterStore):
        named = [(n, params[n]) for n in params.names()]
    else:
        named = [(f"p{i}", p) for i, p in enumerate(params)]
    tensors = [p for _, p in named]
    if not tensors:
        raise InvalidArgumentError("no parameters to check")
    gen = generator if generator is not None else seeded_generator(0)

    out = evaluate(Computation("finite_diff_target", fn))
    grads = gradient(out, tensors)
    report = FiniteDiffReport(step=step, rel_tol=rel_tol)

    def f_at_offset(deltas: list[torch.Tensor]) -> float:
        with torch.no_grad():
            for p, d in zip(tensors, deltas):
                p.add_(d)
        try:
            return float(fn().detach())
        finally:
            with torch.no_grad():
                for p, d in zip(tensors, deltas):
                    p.sub_(d)

    f0 = float(out.detach())

    if mode == "directional":
        for probe in range(n_probes):
            direction = [torch.randn(p.shape, generator=gen, dtype=DTYPE) for p in tensors]
            norm = torch.sqrt(sum((d * d).sum() for d in direction))
            direction = [d / norm for d in direction]
            analytic = float(sum((g * d).sum() for g, d in zip(grads, direction)))
            plus = f_at_offset([d * step for d in direction])
            minus = f_at_offset([-d * step for d in direction])
            numeric = (plus - minus) / (2 * step)
            d_fwd = (plus - f0) / step
            d_bwd = (f0 - minus) / step
            kink = _rel_err(d_fwd, d_bwd, floor=1.0) > kink_tol and _rel_err(analytic, numeric) > rel_tol
            report.entries.append(
                FiniteDiffEntry(f"direction[{probe}]", analytic, numeric, _rel_err(analytic, numeric), kink)
            )
    elif mode == "per_param":
        for t_idx, (name, p) in enumerate(named):
            g = grads[t_idx]
            flat = p.detach().reshape(-1)
            for idx in range(flat.numel()):
                delta = torch.zeros_like(p).reshape(-1)
                delta[idx] = step
                delta = delta.reshape(p.shape)
                zeros = [torch.zeros_like(q) for _, q in named]
                plus_d = list(zeros)
                plus_d[t_idx] = delta
                minus_d = list(zeros)
                minus_d[t_idx] = -delta
                plus = f_at_offset(plus_d)
                minus = f_at_offset(minus_d)
                numeric = (plus - minus) / (2 * step)
                analytic = float(g.reshape(-1)[idx])
                d_fwd = (plus - f0) / step
                d_bwd = (f0 - minus) / step
                kink = _rel_err(d_fwd, d_bwd, floor=1.0) > kink_tol and _rel_err(analytic, numeric) > rel_tol
                label = name if flat.numel() == 1 else f"{name}[{idx}]"
                report.entries.append(
                    FiniteDiffEntry(label, analytic, numeric, _rel_err(analytic, numeric), kink)
                )
    else:
        raise InvalidArgumentError(f"unknown finite-diff mode {mode!r}")
    return report


def clip_gradients(params: Iterable[torch.Tensor], max_norm: float) -> float:
    return float(torch.nn.utils.clip_grad_norm_(list(params), max_norm))


def to_tensor(arr, *, requires_grad: bool = False) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(arr), dtype=DTYPE)
    if requires_grad:
        t.requires_grad_(True)
    return t
