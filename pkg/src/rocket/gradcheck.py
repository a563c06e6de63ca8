"""Finite-difference and closed-form gradient checks, grouped by scope.

Each check reports its worst relative error against a tolerance.  The
closed-form oracles are looked up through the ``objective`` module at call
time so a test can swap one out and watch the check fail.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from rocket import autodiff as ad
from rocket import objective
from rocket.model import ArchSpec, forward_rocket, init_rocket
from rocket.objective import HINT_KINDS, HintLossSpec, rocket_objective

FD_TOL = 1e-4
ORACLE_TOL = 1e-6
DISTILL_TOL = 0.05
SCOPES = ("autodiff", "objective", "model")


@dataclass
class Check:
    name: str
    max_err: float
    tol: float
    detail: str = ""

    @property
    def ok(self) -> bool:
        return bool(self.max_err < self.tol)

    def line(self) -> str:
        status = "ok  " if self.ok else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"{status} {self.name:<34} max_rel_err={self.max_err:.3e} tol={self.tol:.0e}{extra}"


# ---------------------------------------------------------------------------
# autodiff primitives


def _primitive_cases(rng) -> dict[str, Callable[[ad.Node], ad.Node]]:
    w = ad.constant(rng.uniform(-1, 2, (3, 4)))
    W, b = rng.uniform(-1, 1, (4, 2)), rng.uniform(-1, 1, (1, 2))
    return {
        "relu": lambda n: ad.sum_all(ad.mul(ad.relu(n), w)),
        "softmax": lambda n: ad.sum_all(ad.mul(ad.softmax(n), w)),
        "log": lambda n: ad.sum_all(ad.log(ad.square(n), 1e-3)),
        "square": lambda n: ad.sum_all(ad.square(n)),
        "scale": lambda n: ad.sum_all(ad.scale(ad.square(n), -2.5)),
        "row_sum": lambda n: ad.sum_all(ad.square(ad.row_sum(n))),
        "mean_all": lambda n: ad.mean_all(ad.mul(n, w)),
        "linear": lambda n: ad.sum_all(ad.square(ad.linear(n, W, b))),
    }


def check_autodiff(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng([seed, 1])
    out = []
    for name, build in _primitive_cases(rng).items():
        worst = 0.0
        for _ in range(5):
            v = rng.uniform(-2, 2, (3, 4))
            node = ad.leaf(v)
            ad.backward(build(node))
            fd = ad.finite_diff_grad(lambda a: build(ad.constant(a)).value[0, 0], v.copy())
            worst = max(worst, ad.max_rel_error(ad.grad_or_zeros(node), fd))
        out.append(Check(f"autodiff.{name}", worst, FD_TOL))
    return out


# ---------------------------------------------------------------------------
# closed-form hint gradients


def _autodiff_hint_grad(kind: str, l: np.ndarray, z: np.ndarray, T: float) -> np.ndarray:
    ln, zc = ad.leaf(l), ad.constant(z)
    spec = HintLossSpec(kind=kind, temperature=T)
    ad.backward(objective.hint_loss(spec, ln, ad.softmax(ln), zc, ad.softmax(zc)))
    return ln.grad


def oracle_error(kind: str, cases: int = 1000, seed: int = 0) -> float:
    rng = np.random.default_rng([seed, 2])
    worst = 0.0
    for _ in range(cases):
        n = int(rng.integers(2, 9))
        l, z = rng.uniform(-4, 4, (1, n)), rng.uniform(-4, 4, (1, n))
        want = objective.analytic_hint_grad(kind, l, z)
        worst = max(worst, ad.max_rel_error(_autodiff_hint_grad(kind, l, z, 1.0), want))
    return worst


def distill_limit_error(T: float, cases: int = 200, seed: int = 0) -> float:
    """Worst relative gap between the T^2-weighted distill gradient and its high-T form.

    Logits are centred per row: the limiting form assumes zero-mean logits.
    """
    rng = np.random.default_rng([seed, 3])
    worst = 0.0
    for _ in range(cases):
        n = int(rng.integers(2, 9))
        l, z = rng.uniform(-1, 1, (1, n)), rng.uniform(-1, 1, (1, n))
        l, z = l - l.mean(), z - z.mean()
        got = _autodiff_hint_grad("distill", l, z, T)
        want = objective.analytic_hint_grad("distill", l, z, T) * T * T
        worst = max(worst, float(np.abs(got - want).max() / np.abs(want).max()))
    return worst


def check_objective(seed: int = 0) -> list[Check]:
    out = [Check(f"objective.{k}_closed_form", oracle_error(k, seed=seed), ORACLE_TOL)
           for k in ("softmax_mse", "logit_mimic")]
    errs = {T: distill_limit_error(T, seed=seed) for T in (10.0, 100.0, 1000.0)}
    out.append(Check("objective.distill_high_T", errs[100.0], DISTILL_TOL,
                     f"T=10:{errs[10.0]:.2e} T=1000:{errs[1000.0]:.2e}"))
    shrinking = errs[10.0] > errs[100.0] > errs[1000.0]
    out.append(Check("objective.distill_shrinks_with_T", 0.0 if shrinking else np.inf, 1.0))
    return out


# ---------------------------------------------------------------------------
# whole rocket nets


def random_arch(rng) -> ArchSpec:
    """Small rocket net: at most three layers per path, widths at most eight."""
    n_shared = int(rng.integers(0, 2))
    n_light = int(rng.integers(0, 3 - n_shared))
    n_booster = int(rng.integers(n_light, 3 - n_shared))
    width = lambda k: tuple(int(w) for w in rng.integers(1, 9, k))  # noqa: E731
    return ArchSpec(
        input_dim=int(rng.integers(1, 6)), n_classes=int(rng.integers(2, 5)),
        shared=width(n_shared), light=width(n_light), booster=width(n_booster),
    )


def _random_net(rng):
    arch = random_arch(rng)
    net = init_rocket(arch, int(rng.integers(0, 2**31)))
    # nonzero biases keep pre-activations off the relu kink
    for k in net.params:
        net.params[k] = rng.uniform(-1, 1, net.params[k].shape)
    batch = int(rng.integers(1, 5))
    x = rng.uniform(-1, 1, (batch, arch.input_dim))
    y = np.eye(arch.n_classes)[rng.integers(0, arch.n_classes, batch)]
    return net, x, y


def _objective_value(net, x, y, spec, frozen=None):
    out = forward_rocket(net, x)
    if frozen is None:
        return rocket_objective(out, y, spec, gradient_block=False).total.value[0, 0]
    # booster outputs pinned inside the hint: the function gradient block differentiates
    z = ad.constant(frozen)
    ce = objective.cross_entropy(y, out.p).value[0, 0] + objective.cross_entropy(y, out.q).value[0, 0]
    return ce + spec.lam * objective.hint_loss(spec, out.l, out.p, z, ad.softmax(z)).value[0, 0]


def net_fd_error(net, x, y, spec: HintLossSpec, gradient_block: bool) -> float:
    out = forward_rocket(net, x)
    ad.backward(rocket_objective(out, y, spec, gradient_block).total)
    frozen = out.z.value.copy() if gradient_block else None
    worst = 0.0
    for name in net.params:
        def f(v, name=name):
            saved = net.params[name]
            net.params[name] = v
            try:
                return _objective_value(net, x, y, spec, frozen)
            finally:
                net.params[name] = saved

        fd = ad.finite_diff_grad(f, net.params[name].copy())
        worst = max(worst, ad.max_rel_error(ad.grad_or_zeros(out.params[name]), fd))
    return worst


def check_model(seed: int = 0, nets: int = 50) -> list[Check]:
    rng = np.random.default_rng([seed, 4])
    worst = {True: 0.0, False: 0.0}
    for i in range(nets):
        net, x, y = _random_net(rng)
        spec = HintLossSpec(kind=HINT_KINDS[i % 3], lam=float(rng.uniform(0.1, 2.0)),
                            temperature=float(rng.uniform(1.0, 5.0)))
        for block in (False, True):
            worst[block] = max(worst[block], net_fd_error(net, x, y, spec, block))
    return [
        Check(f"model.full_objective[{nets} nets]", worst[False], FD_TOL),
        Check(f"model.gradient_block[{nets} nets]", worst[True], FD_TOL),
    ]


RUNNERS = {"autodiff": check_autodiff, "objective": check_objective, "model": check_model}


def run(scope: str = "all", seed: int = 0) -> list[Check]:
    scopes = SCOPES if scope == "all" else (scope,)
    out = []
    for s in scopes:
        out.extend(RUNNERS[s](seed))
    return out
