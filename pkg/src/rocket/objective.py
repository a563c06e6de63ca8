"""Co-training objective: two cross-entropies plus a weighted hint loss.

The closed-form hint gradients at the bottom of this module are kept as
independent oracles for the autodiff path; training never calls them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from rocket import autodiff as ad
from rocket.autodiff import Node
from rocket.errors import DimensionError, SpecError
from rocket.model import RocketOutputs

EPS = 1e-12

HINT_KINDS = ("softmax_mse", "logit_mimic", "distill")


@dataclass(frozen=True)
class HintLossSpec:
    kind: str = "logit_mimic"
    temperature: float = 4.0
    lam: float = 1.0
    # distill only: put the light distribution in the target slot instead
    swap_distill: bool = False

    def validate(self) -> "HintLossSpec":
        if self.kind not in HINT_KINDS:
            raise SpecError(f"unknown hint loss kind {self.kind!r}; expected one of {HINT_KINDS}")
        if self.kind == "distill" and not self.temperature > 0:
            raise SpecError(f"distill temperature must be positive, got {self.temperature}")
        if self.lam < 0:
            raise SpecError(f"hint weight lambda must be non-negative, got {self.lam}")
        return self


def _check_pair(a: Node, b: Node, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes {a.shape} and {b.shape} differ")


def cross_entropy(y, p) -> Node:
    """Batch mean of ``-sum_i y_i log(p_i + EPS)``."""
    y = y if isinstance(y, Node) else ad.constant(y, name="y")
    p = p if isinstance(p, Node) else ad.constant(p)
    _check_pair(y, p, "cross_entropy")
    per_entry = ad.mul(y, ad.log(p, EPS))
    return ad.scale(ad.sum_all(per_entry), -1.0 / y.shape[0])


def _distill(l: Node, z: Node, T: float, swap: bool) -> Node:
    soft_l = ad.softmax(ad.scale(l, 1.0 / T))
    soft_z = ad.softmax(ad.scale(z, 1.0 / T))
    target, pred = (soft_l, soft_z) if swap else (soft_z, soft_l)
    return ad.scale(cross_entropy(target, pred), T * T)


def hint_loss(spec: HintLossSpec, l: Node, p: Node, z: Node, q: Node) -> Node:
    """Batch-mean hint loss between light (l, p) and booster (z, q) outputs.

    Pass ``stop_gradient`` or constant nodes for ``z``/``q`` to freeze the
    booster side.
    """
    spec.validate()
    _check_pair(l, z, "hint_loss")
    batch = l.shape[0]
    if spec.kind == "softmax_mse":
        return ad.scale(ad.sum_all(ad.square(ad.sub(p, q))), 1.0 / batch)
    if spec.kind == "logit_mimic":
        return ad.scale(ad.sum_all(ad.square(ad.sub(l, z))), 1.0 / batch)
    return _distill(l, z, spec.temperature, spec.swap_distill)


def frozen_targets(z: np.ndarray) -> tuple[Node, Node]:
    """Constant booster logits/probabilities from a detached teacher."""
    zc = ad.constant(z, name="z*")
    return zc, ad.softmax(zc)


@dataclass
class ObjectiveBreakdown:
    total: Node
    ce_light: Optional[Node] = None
    ce_booster: Optional[Node] = None
    hint: Optional[Node] = None
    kd: Optional[Node] = None
    lam: float = 0.0
    kd_weight: float = 0.0

    def values(self) -> dict[str, float]:
        out = {}
        for key in ("ce_light", "ce_booster", "hint", "kd", "total"):
            node = getattr(self, key)
            if node is not None:
                out[key] = float(node.value[0, 0])
        return out


def combine(
    ce_light: Optional[Node] = None,
    ce_booster: Optional[Node] = None,
    hint: Optional[Node] = None,
    lam: float = 0.0,
    kd: Optional[Node] = None,
    kd_weight: float = 0.0,
) -> ObjectiveBreakdown:
    terms = [t for t in (ce_light, ce_booster) if t is not None]
    if hint is not None:
        terms.append(ad.scale(hint, lam))
    if kd is not None:
        terms.append(ad.scale(kd, kd_weight))
    if not terms:
        raise SpecError("objective has no terms")
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ObjectiveBreakdown(total, ce_light, ce_booster, hint, kd, lam, kd_weight)


def rocket_objective(
    out: RocketOutputs,
    y,
    spec: HintLossSpec,
    gradient_block: bool = True,
    kd_teacher: Optional[tuple[Node, Node]] = None,
    kd_spec: Optional[HintLossSpec] = None,
    kd_weight: float = 1.0,
) -> ObjectiveBreakdown:
    """H(y,p) + H(y,q) + lam * hint, all on the forward tape.

    With ``gradient_block`` the hint sees the booster outputs through
    ``stop_gradient``: it still pulls the light net toward the booster but
    contributes nothing to the booster's own gradients.
    """
    spec.validate()
    y = y if isinstance(y, Node) else ad.constant(y, name="y")
    ce_l = cross_entropy(y, out.p)
    ce_b = cross_entropy(y, out.q)
    if gradient_block:
        z, q = ad.stop_gradient(out.z), ad.stop_gradient(out.q)
    else:
        z, q = out.z, out.q
    hint = hint_loss(spec, out.l, out.p, z, q)
    kd = None
    if kd_teacher is not None:
        kd_spec = kd_spec or HintLossSpec(kind="distill")
        kd = hint_loss(kd_spec, out.l, out.p, *kd_teacher)
    return combine(ce_l, ce_b, hint, spec.lam, kd, kd_weight if kd is not None else 0.0)


# ---------------------------------------------------------------------------
# closed-form oracles


def _softmax_row(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - v.max())
    return e / e.sum()


def analytic_hint_grad(kind: str, l, z, T: float = 1.0) -> np.ndarray:
    """Closed-form d(hint)/dl for one row of logits.

    softmax_mse: 2 p_i [p_i - q_i + sum_k p_k (q_k - p_k)]
    logit_mimic: 2 (l_i - z_i)
    distill:     (l_i - z_i) / (N T^2), the high-temperature limit without
                 the T^2 loss multiplier
    """
    l = np.asarray(l, dtype=np.float64).reshape(1, -1)
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    if l.shape != z.shape:
        raise DimensionError(f"analytic_hint_grad: shapes {l.shape} and {z.shape} differ")
    if kind == "softmax_mse":
        p, q = _softmax_row(l[0]), _softmax_row(z[0])
        return (2.0 * p * (p - q + np.dot(p, q - p))).reshape(1, -1)
    if kind == "logit_mimic":
        return 2.0 * (l - z)
    if kind == "distill":
        n = l.shape[1]
        return (l - z) / (n * T * T)
    raise SpecError(f"unknown hint loss kind {kind!r}")


@dataclass
class VanishingReport:
    softmax_mse_grad: np.ndarray
    logit_mimic_grad: np.ndarray
    flagged: list[int]

    def __str__(self) -> str:
        lines = ["coord  |softmax_mse grad|  |logit_mimic grad|  flagged"]
        for i, (a, b) in enumerate(zip(np.abs(self.softmax_mse_grad), np.abs(self.logit_mimic_grad))):
            lines.append(f"{i:5d}  {a:18.3e}  {b:18.3e}  {'yes' if i in self.flagged else ''}")
        return "\n".join(lines)


def grad_vanishing_probe(l, z, tiny: float = 1e-6, gap: float = 1.0) -> VanishingReport:
    """Coordinates where the softmax-MSE gradient is ~0 though the logits disagree."""
    l = np.asarray(l, dtype=np.float64).reshape(1, -1)
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    g_mse = analytic_hint_grad("softmax_mse", l, z)[0]
    g_mimic = analytic_hint_grad("logit_mimic", l, z)[0]
    diff = np.abs(l - z)[0]
    flagged = [i for i in range(l.shape[1]) if abs(g_mse[i]) < tiny and diff[i] > gap]
    return VanishingReport(g_mse, g_mimic, flagged)
