"""Rocket architecture: shared trunk, light head and booster head.

Parameters live in one flat dict keyed ``"S.<i>.W"``, ``"L.<i>.b"`` and so
on.  The prefix names the partition (shared, light, booster) and is the only
thing that decides ownership.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, NamedTuple, Optional

import numpy as np

from rocket import autodiff as ad
from rocket.autodiff import Node
from rocket.errors import DimensionError, SpecError

# no-sharing nets draw their light path from this shifted seed
NO_SHARING_SEED_OFFSET = 7919

_ROLE_KEYS = {"S": 0, "L": 1, "B": 2}

Path = Literal["light", "booster"]


@dataclass(frozen=True)
class ArchSpec:
    input_dim: int
    n_classes: int
    shared: tuple[int, ...] = ()
    light: tuple[int, ...] = ()
    booster: tuple[int, ...] = ()
    sharing: str = "bottom"
    residual: bool = False
    # False gives each path its own copy of the trunk widths (no-sharing ablation)
    share_trunk: bool = True

    def __post_init__(self):
        for name in ("shared", "light", "booster"):
            object.__setattr__(self, name, tuple(int(w) for w in getattr(self, name)))

    def validate(self) -> "ArchSpec":
        if self.input_dim < 1:
            raise SpecError("input_dim must be positive")
        if self.n_classes < 2:
            raise SpecError("n_classes must be at least 2")
        for name in ("shared", "light", "booster"):
            if any(w < 1 for w in getattr(self, name)):
                raise SpecError(f"{name} widths must be positive")
        if self.sharing not in ("bottom", "interval"):
            raise SpecError(f"sharing mode must be bottom or interval, got {self.sharing!r}")
        if len(self.booster) < len(self.light):
            raise SpecError(
                "booster path must be at least as deep as the light path "
                f"({len(self.booster)} < {len(self.light)} specific layers)"
            )
        if self.sharing == "interval":
            if not self.residual:
                raise SpecError("interval sharing requires residual=True")
            if not self.shared:
                raise SpecError("interval sharing requires shared blocks")
            _assign_interval_blocks(self.shared, self.booster)
        return self

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "n_classes": self.n_classes,
            "shared": list(self.shared),
            "light": list(self.light),
            "booster": list(self.booster),
            "sharing": self.sharing,
            "residual": self.residual,
            "share_trunk": self.share_trunk,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(**d)


class Layer(NamedTuple):
    name: str  # parameter prefix, e.g. "S.0"
    d_in: int
    d_out: int
    kind: str  # "plain" | "residual" | "output"
    seed_key: tuple[int, int]  # (role, position) used to derive the init stream
    seed_shift: int = 0


def _assign_interval_blocks(shared, booster) -> list[list[int]]:
    """Map each booster block to the shared group of equal width.

    Returns, for every group (maximal run of equal shared widths), the list of
    booster block indices appended after it.
    """
    groups: list[int] = []
    for i, w in enumerate(shared):
        if i == 0 or shared[i - 1] != w:
            groups.append(w)
    assigned: list[list[int]] = [[] for _ in groups]
    g = 0
    for j, w in enumerate(booster):
        while g < len(groups) and groups[g] != w:
            g += 1
        if g == len(groups):
            raise SpecError(
                f"interval sharing: booster block {j} (width {w}) has no matching "
                "shared group at or after the previous one"
            )
        assigned[g].append(j)
    return assigned


def _layer_kind(d_in: int, d_out: int, residual: bool) -> str:
    return "residual" if residual and d_in == d_out else "plain"


def _shared_layouts(arch: ArchSpec) -> tuple[list[Layer], list[Layer]]:
    d = arch.input_dim
    trunk: list[Layer] = []
    for i, w in enumerate(arch.shared):
        trunk.append(Layer(f"S.{i}", d, w, _layer_kind(d, w, arch.residual), (0, i)))
        d = w
    trunk_out = d

    light: list[Layer] = list(trunk)
    d = trunk_out
    for i, w in enumerate(arch.light):
        light.append(Layer(f"L.{i}", d, w, _layer_kind(d, w, arch.residual), (1, len(light))))
        d = w
    light.append(Layer(f"L.{len(arch.light)}", d, arch.n_classes, "output", (1, len(light))))

    booster: list[Layer] = []
    if arch.sharing == "bottom":
        booster.extend(trunk)
        d = trunk_out
        for i, w in enumerate(arch.booster):
            booster.append(
                Layer(f"B.{i}", d, w, _layer_kind(d, w, arch.residual), (2, len(booster)))
            )
            d = w
    else:
        assigned = _assign_interval_blocks(arch.shared, arch.booster)
        g = -1
        for i, layer in enumerate(trunk):
            booster.append(layer)
            if i == 0 or arch.shared[i - 1] != arch.shared[i]:
                g += 1
            last_of_group = i == len(trunk) - 1 or arch.shared[i + 1] != arch.shared[i]
            if last_of_group:
                for j in assigned[g]:
                    w = arch.booster[j]
                    booster.append(Layer(f"B.{j}", w, w, "residual", (2, len(booster))))
        d = trunk_out
    n_b = len(arch.booster)
    booster.append(Layer(f"B.{n_b}", d, arch.n_classes, "output", (2, len(booster))))
    return light, booster


def _rename_unshared(path: list[Layer], prefix: str, shift: int) -> list[Layer]:
    return [
        layer._replace(name=f"{prefix}.{i}", seed_shift=shift) for i, layer in enumerate(path)
    ]


def path_layouts(arch: ArchSpec) -> tuple[list[Layer], list[Layer]]:
    """Ordered layer lists for the light and booster paths."""
    light, booster = _shared_layouts(arch)
    if not arch.share_trunk:
        light = _rename_unshared(light, "L", NO_SHARING_SEED_OFFSET)
        booster = _rename_unshared(booster, "B", 0)
    return light, booster


class RocketOutputs(NamedTuple):
    l: Node
    z: Node
    p: Node
    q: Node
    params: dict[str, Node]


@dataclass
class RocketNet:
    arch: ArchSpec
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.light_layers, self.booster_layers = path_layouts(self.arch)

    def partition(self) -> dict[str, list[str]]:
        parts: dict[str, list[str]] = {"S": [], "L": [], "B": []}
        for name in self.params:
            parts[name.split(".", 1)[0]].append(name)
        return parts

    def layer_names(self) -> list[str]:
        seen: dict[str, None] = {}
        for layer in self.light_layers + self.booster_layers:
            seen.setdefault(layer.name, None)
        return sorted(seen, key=_param_sort_key)

    def path_params(self, path: Path) -> list[str]:
        layers = self.light_layers if path == "light" else self.booster_layers
        return [f"{layer.name}.{k}" for layer in layers for k in ("W", "b")]

    def copy(self) -> "RocketNet":
        return RocketNet(self.arch, {k: v.copy() for k, v in self.params.items()})


def _param_sort_key(name: str):
    parts = name.split(".")
    return (_ROLE_KEYS[parts[0]], int(parts[1])) + tuple(parts[2:])


def expected_param_names(arch: ArchSpec) -> list[str]:
    light, booster = path_layouts(arch)
    names = {f"{layer.name}.{k}" for layer in light + booster for k in ("W", "b")}
    return sorted(names, key=_param_sort_key)


def init_rocket(arch: ArchSpec, seed: int) -> RocketNet:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    arch.validate()
    light, booster = path_layouts(arch)
    params: dict[str, np.ndarray] = {}
    for layer in light + booster:
        if f"{layer.name}.W" in params:
            continue
        role, pos = layer.seed_key
        rng = np.random.default_rng([seed + layer.seed_shift, role, pos])
        bound = math.sqrt(6.0 / (layer.d_in + layer.d_out))
        params[f"{layer.name}.W"] = rng.uniform(-bound, bound, size=(layer.d_in, layer.d_out))
        params[f"{layer.name}.b"] = np.zeros((1, layer.d_out))
    ordered = {k: params[k] for k in sorted(params, key=_param_sort_key)}
    return RocketNet(arch, ordered)


def _apply(layer: Layer, h: Node, nodes: dict[str, Node]) -> Node:
    out = ad.linear(h, nodes[f"{layer.name}.W"], nodes[f"{layer.name}.b"])
    if layer.kind == "output":
        return out
    if layer.kind == "residual":
        return ad.add(h, ad.relu(out))
    return ad.relu(out)


def _run_path(layers: list[Layer], x: Node, nodes: dict[str, Node], memo: dict) -> Node:
    h = x
    for layer in layers:
        key = (layer.name, id(h))
        if key not in memo:
            memo[key] = (_apply(layer, h, nodes), h)
        h = memo[key][0]
    return h


def _input_node(net: RocketNet, x) -> Node:
    if isinstance(x, Node):
        node = x
    else:
        node = ad.constant(x, name="x")
    if node.shape[1] != net.arch.input_dim:
        raise DimensionError(
            f"input has {node.shape[1]} features, arch expects {net.arch.input_dim}"
        )
    return node


def param_nodes(net: RocketNet, names=None) -> dict[str, Node]:
    names = net.params if names is None else names
    return {k: Node(net.params[k], name=k) for k in names}


def forward_rocket(net: RocketNet, x, nodes: Optional[dict[str, Node]] = None) -> RocketOutputs:
    """Both paths on one tape; trunk activations are computed once."""
    x = _input_node(net, x)
    nodes = param_nodes(net) if nodes is None else nodes
    memo: dict = {}
    l = _run_path(net.light_layers, x, nodes, memo)
    z = _run_path(net.booster_layers, x, nodes, memo)
    return RocketOutputs(l, z, ad.softmax(l), ad.softmax(z), nodes)


def light_only_forward(net: RocketNet, x, nodes: Optional[dict[str, Node]] = None) -> tuple[Node, Node]:
    """Inference path: trunk plus light head only, never touching W_B."""
    x = _input_node(net, x)
    nodes = param_nodes(net, net.path_params("light")) if nodes is None else nodes
    l = _run_path(net.light_layers, x, nodes, {})
    return l, ad.softmax(l)


def booster_only_forward(net: RocketNet, x, nodes: Optional[dict[str, Node]] = None):
    x = _input_node(net, x)
    nodes = param_nodes(net, net.path_params("booster")) if nodes is None else nodes
    z = _run_path(net.booster_layers, x, nodes, {})
    return z, ad.softmax(z)


def count_multiplications(net_or_arch, path: Path) -> int:
    """Scalar multiplies in one single-example forward pass along ``path``."""
    arch = net_or_arch.arch if isinstance(net_or_arch, RocketNet) else net_or_arch
    light, booster = path_layouts(arch)
    layers = light if path == "light" else booster
    return sum(layer.d_in * layer.d_out for layer in layers)


def mlp_multiplications(widths) -> int:
    """Multiplications of a plain fully connected stack ``widths[0] -> ... -> widths[-1]``."""
    arch = ArchSpec(input_dim=widths[0], n_classes=widths[-1], light=tuple(widths[1:-1]),
                    booster=tuple(widths[1:-1]))
    return count_multiplications(arch, "light")
