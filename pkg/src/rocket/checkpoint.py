"""Binary checkpoint container.

Layout (all integers unsigned 64-bit little-endian)::

    b"RCKT1"
    len(arch_json) | arch_json (UTF-8)
    repeated until EOF:
        len(name) | name | rows | cols | rows*cols float64 LE, row-major
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from rocket.errors import FormatError, SpecError
from rocket.model import ArchSpec, RocketNet, expected_param_names

MAGIC = b"RCKT1"
_U64 = struct.Struct("<Q")


def encode_checkpoint(net: RocketNet) -> bytes:
    out = bytearray(MAGIC)
    arch = json.dumps(net.arch.to_dict(), sort_keys=True).encode("utf-8")
    out += _U64.pack(len(arch)) + arch
    for name, value in net.params.items():
        raw = name.encode("utf-8")
        rows, cols = value.shape
        out += _U64.pack(len(raw)) + raw + _U64.pack(rows) + _U64.pack(cols)
        out += np.ascontiguousarray(value, dtype="<f8").tobytes()
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"checkpoint truncated while reading {what} at byte {self.pos} "
                f"(need {n}, have {len(self.data) - self.pos})"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u64(self, what: str) -> int:
        return _U64.unpack(self.take(8, what))[0]


def decode_checkpoint(data: bytes) -> RocketNet:
    r = _Reader(data)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise FormatError("bad checkpoint magic; expected RCKT1")
    n = r.u64("arch length")
    try:
        arch = ArchSpec.from_dict(json.loads(r.take(n, "arch spec").decode("utf-8")))
        arch.validate()
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError, SpecError) as exc:
        raise FormatError(f"checkpoint arch spec unreadable: {exc}") from None
    params: dict[str, np.ndarray] = {}
    while r.pos < len(data):
        k = r.u64("name length")
        name = r.take(k, "parameter name").decode("utf-8", errors="replace")
        rows, cols = r.u64(f"{name} rows"), r.u64(f"{name} cols")
        raw = r.take(8 * rows * cols, f"{name} values")
        params[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(rows, cols)
    expected = expected_param_names(arch)
    missing = [n for n in expected if n not in params]
    extra = [n for n in params if n not in expected]
    if missing:
        raise FormatError(f"checkpoint missing parameters: {', '.join(missing)}")
    if extra:
        raise FormatError(f"checkpoint has unexpected parameters: {', '.join(extra)}")
    net = RocketNet(arch, {n: params[n] for n in expected})
    for layer in net.light_layers + net.booster_layers:
        shape = net.params[f"{layer.name}.W"].shape
        if shape != (layer.d_in, layer.d_out):
            raise FormatError(f"{layer.name}.W has shape {shape}, arch needs {(layer.d_in, layer.d_out)}")
        if net.params[f"{layer.name}.b"].shape != (1, layer.d_out):
            raise FormatError(f"{layer.name}.b has wrong shape")
    return net


def save_checkpoint(net: RocketNet, path) -> None:
    Path(path).write_bytes(encode_checkpoint(net))


def load_checkpoint(path) -> RocketNet:
    return decode_checkpoint(Path(path).read_bytes())


def checkpoint_digest(net: RocketNet) -> str:
    return hashlib.sha256(encode_checkpoint(net)).hexdigest()
