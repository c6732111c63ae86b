"""Named parameter collections, initialisation, SGD with momentum, checkpoints."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .engine import Var
from .errors import DimensionError, FormatError

MAGIC = b"LFSAL1"


class ParamSet:
    """Ordered ``name -> array`` map with a same-shaped velocity per entry.

    Names follow ``<prefix>.<layer>.weight`` / ``<prefix>.<layer>.bias``.
    """

    def __init__(self, values: dict[str, np.ndarray] | None = None):
        self.values: dict[str, np.ndarray] = {}
        self.velocity: dict[str, np.ndarray] = {}
        for name, v in (values or {}).items():
            self.add(name, v)

    def add(self, name: str, value: np.ndarray):
        if name in self.values:
            raise KeyError(f"duplicate parameter name {name!r}")
        self.values[name] = np.asarray(value, dtype=float)
        self.velocity[name] = np.zeros_like(self.values[name])

    def __getitem__(self, name):
        return self.values[name]

    def __contains__(self, name):
        return name in self.values

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def items(self):
        return self.values.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.values if n.startswith(prefix)]

    def count(self, prefix: str = "") -> int:
        return sum(self.values[n].size for n in self.names(prefix))

    def merged(self, other: "ParamSet") -> "ParamSet":
        out = ParamSet()
        for src in (self, other):
            for name, v in src.items():
                out.add(name, v)
                out.velocity[name] = src.velocity[name]
        return out

    def subset(self, prefix: str) -> "ParamSet":
        out = ParamSet()
        for name in self.names(prefix):
            out.values[name] = self.values[name]
            out.velocity[name] = self.velocity[name]
        return out

    def copy(self) -> "ParamSet":
        out = ParamSet()
        for name, v in self.items():
            out.values[name] = v.copy()
            out.velocity[name] = self.velocity[name].copy()
        return out

    def as_vars(self, trainable=True, dtype=None) -> dict[str, Var]:
        """Wrap values as leaf variables. ``trainable`` may be a bool or a name predicate."""
        out = {}
        for name, v in self.items():
            req = trainable(name) if callable(trainable) else trainable
            out[name] = Var(v if dtype is None else v.astype(dtype), requires_grad=req, name=name)
        return out


def he_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def sgd_momentum_step(params: ParamSet, grads: dict[str, np.ndarray], lr: float, momentum: float = 0.9) -> ParamSet:
    """Classical momentum: ``v <- momentum*v + g``; ``w <- w - lr*v``.

    Parameters without an entry in ``grads`` are left untouched (frozen).
    """
    for name, g in grads.items():
        w = params.values[name]
        if g.shape != w.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, expected {w.shape}")
        v = params.velocity[name]
        v *= momentum
        v += g
        w -= lr * v
    return params


def save_checkpoint(params: ParamSet, path) -> None:
    """Little-endian layout: ``b"LFSAL1"`` then per tensor
    ``u32 name_len | name (utf-8) | u32 ndim | u64 dims[ndim] | float64 data``."""
    chunks = [MAGIC]
    for name, v in params.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", v.ndim))
        chunks.append(struct.pack(f"<{v.ndim}Q", *v.shape))
        chunks.append(np.ascontiguousarray(v, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> ParamSet:
    buf = Path(path).read_bytes()
    if not buf.startswith(MAGIC):
        raise FormatError(f"{path}: bad checkpoint magic")
    pos = len(MAGIC)
    params = ParamSet()
    try:
        while pos < len(buf):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if pos + 8 * size > len(buf):
                raise FormatError(f"{path}: truncated tensor {name!r}")
            data = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape)
            pos += 8 * size
            params.add(name, data.astype(float))
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint ({exc})") from exc
    return params
