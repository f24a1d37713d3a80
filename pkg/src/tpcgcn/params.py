"""Learnable parameters, the Adam optimizer, and checkpoint serialization.

Checkpoint format ("TPCK"): little-endian throughout. Magic bytes ``TPCK``,
format version u16, then one record per parameter until end of file:

    name length u16, UTF-8 name, rank u8, dims as u32 each,
    frozen flag u8, then rank-product 32-bit little-endian reals (row-major).

Values are stored float32; training math stays float64, so a load after save
reproduces the float32 rounding of the saved values.
"""

from __future__ import annotations

import struct
from typing import Iterable, Iterator

import numpy as np

from tpcgcn.autodiff import Tensor
from tpcgcn.rng import SeededRng
from tpcgcn.sparse import ShapeError

CHECKPOINT_MAGIC = b"TPCK"
CHECKPOINT_VERSION = 1


class Parameter(Tensor):
    """A named leaf tensor with a persistent gradient buffer.

    Frozen parameters still receive gradients from ``backward`` unless
    ``requires_grad`` is off, but the optimizer never updates them.
    """

    __slots__ = ("name", "frozen")

    def __init__(self, name: str, value, frozen: bool = False):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=not frozen)
        self.name = name
        self.frozen = frozen
        self.grad = np.zeros_like(self.value)

    def set_frozen(self, frozen: bool) -> None:
        self.frozen = frozen
        self.requires_grad = not frozen

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)


class ParameterStore:
    """Ordered, uniquely named collection of parameters."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, value, frozen: bool = False) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        p = Parameter(name, value, frozen=frozen)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def trainable(self) -> list[Parameter]:
        return [p for p in self if not p.frozen]

    def zero_grads(self) -> None:
        for p in self:
            p.zero_grad()

    def set_frozen(self, names: Iterable[str], frozen: bool) -> None:
        for name in names:
            self._params[name].set_frozen(frozen)

    def freeze_prefix(self, prefix: str, frozen: bool = True) -> list[str]:
        hit = [n for n in self._params if n.startswith(prefix)]
        self.set_frozen(hit, frozen)
        return hit

    def snapshot(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, value in snap.items():
            p = self._params[name]
            if p.value.shape != value.shape:
                raise ShapeError(
                    f"snapshot shape {value.shape} != parameter {name} "
                    f"shape {p.value.shape}"
                )
            p.value[...] = value


def glorot_init(store: ParameterStore, name: str, rows: int, cols: int, rng: SeededRng) -> Parameter:
    """Uniform(-a, a) with a = sqrt(6 / (rows + cols)), seeded per name."""
    a = np.sqrt(6.0 / (rows + cols))
    child = rng.spawn(name)
    value = child.uniform_in(-a, a, rows * cols).reshape(rows, cols)
    return store.add(name, value)


class AdamState:
    """First/second moments per parameter plus a shared step counter."""

    def __init__(self, store: ParameterStore):
        self.m = {p.name: np.zeros_like(p.value) for p in store}
        self.v = {p.name: np.zeros_like(p.value) for p in store}
        self.t = 0


def adam_step(
    store: ParameterStore,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update over every non-frozen parameter.

    Frozen parameters and their moments are untouched. All gradients are
    zeroed afterwards.
    """
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for p in store:
        if p.frozen:
            continue
        if p.name not in state.m or state.m[p.name].shape != p.value.shape:
            raise ShapeError(f"optimizer state does not match parameter {p.name}")
        g = p.grad
        m = state.m[p.name]
        v = state.v[p.name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    store.zero_grads()


def save_checkpoint(store: ParameterStore, path) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        for p in store:
            name = p.name.encode("utf-8")
            fh.write(struct.pack("<H", len(name)))
            fh.write(name)
            dims = p.value.shape
            fh.write(struct.pack("<B", len(dims)))
            for d in dims:
                fh.write(struct.pack("<I", d))
            fh.write(struct.pack("<B", 1 if p.frozen else 0))
            fh.write(p.value.astype("<f4").tobytes(order="C"))


def load_checkpoint(path) -> ParameterStore:
    store = ParameterStore()
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a parameter checkpoint (bad magic {magic!r})")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        while True:
            head = fh.read(2)
            if not head:
                break
            (name_len,) = struct.unpack("<H", head)
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", fh.read(1))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            (frozen,) = struct.unpack("<B", fh.read(1))
            count = int(np.prod(dims)) if rank else 1
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise ValueError(f"truncated checkpoint record for {name}")
            value = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(dims)
            store.add(name, value, frozen=bool(frozen))
    return store
