"""ConvLSTM cells with peephole terms, stacked into the subject-shared encoder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .imaging import ConfigError, DataError
from .tensor import DimensionError, Tensor

GATES = ("i", "f", "o", "g")


@dataclass
class ConvLSTMCellParams:
    """Gate kernels stored stacked in [i, f, o, g] order.

    w_x: (4H, c_in, k, k) input-to-state kernels
    w_h: (4H, H, k, k) state-to-state kernels
    b: (4H,) gate biases
    peep: (3, H, w, h) Hadamard weights on c_{t-1} for the i, f, o gates
    """

    w_x: Tensor
    w_h: Tensor
    b: Tensor
    peep: Tensor

    def __post_init__(self):
        four_h, _, k, k2 = self.w_x.shape
        hid = four_h // 4
        if four_h % 4 or k != k2 or k % 2 == 0:
            raise ConfigError(f"bad input kernel shape {self.w_x.shape}")
        if self.w_h.shape != (four_h, hid, k, k):
            raise ConfigError(f"state kernels {self.w_h.shape} do not match {self.w_x.shape}")
        if self.b.shape != (four_h,) or self.peep.shape[:2] != (3, hid):
            raise ConfigError("bias or peephole shape does not match hidden size")

    @property
    def hidden(self) -> int:
        return self.w_x.shape[0] // 4

    @property
    def in_channels(self) -> int:
        return self.w_x.shape[1]

    @property
    def spatial(self) -> tuple[int, int]:
        return self.peep.shape[2:]

    def tensors(self) -> list[Tensor]:
        return [self.w_x, self.w_h, self.b, self.peep]

    def gate(self, name: str) -> dict[str, np.ndarray]:
        """Per-gate weight views, e.g. ``gate('f')['x']`` is W_fx."""
        q = GATES.index(name)
        hid = self.hidden
        sl = slice(q * hid, (q + 1) * hid)
        out = {"x": self.w_x.data[sl], "h": self.w_h.data[sl], "b": self.b.data[sl]}
        if name != "g":
            out["c"] = self.peep.data[q]
        return out

    @classmethod
    def init(cls, in_channels: int, hidden: int, spatial: tuple[int, int], k: int = 3,
             rng: np.random.Generator | None = None, forget_bias: float = 1.0) -> "ConvLSTMCellParams":
        """Glorot-uniform kernels, zero peepholes, zero biases except the forget gate."""
        rng = rng or np.random.default_rng(0)

        def glorot(cout, cin):
            fan_in, fan_out = cin * k * k, cout * k * k
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, size=(4 * cout, cin, k, k))

        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = forget_bias
        return cls(Tensor(glorot(hidden, in_channels), requires_grad=True),
                   Tensor(glorot(hidden, hidden), requires_grad=True),
                   Tensor(b, requires_grad=True),
                   Tensor(np.zeros((3, hidden) + tuple(spatial)), requires_grad=True))


@dataclass
class ConvLSTMState:
    h: Tensor  # (n, H, w, h)
    c: Tensor  # (n, H, w, h)

    @classmethod
    def zeros(cls, n: int, hidden: int, spatial: tuple[int, int]) -> "ConvLSTMState":
        z = np.zeros((n, hidden) + tuple(spatial))
        return cls(Tensor(z), Tensor(z))


def cell_step(x_t: Tensor, prev: ConvLSTMState, params: ConvLSTMCellParams) -> ConvLSTMState:
    """One ConvLSTM update with same-padded convolutions and peepholes on c_{t-1}."""
    if x_t.ndim != 4 or x_t.shape[1] != params.in_channels:
        raise DimensionError(f"input {x_t.shape} does not match {params.in_channels} channels")
    if prev.c.shape[1:] != (params.hidden,) + tuple(params.spatial) or x_t.shape[2:] != params.spatial:
        raise DimensionError(f"state {prev.c.shape} / input {x_t.shape} vs "
                             f"hidden {params.hidden} on {params.spatial}")
    pre = T.add(T.conv2d(x_t, params.w_x, params.b), T.conv2d(prev.h, params.w_h))
    both = T.lstm_cell(pre, prev.c, params.peep)
    return ConvLSTMState(h=both[0], c=both[1])


def layer_forward(seq: Tensor, params: ConvLSTMCellParams,
                  init: ConvLSTMState | None = None) -> Tensor:
    """Run one layer over ``seq`` (n, t, c_in, w, h) from a zero state; returns all h_t."""
    if seq.ndim != 5:
        raise DimensionError(f"expected (n, t, c, w, h), got {seq.shape}")
    n, t = seq.shape[:2]
    if t < 1:
        raise DataError("sequence must contain at least one frame")
    state = init or ConvLSTMState.zeros(n, params.hidden, params.spatial)
    hs = []
    for step in range(t):
        state = cell_step(seq[:, step], state, params)
        hs.append(state.h)
    return T.stack(hs, axis=1)


def stack_forward(seq: Tensor, layers: Sequence[ConvLSTMCellParams]) -> Tensor:
    """Feed each layer the previous layer's full hidden sequence."""
    if not layers:
        raise ConfigError("need at least one ConvLSTM layer")
    for a, b in zip(layers, layers[1:]):
        if b.in_channels != a.hidden:
            raise ConfigError(f"layer expects {b.in_channels} channels but previous emits {a.hidden}")
    out = seq
    for p in layers:
        out = layer_forward(out, p)
    return out


def set_frozen(layers: Sequence[ConvLSTMCellParams], frozen: bool) -> None:
    for p in layers:
        for t in p.tensors():
            t.requires_grad = not frozen
