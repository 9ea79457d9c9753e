"""The full network: shared ConvLSTM stack, per-subject Conv2D branches,
spatial attention and the class-prediction head.

Parameters live in one flat ``name -> Tensor`` map so optimizers, freezing and
checkpoints all work on names. Groups are ``shared`` (ConvLSTM), ``specific``
(source branch ``src.*`` and target branch ``tgt.*``) and ``classifier``.
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .attention import identity_attention, mirrored_attention, spatial_attention
from .convlstm import ConvLSTMCellParams, stack_forward
from .imaging import ConfigError
from .losses import KernelConfig, mmd_transfer_loss
from .tensor import DimensionError, Tensor

GROUPS = ("shared", "specific", "classifier")


@dataclass
class ModelConfig:
    frames: int = 7
    in_channels: int = 3
    grid: int = 32
    convlstm_channels: tuple[int, ...] = (8, 16, 16, 16)
    kernel_size: int = 3
    specific_channels: tuple[int, ...] = (32, 8)
    classifier_kernels: int = 4
    # input widths of the fully-connected layers; the last one feeds n_classes
    fc_units: tuple[int, ...] = (4096, 512)
    n_classes: int = 4
    attention: bool = True
    mmd_layers: str = "all"

    def __post_init__(self):
        self.convlstm_channels = tuple(int(c) for c in self.convlstm_channels)
        self.specific_channels = tuple(int(c) for c in self.specific_channels)
        self.fc_units = tuple(int(c) for c in self.fc_units)
        counts = (self.frames, self.in_channels, self.grid, self.classifier_kernels, self.n_classes,
                  *self.convlstm_channels, *self.specific_channels, *self.fc_units)
        if min(counts) <= 0 or not self.convlstm_channels or not self.specific_channels or not self.fc_units:
            raise ConfigError("all layer counts and sizes must be positive")
        if self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be odd for same padding")
        flat = self.classifier_kernels * self.grid * self.grid
        if self.fc_units[0] != flat:
            raise ConfigError(f"first fully-connected width {self.fc_units[0]} must equal "
                              f"{self.classifier_kernels} x {self.grid} x {self.grid} = {flat}")
        if self.mmd_layers not in ("all", "last"):
            raise ConfigError("mmd_layers must be 'all' or 'last'")

    @property
    def merged_channels(self) -> int:
        return self.frames * self.convlstm_channels[-1]

    @property
    def head_channels(self) -> int:
        c = self.specific_channels[-1]
        return 2 * c if self.attention else c

    @classmethod
    def micro(cls, frames: int = 2, grid: int = 8, convlstm_channels=(2,), specific_channels=(3, 2),
              classifier_kernels: int = 2, fc_hidden: int = 8, **kw) -> "ModelConfig":
        """Small configuration for tests and desk-scale benchmarks."""
        return cls(frames=frames, grid=grid, convlstm_channels=tuple(convlstm_channels),
                   specific_channels=tuple(specific_channels), classifier_kernels=classifier_kernels,
                   fc_units=(classifier_kernels * grid * grid, fc_hidden), **kw)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def _glorot(rng, shape, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


@dataclass
class CSDASA:
    config: ModelConfig
    params: dict[str, Tensor]
    reference: np.ndarray | None = None
    frozen: set[str] = field(default_factory=set)

    # ------------------------------------------------------------ construction

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "CSDASA":
        rng = np.random.default_rng(seed)
        k, g = config.kernel_size, config.grid
        p: dict[str, Tensor] = {}
        chans = (config.in_channels,) + config.convlstm_channels
        for i, (cin, hid) in enumerate(zip(chans, chans[1:])):
            cell = ConvLSTMCellParams.init(cin, hid, (g, g), k=k, rng=rng)
            for name, t in zip(("w_x", "w_h", "b", "peep"), cell.tensors()):
                p[f"shared.{i}.{name}"] = t
        chans = (config.merged_channels,) + config.specific_channels
        for j, (cin, cout) in enumerate(zip(chans, chans[1:])):
            w = _glorot(rng, (cout, cin, k, k), cin * k * k, cout * k * k)
            p[f"src.{j}.w"] = Tensor(w, requires_grad=True)
            p[f"src.{j}.b"] = Tensor(np.zeros(cout), requires_grad=True)
        # target branch starts as an exact copy of the source branch
        for j in range(len(config.specific_channels)):
            for part in ("w", "b"):
                p[f"tgt.{j}.{part}"] = Tensor(p[f"src.{j}.{part}"].data, requires_grad=True)
        hc, ck = config.head_channels, config.classifier_kernels
        p["head.conv.w"] = Tensor(_glorot(rng, (ck, hc, k, k), hc * k * k, ck * k * k), requires_grad=True)
        p["head.conv.b"] = Tensor(np.zeros(ck), requires_grad=True)
        widths = config.fc_units + (config.n_classes,)
        for q, (fin, fout) in enumerate(zip(widths, widths[1:])):
            p[f"head.fc{q}.w"] = Tensor(_glorot(rng, (fout, fin), fin, fout), requires_grad=True)
            p[f"head.fc{q}.b"] = Tensor(np.zeros(fout), requires_grad=True)
        for name, t in p.items():
            t.name = name
        return cls(config, p)

    def copy(self) -> "CSDASA":
        params = {n: Tensor(t.data, requires_grad=t.requires_grad, name=n) for n, t in self.params.items()}
        ref = None if self.reference is None else self.reference.copy()
        return CSDASA(copy.deepcopy(self.config), params, ref, set(self.frozen))

    # ------------------------------------------------------------ groups

    @staticmethod
    def group_of(name: str) -> str:
        if name.startswith("shared."):
            return "shared"
        if name.startswith(("src.", "tgt.")):
            return "specific"
        return "classifier"

    def names_in(self, group: str) -> list[str]:
        return [n for n in self.params if self.group_of(n) == group]

    def set_frozen(self, group: str, frozen: bool) -> None:
        if group not in GROUPS:
            raise ConfigError(f"unknown parameter group {group!r}")
        (self.frozen.add if frozen else self.frozen.discard)(group)
        for n in self.names_in(group):
            self.params[n].requires_grad = not frozen

    def trainable_names(self) -> list[str]:
        return [n for n in self.params if self.group_of(n) not in self.frozen]

    def update(self, new_params: dict[str, Tensor]) -> None:
        for n, t in new_params.items():
            t.requires_grad = self.group_of(n) not in self.frozen
            t.name = n
            self.params[n] = t

    def sync_target_branch(self) -> None:
        """Copy source-branch weights into the target branch."""
        for j in range(len(self.config.specific_channels)):
            for part in ("w", "b"):
                src = self.params[f"src.{j}.{part}"]
                self.params[f"tgt.{j}.{part}"] = Tensor(src.data, requires_grad=src.requires_grad,
                                                        name=f"tgt.{j}.{part}")

    # ------------------------------------------------------------ pieces

    def convlstm_layers(self) -> list[ConvLSTMCellParams]:
        return [ConvLSTMCellParams(*(self.params[f"shared.{i}.{n}"] for n in ("w_x", "w_h", "b", "peep")))
                for i in range(len(self.config.convlstm_channels))]

    def encode(self, x) -> Tensor:
        """Shared ConvLSTM stack and temporal-channel merge: (n, t, c, w, h) -> (n, t*H, w, h)."""
        x = T.as_tensor(x)
        cfg = self.config
        want = (cfg.frames, cfg.in_channels, cfg.grid, cfg.grid)
        if x.ndim != 5 or x.shape[1:] != want:
            raise DimensionError(f"expected batches shaped n x {' x '.join(map(str, want))}, got {x.shape}")
        return reshape_temporal_channels(stack_forward(x, self.convlstm_layers()))

    def branch(self, merged: Tensor, which: str) -> list[Tensor]:
        feats, h = [], merged
        for j in range(len(self.config.specific_channels)):
            h = T.relu(T.conv2d(h, self.params[f"{which}.{j}.w"], self.params[f"{which}.{j}.b"]))
            feats.append(h)
        return feats

    def head(self, F_o: Tensor) -> Tensor:
        p = self.params
        h = T.relu(T.conv2d(F_o, p["head.conv.w"], p["head.conv.b"]))
        h = T.reshape(h, (h.shape[0], -1))
        n_fc = len(self.config.fc_units)
        for q in range(n_fc):
            h = T.linear(h, p[f"head.fc{q}.w"], p[f"head.fc{q}.b"])
            if q < n_fc - 1:
                h = T.relu(h)
        return h

    def mmd_pairs(self, layer_features: Sequence[tuple[Tensor, Tensor]]):
        return list(layer_features) if self.config.mmd_layers == "all" else [layer_features[-1]]

    def observe_reference(self, top_source: Tensor, momentum: float = 0.9) -> None:
        batch_mean = top_source.data.mean(axis=0)
        if self.reference is None:
            self.reference = batch_mean.copy()
        else:
            self.reference = momentum * self.reference + (1 - momentum) * batch_mean

    # ------------------------------------------------------------ census

    def parameter_census(self) -> dict[str, int]:
        counts = {g: 0 for g in GROUPS}
        for n, t in self.params.items():
            counts[self.group_of(n)] += t.size
        counts["total"] = sum(counts[g] for g in GROUPS)
        counts["trainable"] = sum(self.params[n].size for n in self.trainable_names())
        return counts


@dataclass
class ForwardArtifacts:
    logits: Tensor
    layer_features: list[tuple[Tensor, Tensor]]
    attended: Tensor
    top_source: Tensor


def reshape_temporal_channels(F) -> Tensor:
    """(n, t, c, w, h) -> (n, t*c, w, h); merged channel index is t_idx * c + c_idx."""
    F = T.as_tensor(F)
    if F.ndim != 5:
        raise DimensionError(f"expected (n, t, c, w, h), got {F.shape}")
    n, t, c, w, h = F.shape
    return T.reshape(F, (n, t * c, w, h))


def forward_pair_merged(model: CSDASA, m_S: Tensor, m_T: Tensor) -> ForwardArtifacts:
    """Everything after the shared encoder, from merged (n, t*H, w, h) features."""
    fs = model.branch(m_S, "src")
    ft = model.branch(m_T, "tgt")
    top_s, top_t = fs[-1], ft[-1]
    if model.config.attention:
        if top_s.shape[0] != top_t.shape[0]:
            raise DimensionError("attention pairs samples index-wise; batch sizes must match")
        F_o = spatial_attention(top_s, top_t)
    else:
        F_o = top_s
    return ForwardArtifacts(model.head(F_o), list(zip(fs, ft)), F_o, top_s)


def forward_pair(model: CSDASA, x_S, x_T) -> ForwardArtifacts:
    """Shared stack on both batches (same weights), branches, attention on the source side, head."""
    x_S, x_T = T.as_tensor(x_S), T.as_tensor(x_T)
    if x_S.shape[1:] != x_T.shape[1:]:
        raise DimensionError(f"source {x_S.shape} and target {x_T.shape} batches differ in sample shape")
    return forward_pair_merged(model, model.encode(x_S), model.encode(x_T))


def forward_source_merged(model: CSDASA, m_S: Tensor) -> ForwardArtifacts:
    """Source-only pass for pretraining; sample i attends against sample i+1 of the same batch."""
    fs = model.branch(m_S, "src")
    top = fs[-1]
    if model.config.attention:
        n = top.shape[0]
        partner = top if n == 1 else T.concat([top[1:], top[:1]], axis=0)
        F_o = spatial_attention(top, partner)
    else:
        F_o = top
    return ForwardArtifacts(model.head(F_o), [], F_o, top)


def forward_eval_merged(model: CSDASA, merged: Tensor, branch: str = "tgt",
                        reference: np.ndarray | None = None) -> Tensor:
    top = model.branch(merged, branch)[-1]
    if not model.config.attention:
        return model.head(top)
    ref = model.reference if reference is None else reference
    if ref is None:
        warnings.warn("no source reference features; using identity attention", RuntimeWarning,
                      stacklevel=2)
        return model.head(identity_attention(top))
    return model.head(mirrored_attention(top, ref))


def forward_eval(model: CSDASA, x, branch: str = "tgt", reference: np.ndarray | None = None) -> Tensor:
    """Inference logits; attention mirrors against the stored source reference map."""
    return forward_eval_merged(model, model.encode(x), branch, reference)


def pair_loss(model: CSDASA, art: ForwardArtifacts, labels, gamma: float,
              kernel: KernelConfig) -> tuple[Tensor, Tensor, Tensor]:
    """(total, ce, l_mmd) for one paired batch."""
    from .losses import cross_entropy, total_loss

    ce = cross_entropy(art.logits, labels)
    l_mmd = mmd_transfer_loss(model.mmd_pairs(art.layer_features), kernel)
    return total_loss(ce, l_mmd, gamma), ce, l_mmd
