"""Gaussian-kernel MMD, the layer-summed transfer loss and the joint objective."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import kernels
from . import tensor as T
from .imaging import ConfigError, DataError
from .tensor import DimensionError, Tensor

Bandwidth = Union[float, str]


@dataclass(frozen=True)
class KernelConfig:
    """``bandwidth`` is a positive sigma or ``"median"``.

    With ``"median"`` sigma is the median pairwise Euclidean distance over the
    pooled source+target batch, held constant for differentiation.
    """

    bandwidth: Bandwidth = "median"
    unbiased: bool = False

    def __post_init__(self):
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "median":
                raise ConfigError(f"unknown bandwidth policy {self.bandwidth!r}")
        elif not self.bandwidth > 0:
            raise ConfigError(f"bandwidth must be positive, got {self.bandwidth}")


def gaussian_kernel(x, y, sigma: float) -> float:
    if not sigma > 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"kernel arguments differ in shape: {x.shape} vs {y.shape}")
    d = x - y
    return float(np.exp(-np.dot(d.ravel(), d.ravel()) / (2.0 * sigma * sigma)))


def median_bandwidth(S: np.ndarray, T_: np.ndarray) -> float:
    S, T_ = np.ascontiguousarray(S), np.ascontiguousarray(T_)
    return _median_from_blocks(kernels.pairwise_sqdist(S, S), kernels.pairwise_sqdist(T_, T_),
                               kernels.pairwise_sqdist(S, T_))


def _median_from_blocks(d_ss: np.ndarray, d_tt: np.ndarray, d_st: np.ndarray) -> float:
    """Median distance over the distinct pairs of the pooled sample, given its three distance blocks."""
    iu_s, iu_t = np.triu_indices(len(d_ss), k=1), np.triu_indices(len(d_tt), k=1)
    d2 = np.concatenate([d_ss[iu_s], d_tt[iu_t], d_st.ravel()])
    if d2.size == 0:
        return 1.0
    med = float(np.median(np.sqrt(d2)))
    return med if med > 0 else 1.0


def _flat(x: Tensor) -> Tensor:
    return x if x.ndim == 2 else T.reshape(x, (x.shape[0], -1))


def mmd_squared(S, T_, kernel: KernelConfig = KernelConfig()) -> Tensor:
    """Squared MMD between two samples of vectors (rows; higher-rank inputs are flattened).

    Biased V-statistic by default: mean k(s,s') + mean k(t,t') - 2 mean k(s,t).
    """
    S, T_ = _flat(T.as_tensor(S)), _flat(T.as_tensor(T_))
    n, m = S.shape[0], T_.shape[0]
    if n < 1 or m < 1:
        raise DataError("MMD needs at least one sample per domain")
    if S.shape[1] != T_.shape[1]:
        raise DimensionError(f"feature dims differ: {S.shape[1]} vs {T_.shape[1]}")
    Dss, Dtt, Dst = T.pairwise_sqdist(S, S), T.pairwise_sqdist(T_, T_), T.pairwise_sqdist(S, T_)
    if kernel.bandwidth == "median":
        sigma = _median_from_blocks(Dss.data, Dtt.data, Dst.data)
    else:
        sigma = float(kernel.bandwidth)
    gamma = -1.0 / (2.0 * sigma * sigma)
    Kss, Ktt, Kst = (T.exp(T.mul(D, gamma)) for D in (Dss, Dtt, Dst))
    if kernel.unbiased:
        if n < 2 or m < 2:
            raise DataError("the unbiased estimator needs two samples per domain")
        ss = T.mul(T.sub(T.sum(Kss), float(n)), 1.0 / (n * (n - 1)))
        tt = T.mul(T.sub(T.sum(Ktt), float(m)), 1.0 / (m * (m - 1)))
    else:
        ss, tt = T.mean(Kss, exact=True), T.mean(Ktt, exact=True)
    # order-free sums make the estimate bit-symmetric in (S, T)
    return T.sub(T.add(ss, tt), T.mul(T.mean(Kst, exact=True), 2.0))


def mmd_transfer_loss(pairs: Sequence[tuple[Tensor, Tensor]],
                      kernel: KernelConfig = KernelConfig()) -> Tensor:
    """Sum of squared MMD over paired (source, target) layer activations."""
    if not pairs:
        raise ConfigError("need at least one layer pair")
    total = None
    for s, t in pairs:
        if s.shape[1:] != t.shape[1:]:
            raise DimensionError(f"layer pair shapes differ: {s.shape} vs {t.shape}")
        term = mmd_squared(s, t, kernel)
        total = term if total is None else T.add(total, term)
    return total


def cross_entropy(logits: Tensor, labels) -> Tensor:
    try:
        return T.cross_entropy(logits, labels)
    except DimensionError:
        raise
    except ValueError as exc:
        raise DataError(str(exc)) from None


def total_loss(ce, l_mmd, gamma: float = 1.0):
    """ce + gamma * l_mmd; works on floats or tensors."""
    if gamma < 0:
        raise ConfigError(f"gamma must be non-negative, got {gamma}")
    if isinstance(ce, Tensor) or isinstance(l_mmd, Tensor):
        if gamma == 0:
            return T.as_tensor(ce)
        return T.add(ce, T.mul(l_mmd, float(gamma)))
    return ce + gamma * l_mmd
