"""Subject-to-subject spatial attention.

For a source map F_S and a counterpart map F_T, both (c, L) with L = w*h:

    A = softmax_rows(F_S^T @ F_T)            (L, L), row i = source position i
    att[:, i] = sum_j A[i, j] * F_S[:, j]    i.e. att = F_S @ A^T

Each output position is a convex combination of the channel's source values.
Everything here accepts an optional leading batch axis and pairs samples
index by index.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor


def flatten_spatial(F: Tensor) -> Tensor:
    """(..., c, w, h) -> (..., c, w*h); element (c, i, j) goes to column i*h + j."""
    if F.ndim < 3:
        raise DimensionError(f"expected (..., c, w, h), got {F.shape}")
    return T.reshape(F, F.shape[:-2] + (F.shape[-2] * F.shape[-1],))


def unflatten_spatial(F: Tensor, w: int, h: int) -> Tensor:
    if F.shape[-1] != w * h:
        raise DimensionError(f"cannot unflatten {F.shape[-1]} positions into {w}x{h}")
    return T.reshape(F, F.shape[:-1] + (w, h))


def attention_matrix(F_S: Tensor, F_T: Tensor) -> Tensor:
    """Row-stochastic (..., L, L) cross-domain attention from (..., c, L) maps."""
    if F_S.shape != F_T.shape or F_S.ndim < 2:
        raise DimensionError(f"attention needs matching (..., c, L) maps, got {F_S.shape} and {F_T.shape}")
    return T.softmax(T.matmul(T.transpose(F_S), F_T))


def apply_attention(F_S: Tensor, A: Tensor) -> Tensor:
    """(..., c, L) x (..., L, L) -> (..., c, L), mixing source positions by the rows of A."""
    L = F_S.shape[-1]
    if A.shape[-2:] != (L, L) or A.shape[:-2] != F_S.shape[:-2]:
        raise DimensionError(f"attention {A.shape} does not chain with features {F_S.shape}")
    return T.matmul(F_S, T.transpose(A))


def attended_concat(F_2d: Tensor, F_att: Tensor) -> Tensor:
    """[F_2d, F_att] along the channel axis (axis -3), original first."""
    if F_2d.shape != F_att.shape:
        raise DimensionError(f"concat needs equal shapes, got {F_2d.shape} and {F_att.shape}")
    return T.concat([F_2d, F_att], axis=F_2d.ndim - 3)


def spatial_attention(F_S: Tensor, F_T: Tensor) -> Tensor:
    """Full block on (n, c, w, h) maps: returns (n, 2c, w, h)."""
    w, h = F_S.shape[-2:]
    s, t = flatten_spatial(F_S), flatten_spatial(F_T)
    att = apply_attention(s, attention_matrix(s, t))
    return attended_concat(F_S, unflatten_spatial(att, w, h))


def identity_attention(F: Tensor) -> Tensor:
    """Fallback when no counterpart exists: A = I, so F_att = F."""
    return attended_concat(F, F)


def mirrored_attention(F_T: Tensor, reference: np.ndarray) -> Tensor:
    """Target-side construction at inference.

    A' = softmax(F_T^T @ F_ref) per sample, F_T_att = F_T @ A'^T; ``reference``
    is a fixed (c, w, h) source feature map shared by the whole batch.
    """
    if reference.shape != F_T.shape[1:]:
        raise DimensionError(f"reference {reference.shape} does not match features {F_T.shape[1:]}")
    ref = Tensor(np.broadcast_to(reference, F_T.shape))
    w, h = F_T.shape[-2:]
    t, r = flatten_spatial(F_T), flatten_spatial(ref)
    att = apply_attention(t, attention_matrix(t, r))
    return attended_concat(F_T, unflatten_spatial(att, w, h))
