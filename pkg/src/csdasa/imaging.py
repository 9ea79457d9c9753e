"""Multi-frame EEG images from electrode time series.

Pipeline per trial: split into consecutive windows, take band power per
electrode and band, project electrodes onto the plane with an azimuthal
equidistant map about the vertex, and interpolate each band onto a square
grid. The result for one trial is a ``(t, bands, w, h)`` array.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import periodogram
from scipy.spatial import Delaunay, QhullError, cKDTree

DEFAULT_BANDS: tuple[tuple[float, float], ...] = ((4.0, 7.0), (8.0, 13.0), (13.0, 30.0))
BAND_NAMES = ("theta", "alpha", "beta")


class ConfigError(ValueError):
    """Invalid configuration (bands, montage geometry)."""


class DataError(ValueError):
    """Input data violates a structural requirement."""


# ---------------------------------------------------------------- data model


@dataclass
class ElectrodeMontage:
    names: list[str]
    positions: np.ndarray  # (n, 3), unit norm

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3 or len(pos) != len(self.names):
            raise ConfigError("positions must be (n_electrodes, 3) matching names")
        if len(set(self.names)) != len(self.names):
            raise ConfigError("electrode names must be unique")
        norms = np.linalg.norm(pos, axis=1)
        if np.any(norms == 0):
            raise ConfigError("electrode at the origin has no direction")
        self.positions = pos / norms[:, None]

    @property
    def count(self) -> int:
        return len(self.names)

    @classmethod
    def load(cls, path: str | Path) -> "ElectrodeMontage":
        """Read ``name x y z`` lines; blank lines and ``#`` comments are skipped."""
        names, pos = [], []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 'name x y z'")
            names.append(parts[0])
            pos.append([float(v) for v in parts[1:]])
        return cls(names, np.array(pos))

    def save(self, path: str | Path) -> None:
        lines = [f"{n} {x:.17g} {y:.17g} {z:.17g}" for n, (x, y, z) in zip(self.names, self.positions)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def fibonacci(cls, count: int = 64) -> "ElectrodeMontage":
        """Evenly spread electrodes over the upper part of the head sphere."""
        k = np.arange(count) + 0.5
        z = 1.0 - k / count * 1.1  # down to ~10 degrees below the equator
        r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
        phi = np.pi * (3.0 - np.sqrt(5.0)) * k
        pos = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
        return cls([f"E{i + 1}" for i in range(count)], pos)


@dataclass
class MultiFrameEEGImage:
    frames: np.ndarray  # (t, c, w, h)
    label: int | None = None

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[0] < 1:
            raise DataError(f"frames must be (t>=1, c, w, h), got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise DataError("frames contain non-finite values")


@dataclass
class SubjectDomain:
    """All samples of one subject.

    Labels beyond ``n_labeled`` are stored as -1 and never consulted by
    training code.
    """

    subject_id: str
    images: np.ndarray  # (N, t, c, w, h)
    labels: np.ndarray  # (N,), -1 where unlabeled
    n_labeled: int | None = None
    stats: "ChannelStats | None" = field(default=None, repr=False)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 5 or len(self.images) != len(self.labels):
            raise DataError(f"subject {self.subject_id}: images {self.images.shape} "
                            f"vs labels {self.labels.shape}")
        if self.n_labeled is None:
            self.n_labeled = len(self.labels)
        if not 0 <= self.n_labeled <= len(self.labels):
            raise DataError(f"subject {self.subject_id}: n_labeled out of range")
        if np.any(self.labels[:self.n_labeled] < 0) or np.any(self.labels[self.n_labeled:] != -1):
            raise DataError(f"subject {self.subject_id}: labels must be present exactly "
                            f"for the first {self.n_labeled} samples")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def n_unlabeled(self) -> int:
        return len(self) - self.n_labeled

    @property
    def samples(self) -> list[MultiFrameEEGImage]:
        return [MultiFrameEEGImage(x, int(y) if y >= 0 else None)
                for x, y in zip(self.images, self.labels)]

    def subset(self, idx) -> "SubjectDomain":
        idx = np.asarray(idx, dtype=np.int64)
        labels = self.labels[idx]
        n_lab = int(np.sum(labels >= 0))
        order = np.concatenate([np.flatnonzero(labels >= 0), np.flatnonzero(labels < 0)])
        return SubjectDomain(self.subject_id, self.images[idx[order]], labels[order], n_lab, self.stats)

    def hide_labels(self, n_labeled: int = 0) -> "SubjectDomain":
        """Copy with labels withheld beyond the first ``n_labeled`` samples."""
        if n_labeled > len(self):
            raise ConfigError(f"n_labeled={n_labeled} exceeds {len(self)} samples")
        labels = self.labels.copy()
        labels[n_labeled:] = -1
        return SubjectDomain(self.subject_id, self.images, labels, n_labeled, self.stats)


# ---------------------------------------------------------------- band power


def band_power(signal, band: tuple[float, float], sample_rate: float) -> np.ndarray:
    """Mean Hann-windowed periodogram value over bins in ``[lo, hi)``.

    ``signal`` is (n_electrodes, n_samples) or a single series.
    """
    lo, hi = band
    if not 0 <= lo < hi:
        raise ConfigError(f"invalid band {band}")
    if hi > sample_rate / 2:
        raise ConfigError(f"band {band} exceeds Nyquist ({sample_rate / 2} Hz)")
    raw = np.asarray(signal, dtype=np.float64)
    x = np.atleast_2d(raw)
    n = x.shape[-1]
    if lo > 0 and n < 2 * sample_rate / lo:
        raise DataError(f"window of {n} samples is shorter than 2 cycles at {lo} Hz")
    freqs, pxx = periodogram(x, fs=sample_rate, window="hann", detrend=False, axis=-1)
    sel = (freqs >= lo) & (freqs < hi)
    if not np.any(sel):
        raise ConfigError(f"no frequency bins fall in {band} at {n} samples")
    power = pxx[..., sel].mean(axis=-1)
    return power[0] if raw.ndim == 1 else power


# ---------------------------------------------------------------- projection


def project_azimuthal_equidistant(pos3d) -> np.ndarray:
    """Map unit vectors to the plane about the pole (0, 0, 1).

    Planar radius equals the angular distance from the pole; azimuth is kept.
    Accepts one vector or an (n, 3) array.
    """
    p = np.asarray(pos3d, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    norms = np.linalg.norm(p, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ConfigError("positions must be unit vectors")
    x, y, z = p[:, 0], p[:, 1], np.clip(p[:, 2], -1.0, 1.0)
    rho = np.hypot(x, y)
    if np.any((rho == 0) & (z < 0)):
        raise ConfigError("the antipode of the pole has no defined azimuth")
    theta = np.arctan2(rho, z)  # angle from the pole, accurate near both ends
    scale = np.divide(theta, rho, out=np.zeros_like(rho), where=rho > 0)
    out = np.stack([x * scale, y * scale], axis=1)
    return out[0] if single else out


# ---------------------------------------------------------------- interpolation


def grid_axes(points_xy: np.ndarray, size: int = 32, pad: float = 0.05) -> np.ndarray:
    """Node coordinates along one side of the square ``[-r, r]``, r = 1.05 * max radius."""
    r = np.max(np.hypot(points_xy[:, 0], points_xy[:, 1])) * (1.0 + pad)
    if r == 0:
        r = 1.0
    return np.linspace(-r, r, size)


def interpolation_weights(points_xy: np.ndarray, axis: np.ndarray, k: int = 4,
                          power: float = 2.0) -> np.ndarray:
    """Dense (w*h, n_points) matrix mapping point values to grid values.

    Row for node (i, j) sits at ``i * h + j`` with x = axis[i], y = axis[j].
    IDW over the k nearest points; nodes on a data point copy it; nodes outside
    the convex hull copy the nearest point.
    """
    pts = np.asarray(points_xy, dtype=np.float64)
    n = len(pts)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    nodes = np.stack([gx.ravel(), gy.ravel()], axis=1)
    kk = min(k, n)
    dist, idx = cKDTree(pts).query(nodes, k=kk)
    dist = dist.reshape(len(nodes), kk)
    idx = idx.reshape(len(nodes), kk)
    W = np.zeros((len(nodes), n))
    rows = np.arange(len(nodes))
    hit = dist[:, 0] <= 1e-12
    with np.errstate(divide="ignore"):
        inv = 1.0 / dist ** power
    inv[hit] = 0.0
    inv[hit, 0] = 1.0
    outside = np.zeros(len(nodes), dtype=bool)
    if n >= 3:
        try:
            outside = Delaunay(pts).find_simplex(nodes) < 0
        except QhullError:
            outside = np.zeros(len(nodes), dtype=bool)
    inv[outside & ~hit] = 0.0
    inv[outside & ~hit, 0] = 1.0
    inv /= inv.sum(axis=1, keepdims=True)
    np.add.at(W, (np.repeat(rows, kk), idx.ravel()), inv.ravel())
    return W


def interpolate_to_grid(points, size: int = 32, axis: np.ndarray | None = None) -> np.ndarray:
    """IDW-interpolate ``(x, y, value)`` triples onto a ``size x size`` grid."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DataError("points must be a list of (x, y, value)")
    xy, vals = arr[:, :2], arr[:, 2]
    _check_duplicates(xy, vals)
    if axis is None:
        axis = grid_axes(xy, size)
    W = interpolation_weights(xy, axis)
    return (W @ vals).reshape(len(axis), len(axis))


def _check_duplicates(xy: np.ndarray, vals: np.ndarray) -> None:
    _, inverse = np.unique(xy, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    for g in np.unique(inverse):
        members = vals[inverse == g]
        if len(members) > 1 and np.ptp(members) != 0:
            raise DataError(f"duplicate electrode position {xy[inverse == g][0]} with differing values")


# ---------------------------------------------------------------- framing


@dataclass
class ImageBuilder:
    """Precomputed projection and interpolation for one montage."""

    montage: ElectrodeMontage
    sample_rate: float = 128.0
    window_len: int = 128
    n_frames: int = 7
    bands: Sequence[tuple[float, float]] = DEFAULT_BANDS
    size: int = 32

    def __post_init__(self):
        self.xy = project_azimuthal_equidistant(self.montage.positions)
        self.axis = grid_axes(self.xy, self.size)
        self.weights = interpolation_weights(self.xy, self.axis)
        for band in self.bands:
            if band[1] > self.sample_rate / 2:
                raise ConfigError(f"band {band} exceeds Nyquist ({self.sample_rate / 2} Hz)")

    def __call__(self, trial, label: int | None = None) -> MultiFrameEEGImage:
        x = np.asarray(trial, dtype=np.float64)
        if x.shape[0] != self.montage.count:
            raise DataError(f"trial has {x.shape[0]} channels, montage has {self.montage.count}")
        need = self.n_frames * self.window_len
        if x.shape[1] < need:
            raise DataError(f"trial of {x.shape[1]} samples is shorter than "
                            f"{self.n_frames} x {self.window_len}")
        frames = np.empty((self.n_frames, len(self.bands), self.size, self.size))
        for f in range(self.n_frames):
            win = x[:, f * self.window_len:(f + 1) * self.window_len]
            for b, band in enumerate(self.bands):
                power = band_power(win, band, self.sample_rate)
                frames[f, b] = (self.weights @ power).reshape(self.size, self.size)
        return MultiFrameEEGImage(frames, label)


def build_multiframe(trial, montage: ElectrodeMontage, window_len: int, n_frames: int = 7,
                     bands: Sequence[tuple[float, float]] = DEFAULT_BANDS,
                     sample_rate: float = 128.0, size: int = 32,
                     label: int | None = None) -> MultiFrameEEGImage:
    """One trial ``(n_electrodes, n_samples)`` -> ``(n_frames, bands, size, size)`` image."""
    builder = ImageBuilder(montage, sample_rate, window_len, n_frames, tuple(bands), size)
    return builder(trial, label)


# ---------------------------------------------------------------- normalization


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray  # (c,)
    std: np.ndarray  # (c,), 0 marks a constant channel


def channel_stats(domain: SubjectDomain) -> ChannelStats:
    if len(domain) == 0:
        raise DataError(f"subject {domain.subject_id} is empty")
    axes = (0, 1, 3, 4)
    return ChannelStats(domain.images.mean(axis=axes), domain.images.std(axis=axes))


def normalize_images(domain: SubjectDomain, stats: ChannelStats | None = None) -> SubjectDomain:
    """Per-channel standardization.

    Pass the source domain's stats when normalizing a target so no target
    statistics leak in. Constant channels are only centered.
    """
    if stats is None:
        stats = channel_stats(domain)
    std = stats.std.copy()
    flat = std <= 1e-12 * np.maximum(1.0, np.abs(stats.mean))
    if np.any(flat):
        warnings.warn(f"subject {domain.subject_id}: zero-variance channel(s) "
                      f"{np.flatnonzero(flat).tolist()} are centered only", RuntimeWarning,
                      stacklevel=2)
        std[flat] = 1.0
    shape = (1, 1, -1, 1, 1)
    images = (domain.images - stats.mean.reshape(shape)) / std.reshape(shape)
    return SubjectDomain(domain.subject_id, images, domain.labels, domain.n_labeled, stats)
