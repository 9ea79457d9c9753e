import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csdasa.imaging import (
    ConfigError,
    DataError,
    ElectrodeMontage,
    ImageBuilder,
    SubjectDomain,
    band_power,
    build_multiframe,
    channel_stats,
    interpolate_to_grid,
    normalize_images,
    project_azimuthal_equidistant,
)

FS = 128.0


def sine(freq, amp=1.0, n=256, fs=FS, phase=0.0):
    t = np.arange(n) / fs
    return amp * np.sin(2 * np.pi * freq * t + phase)


# ---------------------------------------------------------------- band power


def test_alpha_sinusoid_dominates_alpha_band():
    x = sine(10.0)
    theta = band_power(x, (4, 7), FS)
    alpha = band_power(x, (8, 13), FS)
    beta = band_power(x, (13, 30), FS)
    assert alpha > 10 * theta
    assert alpha > 10 * beta


def test_zero_signal_has_zero_power():
    for band in [(4, 7), (8, 13), (13, 30)]:
        assert band_power(np.zeros(256), band, FS) == 0.0


def test_power_is_quadratic_in_amplitude():
    p1 = band_power(sine(10.0, 1.0), (8, 13), FS)
    p2 = band_power(sine(10.0, 2.0), (8, 13), FS)
    assert abs(p2 / p1 - 4.0) <= 0.04


def test_band_beyond_nyquist_is_config_error():
    with pytest.raises(ConfigError):
        band_power(np.zeros(256), (30, 80), FS)


def test_window_shorter_than_two_cycles():
    with pytest.raises(DataError):
        band_power(np.zeros(40), (4, 7), FS)


def test_band_power_per_electrode():
    x = np.stack([sine(10.0), sine(5.0), np.zeros(256)])
    p = band_power(x, (8, 13), FS)
    assert p.shape == (3,)
    assert p[0] > 10 * p[1] and p[2] == 0


# ---------------------------------------------------------------- projection


def test_pole_maps_to_origin():
    assert project_azimuthal_equidistant([0.0, 0.0, 1.0]).tolist() == [0.0, 0.0]


def test_equator_point():
    xy = project_azimuthal_equidistant([1.0, 0.0, 0.0])
    assert abs(xy[0] - np.pi / 2) <= 1e-15 and xy[1] == 0.0


def test_radius_equals_angular_distance():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(2000, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    v = v[v[:, 2] > -0.999]
    xy = project_azimuthal_equidistant(v)
    assert np.max(np.abs(np.hypot(xy[:, 0], xy[:, 1]) - np.arccos(v[:, 2]))) <= 1e-12


def test_azimuth_preserved():
    rng = np.random.default_rng(1)
    v = rng.normal(size=(100, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    xy = project_azimuthal_equidistant(v)
    assert np.max(np.abs(np.arctan2(xy[:, 1], xy[:, 0]) - np.arctan2(v[:, 1], v[:, 0]))) <= 1e-12


def test_antipode_is_config_error():
    with pytest.raises(ConfigError):
        project_azimuthal_equidistant([0.0, 0.0, -1.0])


def test_non_unit_vector_rejected():
    with pytest.raises(ConfigError):
        project_azimuthal_equidistant([0.0, 0.0, 2.0])


# ---------------------------------------------------------------- interpolation


def test_constant_field():
    pts = [(0, 0, 2.5), (1, 0, 2.5), (0, 1, 2.5), (-1, -1, 2.5)]
    grid = interpolate_to_grid(pts, size=9)
    assert np.allclose(grid, 2.5, rtol=0, atol=1e-15)


def test_exact_at_data_points():
    axis = np.linspace(-1.0, 1.0, 5)
    pts = [(-1.0, -1.0, 3.0), (0.5, 0.0, -2.0), (0.0, 1.0, 7.0), (1.0, -1.0, 1.0)]
    grid = interpolate_to_grid(pts, axis=axis)
    # node (i, j) sits at (axis[i], axis[j])
    assert grid[0, 0] == 3.0
    assert grid[3, 2] == -2.0
    assert grid[2, 4] == 7.0


def test_midpoint_of_two_points():
    axis = np.linspace(-1.0, 1.0, 3)
    grid = interpolate_to_grid([(-1.0, 0.0, 0.0), (1.0, 0.0, 1.0)], axis=axis)
    assert abs(grid[1, 1] - 0.5) <= 1e-9


def test_outside_hull_takes_nearest_value():
    axis = np.linspace(-2.0, 2.0, 5)
    pts = [(-1.0, -1.0, 0.0), (1.0, -1.0, 1.0), (0.0, 1.0, 2.0)]
    grid = interpolate_to_grid(pts, axis=axis)
    assert grid[4, 0] == 1.0  # (2, -2) is nearest to (1, -1)
    assert grid[0, 0] == 0.0


def test_duplicate_positions_with_different_values():
    with pytest.raises(DataError):
        interpolate_to_grid([(0, 0, 1.0), (0, 0, 2.0), (1, 0, 0.0), (0, 1, 0.0)])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_interpolation_is_convex(seed):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-1, 1, size=(12, 2))
    vals = rng.normal(size=12)
    grid = interpolate_to_grid(np.column_stack([xy, vals]), size=11)
    assert grid.min() >= vals.min() - 1e-12
    assert grid.max() <= vals.max() + 1e-12


# ---------------------------------------------------------------- framing


@pytest.fixture(scope="module")
def montage():
    return ElectrodeMontage.fibonacci(64)


def test_montage_roundtrip(tmp_path, montage):
    path = tmp_path / "montage.txt"
    montage.save(path)
    loaded = ElectrodeMontage.load(path)
    assert loaded.names == montage.names
    assert np.max(np.abs(np.linalg.norm(loaded.positions, axis=1) - 1.0)) <= 1e-6
    assert np.max(np.abs(loaded.positions - montage.positions)) <= 1e-15


def test_montage_normalizes_and_rejects_duplicates(tmp_path):
    path = tmp_path / "m.txt"
    path.write_text("Cz 0 0 2\nFz 0 3 3\n")
    m = ElectrodeMontage.load(path)
    assert np.allclose(np.linalg.norm(m.positions, axis=1), 1.0, atol=1e-12)
    with pytest.raises(ConfigError):
        ElectrodeMontage(["a", "a"], np.eye(3)[:2])


def test_build_multiframe_shape(montage):
    trial = np.random.default_rng(2).normal(size=(64, 7 * 128))
    img = build_multiframe(trial, montage, window_len=128, n_frames=7, label=2)
    assert img.frames.shape == (7, 3, 32, 32)
    assert img.label == 2


def test_zero_signal_gives_zero_image(montage):
    img = build_multiframe(np.zeros((64, 3 * 128)), montage, window_len=128, n_frames=3)
    assert np.all(img.frames == 0.0)


def test_stationary_signal_gives_identical_frames(montage):
    rng = np.random.default_rng(3)
    freqs = rng.choice([5.0, 10.0, 20.0], size=64)
    amps = rng.uniform(0.5, 2.0, size=64)
    # integer number of cycles per 128-sample window makes every window identical
    trial = np.stack([sine(f, a, n=4 * 128) for f, a in zip(freqs, amps)])
    img = build_multiframe(trial, montage, window_len=128, n_frames=4)
    assert np.max(np.abs(np.diff(img.frames, axis=0))) <= 1e-6


def test_trial_too_short(montage):
    with pytest.raises(DataError):
        build_multiframe(np.zeros((64, 200)), montage, window_len=128, n_frames=2)


def test_electrode_permutation_invariance(montage):
    rng = np.random.default_rng(4)
    trial = rng.normal(size=(64, 2 * 128))
    perm = rng.permutation(64)
    shuffled = ElectrodeMontage([montage.names[i] for i in perm], montage.positions[perm])
    a = build_multiframe(trial, montage, 128, 2).frames
    b = build_multiframe(trial[perm], shuffled, 128, 2).frames
    assert np.max(np.abs(a - b)) <= 1e-12


def test_builder_is_deterministic(montage):
    trial = np.random.default_rng(5).normal(size=(64, 2 * 128))
    builder = ImageBuilder(montage, window_len=128, n_frames=2)
    assert np.array_equal(builder(trial).frames, builder(trial).frames)


# ---------------------------------------------------------------- normalization


def make_domain(images, labels=None):
    labels = np.zeros(len(images), dtype=int) if labels is None else labels
    return SubjectDomain("s", images, labels)


def test_normalized_moments():
    rng = np.random.default_rng(6)
    imgs = rng.normal(loc=[1.0, -3.0, 5.0], scale=[2.0, 0.5, 3.0], size=(10, 2, 4, 4, 3))
    imgs = imgs.transpose(0, 1, 4, 2, 3)
    out = normalize_images(make_domain(imgs)).images
    axes = (0, 1, 3, 4)
    assert np.max(np.abs(out.mean(axis=axes))) <= 1e-9
    assert np.max(np.abs(out.std(axis=axes) - 1.0)) <= 1e-9


def test_already_standardized_unchanged():
    rng = np.random.default_rng(7)
    imgs = rng.normal(size=(6, 2, 3, 4, 4))
    once = normalize_images(make_domain(imgs)).images
    twice = normalize_images(make_domain(once)).images
    assert np.max(np.abs(once - twice)) <= 1e-9


def test_constant_channel_becomes_zero():
    imgs = np.random.default_rng(8).normal(size=(4, 2, 2, 3, 3))
    imgs[:, :, 1] = 4.2
    with pytest.warns(RuntimeWarning):
        out = normalize_images(make_domain(imgs)).images
    assert np.max(np.abs(out[:, :, 1])) <= 1e-12


def test_target_uses_source_statistics():
    rng = np.random.default_rng(9)
    src = make_domain(rng.normal(size=(5, 1, 2, 3, 3)))
    tgt = make_domain(rng.normal(loc=3.0, size=(5, 1, 2, 3, 3)))
    stats = channel_stats(src)
    out = normalize_images(tgt, stats)
    expect = (tgt.images - stats.mean.reshape(1, 1, -1, 1, 1)) / stats.std.reshape(1, 1, -1, 1, 1)
    assert np.array_equal(out.images, expect)


def test_domain_label_invariants():
    imgs = np.zeros((3, 1, 1, 2, 2))
    with pytest.raises(DataError):
        SubjectDomain("s", imgs, [0, -1, 1], n_labeled=3)
    d = SubjectDomain("s", imgs, [0, 1, 2]).hide_labels(1)
    assert d.n_labeled == 1 and d.n_unlabeled == 2
    assert d.labels.tolist() == [0, -1, -1]
    with pytest.raises(ConfigError):
        SubjectDomain("s", imgs, [0, 1, 2]).hide_labels(4)
