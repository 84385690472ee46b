import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.errors import DimensionError, DomainError, GenerationError
from src.forward_model import (
    MASK_KINDS,
    SCENE_KINDS,
    MaskSet,
    VideoCube,
    augment,
    capture,
    generate_masks,
    make_scene,
    normalized_measurement,
    phi_adjoint,
    phi_apply,
    reference_frames,
    simulate,
)
from src.tensor import Tensor


@pytest.mark.parametrize("kind", MASK_KINDS)
def test_masks_are_binary_without_dead_pixels(kind):
    m = generate_masks(16, 12, 4, kind, seed=7)
    assert m.shape == (12, 16, 4)
    assert set(np.unique(m.values)) <= {0.0, 1.0}
    assert np.all(m.mask_sum > 0)


def test_masks_are_seed_deterministic():
    a = generate_masks(8, 8, 4, seed=3)
    b = generate_masks(8, 8, 4, seed=3)
    c = generate_masks(8, 8, 4, seed=4)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_bernoulli_density_is_about_half():
    m = generate_masks(64, 64, 8, seed=0)
    assert abs(m.values.mean() - 0.5) < 0.05


def test_shifted_masks_roll_one_plane():
    m = generate_masks(8, 8, 3, "shifted", seed=1)
    np.testing.assert_array_equal(m.values[..., 1], np.roll(m.values[..., 0], 1, axis=1))


def test_single_frame_masks_are_all_ones():
    # one frame with no dead pixel leaves no choice
    m = generate_masks(5, 5, 1, seed=9)
    np.testing.assert_array_equal(m.values, np.ones((5, 5, 1)))


def test_mask_errors():
    with pytest.raises(DimensionError):
        generate_masks(0, 4, 4)
    with pytest.raises(GenerationError):
        generate_masks(4, 4, 4, kind="random")


def test_capture_sums_modulated_frames():
    x = VideoCube(np.ones((2, 2, 3)))
    m = MaskSet(np.ones((2, 2, 3)))
    y = capture(x, m)
    np.testing.assert_array_equal(y.values, np.full((2, 2), 3.0))


def test_capture_noise_is_seeded():
    x = make_scene("edge", 8, 8, 2, seed=0)
    m = generate_masks(8, 8, 2, seed=0)
    a = capture(x, m, noise_sigma=0.01, seed=5)
    b = capture(x, m, noise_sigma=0.01, seed=5)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, capture(x, m).values)


def test_capture_errors():
    x = VideoCube(np.ones((2, 2, 3)))
    with pytest.raises(DomainError):
        capture(x, MaskSet(np.ones((2, 2, 3))), noise_sigma=-1.0)
    with pytest.raises(DimensionError):
        capture(x, MaskSet(np.ones((2, 2, 2))))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 4), st.integers(0, 2 ** 16))
def test_adjoint_identity(h, w, t, seed):
    rng = np.random.default_rng(seed)
    m = generate_masks(w, h, t, seed=seed)
    v = rng.normal(size=(h, w, t))
    y = rng.normal(size=(h, w))
    lhs = np.sum(phi_apply(v, m) * y)
    rhs = np.sum(v * phi_adjoint(y, m))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_noiseless_capture_is_linear(rng):
    m = generate_masks(7, 5, 3, seed=11)
    x1, x2 = rng.random((5, 7, 3)), rng.random((5, 7, 3))
    a, b = 0.7, -1.3
    combined = capture(VideoCube(a * x1 + b * x2), m).values
    separate = a * capture(VideoCube(x1), m).values + b * capture(VideoCube(x2), m).values
    np.testing.assert_allclose(combined, separate, rtol=0, atol=1e-12)


@pytest.mark.parametrize("row, col", [(0, 0), (3, 4), (5, 1)])
def test_phi_phi_adjoint_scales_each_pixel(row, col):
    m = generate_masks(6, 6, 4, seed=2)
    delta = np.zeros((6, 6))
    delta[row, col] = 1.0
    out = phi_apply(phi_adjoint(delta, m), m)
    expected = np.zeros((6, 6))
    expected[row, col] = m.mask_sum[row, col]
    np.testing.assert_array_equal(out, expected)


def test_phi_accepts_tensors():
    m = generate_masks(4, 4, 2, seed=0)
    v = Tensor(np.ones((4, 4, 2)), requires_grad=True)
    out = phi_apply(v, m)
    assert isinstance(out, Tensor)
    np.testing.assert_array_equal(out.data, m.mask_sum)


def test_normalized_measurement_of_constant_cube():
    m = generate_masks(6, 6, 4, seed=2)
    y = capture(VideoCube(np.full((6, 6, 4), 0.4)), m)
    np.testing.assert_allclose(normalized_measurement(y, m), np.full((6, 6), 0.4), atol=1e-15)


def test_normalized_measurement_reports_zero_pixel():
    masks = np.ones((3, 3, 2))
    masks[1, 2] = 0.0
    with pytest.raises(DomainError, match=r"row=1, col=2"):
        normalized_measurement(np.ones((3, 3)), masks)


def test_reference_frames_gate_by_mask():
    m = generate_masks(4, 4, 3, seed=1)
    nm = np.full((4, 4), 0.5)
    rf = reference_frames(nm, m)
    np.testing.assert_array_equal(rf, 0.5 * m.values)


@pytest.mark.parametrize("kind", SCENE_KINDS)
def test_scenes_lie_in_unit_range(kind):
    cube = make_scene(kind, 12, 10, 4, seed=1)
    assert cube.values.shape == (10, 12, 4)
    assert cube.values.min() >= 0.0 and cube.values.max() <= 1.0


def test_moving_square_moves():
    cube = make_scene("moving-square", 16, 16, 3, seed=0)
    assert not np.array_equal(cube.values[..., 0], cube.values[..., 1])


def test_unknown_scene():
    with pytest.raises(DomainError):
        make_scene("plasma", 4, 4, 2)


def test_video_cube_validation():
    with pytest.raises(DimensionError):
        VideoCube(np.ones((4, 4)))
    with pytest.raises(DomainError):
        VideoCube(np.full((2, 2, 2), np.nan))


def test_augment_preserves_values_and_crops():
    cube = make_scene("noise-texture", 8, 8, 2, seed=0)
    out = augment(cube, np.random.default_rng(0), crop=(4, 4))
    assert out.values.shape == (4, 4, 2)
    full = augment(cube, np.random.default_rng(1))
    np.testing.assert_allclose(np.sort(full.values, axis=None), np.sort(cube.values, axis=None))


def test_simulate_builds_consistent_sample():
    cube = make_scene("edge", 8, 8, 4, seed=0)
    sample = simulate(cube, mask_seed=11, noise_sigma=0.0, scene="edge")
    assert sample.masks.seed == 11
    assert sample.measurement.mask_seed == 11
    np.testing.assert_allclose(sample.measurement.values, phi_apply(cube.values, sample.masks))
