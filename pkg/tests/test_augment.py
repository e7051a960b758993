import numpy as np
import pytest

from coreselect.augment import AugmentConfig, hflip, make_views, render_view, resize_bilinear
from coreselect.errors import ConfigurationError
from coreselect.rng import keyed_stream


def sample_image(seed=0, channels=3, size=8):
    return keyed_stream(seed, 0xA0).uniform(size=(channels, size, size))


IDENTITY = AugmentConfig(crop_scale_range=(1.0, 1.0), flip_prob=0.0,
                         jitter_strength=0.0, grayscale_prob=0.0, output_size=(8, 8))


def test_identity_config_returns_input_exactly():
    image = sample_image()
    pair = make_views(image, 0, IDENTITY, seed=1, epoch=0)
    assert np.array_equal(pair.view_a, image)
    assert np.array_equal(pair.view_b, image)


def test_identity_config_with_resize_matches_direct_resize():
    image = sample_image(size=8)
    cfg = AugmentConfig(crop_scale_range=(1.0, 1.0), flip_prob=0.0,
                        jitter_strength=0.0, grayscale_prob=0.0, output_size=(6, 6))
    pair = make_views(image, 0, cfg, seed=1, epoch=0)
    expected = resize_bilinear(image, 6, 6)
    assert np.array_equal(pair.view_a, expected)
    assert np.array_equal(pair.view_b, expected)


def test_same_key_twice_is_bit_identical():
    image = sample_image(seed=3)
    cfg = AugmentConfig(output_size=(8, 8))
    first = make_views(image, 5, cfg, seed=9, epoch=2)
    second = make_views(image, 5, cfg, seed=9, epoch=2)
    assert np.array_equal(first.view_a, second.view_a)
    assert np.array_equal(first.view_b, second.view_b)


def test_views_use_distinct_substreams():
    image = sample_image(seed=4)
    cfg = AugmentConfig(output_size=(8, 8))
    pair = make_views(image, 5, cfg, seed=9, epoch=2)
    assert not np.array_equal(pair.view_a, pair.view_b)


def test_changing_any_key_component_changes_draws():
    image = sample_image(seed=4)
    cfg = AugmentConfig(output_size=(8, 8))
    base = render_view(image, cfg, (1, 2, 3, 0))
    assert not np.array_equal(base, render_view(image, cfg, (2, 2, 3, 0)))
    assert not np.array_equal(base, render_view(image, cfg, (1, 3, 3, 0)))
    assert not np.array_equal(base, render_view(image, cfg, (1, 2, 4, 0)))
    assert not np.array_equal(base, render_view(image, cfg, (1, 2, 3, 1)))


def test_forced_flip_reverses_columns_and_double_flip_restores():
    image = np.zeros((1, 2, 2))
    image[0] = [[0.1, 0.9], [0.3, 0.7]]
    cfg = AugmentConfig(crop_scale_range=(1.0, 1.0), flip_prob=1.0,
                        jitter_strength=0.0, grayscale_prob=0.0, output_size=(2, 2))
    unflipped_cfg = AugmentConfig(crop_scale_range=(1.0, 1.0), flip_prob=0.0,
                                  jitter_strength=0.0, grayscale_prob=0.0,
                                  output_size=(2, 2))
    key = (7, 0, 0, 0)
    flipped = render_view(image, cfg, key)
    plain = render_view(image, unflipped_cfg, key)
    assert np.array_equal(flipped, plain[:, :, ::-1])
    assert np.array_equal(hflip(flipped), plain)


def test_jitter_output_clamped_to_unit_range():
    image = sample_image(seed=6)
    cfg = AugmentConfig(crop_scale_range=(1.0, 1.0), flip_prob=0.0,
                        jitter_strength=0.9, grayscale_prob=0.0, output_size=(8, 8))
    for key in range(20):
        view = render_view(image, cfg, (key, 0, 0, 0))
        assert view.min() >= 0.0 and view.max() <= 1.0


def test_grayscale_on_single_channel_is_identity():
    image = sample_image(seed=7, channels=1)
    cfg = AugmentConfig(crop_scale_range=(1.0, 1.0), flip_prob=0.0,
                        jitter_strength=0.0, grayscale_prob=1.0, output_size=(8, 8))
    view = render_view(image, cfg, (1, 0, 0, 0))
    assert np.array_equal(view, image)


def test_forced_grayscale_uses_luma_weights():
    image = sample_image(seed=8, channels=3)
    cfg = AugmentConfig(crop_scale_range=(1.0, 1.0), flip_prob=0.0,
                        jitter_strength=0.0, grayscale_prob=1.0, output_size=(8, 8))
    view = render_view(image, cfg, (1, 0, 0, 0))
    luma = 0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2]
    for channel in range(3):
        assert np.allclose(view[channel], luma, atol=1e-12)


def test_tiny_crop_scale_never_degenerates():
    image = sample_image(seed=9, size=2)
    cfg = AugmentConfig(crop_scale_range=(0.01, 0.02), flip_prob=0.0,
                        jitter_strength=0.0, grayscale_prob=0.0, output_size=(2, 2))
    for key in range(30):
        view = render_view(image, cfg, (key, 0, 0, 0))
        assert view.shape == (3, 2, 2)
        assert np.all(np.isfinite(view))


def test_crop_content_comes_from_the_image():
    image = sample_image(seed=10, size=16)
    cfg = AugmentConfig(crop_scale_range=(0.3, 0.6), flip_prob=0.0,
                        jitter_strength=0.0, grayscale_prob=0.0, output_size=(4, 4))
    view = render_view(image, cfg, (2, 1, 0, 0))
    assert view.min() >= image.min() - 1e-12
    assert view.max() <= image.max() + 1e-12


def test_resize_same_shape_is_exact_copy():
    image = sample_image(seed=11, size=5)
    out = resize_bilinear(image, 5, 5)
    assert np.array_equal(out, image)


def test_resize_constant_image_stays_constant():
    image = np.full((2, 7, 3), 0.25)
    out = resize_bilinear(image, 4, 9)
    assert np.allclose(out, 0.25)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        AugmentConfig(crop_scale_range=(0.0, 1.0))
    with pytest.raises(ConfigurationError):
        AugmentConfig(crop_scale_range=(0.8, 0.5))
    with pytest.raises(ConfigurationError):
        AugmentConfig(flip_prob=1.5)
    with pytest.raises(ConfigurationError):
        AugmentConfig(jitter_strength=-0.1)
    with pytest.raises(ConfigurationError):
        AugmentConfig(output_size=(0, 4))
