import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lfextrap.synthetic import (
    LayerSpec,
    MaskSpec,
    SyntheticSceneSpec,
    build_textures,
    generate_synthetic,
    load_scene_specs,
    make_dataset,
    save_scene_specs,
    single_plane_scene,
    two_plane_scene,
)


def test_zero_disparity_views_identical():
    lf, gt = generate_synthetic(single_plane_scene(0.0, grid=(3, 4), size=(16, 16)))
    assert np.array_equal(gt, [0.0])
    for u in range(3):
        for v in range(4):
            assert np.array_equal(lf.views[u, v], lf.views[0, 0])


def test_integer_disparity_is_exact_shift():
    lf, _ = generate_synthetic(single_plane_scene(2.0, grid=(1, 5), size=(16, 32), seed=2))
    for v in range(4):
        assert np.array_equal(lf.views[0, v + 1, :, 2:], lf.views[0, v, :, :-2])


def test_vertical_shift_follows_row_index():
    lf, _ = generate_synthetic(single_plane_scene(1.0, grid=(3, 1), size=(16, 16), seed=2))
    assert np.array_equal(lf.views[1, 0, 1:], lf.views[0, 0, :-1])


@given(st.integers(-3, 3), st.integers(0, 10_000))
def test_shifted_neighbour_matches_on_overlap(delta, seed):
    lf, _ = generate_synthetic(single_plane_scene(float(delta), grid=(1, 3), size=(8, 20), seed=seed))
    a, b = lf.views[0, 0, :, :, 0], lf.views[0, 1, :, :, 0]
    if delta >= 0:
        assert np.array_equal(b[:, delta:], a[:, : a.shape[1] - delta])
    else:
        assert np.array_equal(b[:, :delta], a[:, -delta:])


def _oracle(spec):
    """Brute-force per-pixel compositing of the generator's layer textures."""
    textures = build_textures(spec)
    rows, cols = spec.grid
    h, w = spec.size
    out = np.zeros((rows, cols, h, w, spec.channels))
    layers = sorted(range(len(spec.layers)), key=lambda i: spec.layers[i].disparity)
    for u in range(rows):
        for v in range(cols):
            for y in range(h):
                for x in range(w):
                    acc = np.zeros(spec.channels)
                    for i in layers:
                        d = spec.layers[i].disparity
                        ly = (y - (h - 1) / 2) - d * (u - (rows - 1) / 2)
                        lx = (x - (w - 1) / 2) - d * (v - (cols - 1) / 2)
                        a = float(spec.layers[i].mask.evaluate(np.array(ly), np.array(lx)))
                        col = np.array([float(t(np.array(ly), np.array(lx))) for t in textures[i]])
                        acc = a * col + (1 - a) * acc
                    out[u, v, y, x] = acc
    return out


def test_two_layer_occlusion_matches_compositing_oracle():
    mask = MaskSpec(shape="rect", size=(6.0, 8.0), softness=0.0)
    spec = two_plane_scene(-1.0, 2.0, grid=(2, 3), size=(10, 14), seed=7, front_mask=mask)
    lf, gt = generate_synthetic(spec)
    assert np.array_equal(gt, [-1.0, 2.0])
    assert np.array_equal(lf.views, np.clip(_oracle(spec), 0, 1))


def test_colour_scene_and_determinism():
    spec = SyntheticSceneSpec(layers=(LayerSpec(0.5, texture="checker"),), grid=(2, 2), size=(8, 8), channels=3, seed=9)
    a, _ = generate_synthetic(spec)
    b, _ = generate_synthetic(spec)
    assert a.channels == 3
    assert np.array_equal(a.views, b.views)


def test_layer_leaving_frame_raises():
    spec = SyntheticSceneSpec(layers=(LayerSpec(3.0),), grid=(1, 9), size=(8, 10), disparity_range=(-3, 3))
    with pytest.raises(ValueError, match="leaves the frame"):
        generate_synthetic(spec)


def test_spec_invariants():
    with pytest.raises(ValueError):
        SyntheticSceneSpec(layers=(LayerSpec(4.0),), disparity_range=(-3, 3))
    with pytest.raises(ValueError):
        LayerSpec(0.0, texture="marble")
    with pytest.raises(ValueError):
        MaskSpec(shape="star")


def test_masks_stay_in_unit_interval():
    m = MaskSpec(shape="disk", radius=3.0, softness=2.0)
    vals = m.evaluate(*np.meshgrid(np.linspace(-6, 6, 25), np.linspace(-6, 6, 25)))
    assert vals.min() >= 0.0 and vals.max() <= 1.0


def test_spec_file_round_trip(tmp_path):
    specs = [single_plane_scene(1.3, grid=(2, 2), size=(8, 8)), two_plane_scene(-1.0, 2.0, grid=(2, 2), size=(8, 8))]
    path = tmp_path / "scenes.yaml"
    save_scene_specs(specs, path)
    assert load_scene_specs(path) == specs


def test_make_dataset_is_seeded():
    a = make_dataset(3, (1, 6), (8, 16), seed=4)
    b = make_dataset(3, (1, 6), (8, 16), seed=4)
    assert [lf.name for lf in a] == ["scene000", "scene001", "scene002"]
    assert all(np.array_equal(x.views, y.views) for x, y in zip(a, b))
