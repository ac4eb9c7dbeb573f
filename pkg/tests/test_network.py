"""Extrapolation and fusion networks: shapes, parameter accounting, fusion invariants."""

import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lfextrap.autodiff import Tensor, no_grad, save_checkpoint, shift_x
from lfextrap.autodiff.checkpoint import table_size
from lfextrap.network import (
    SenetParams,
    count_parameters,
    extrapolate_candidates,
    fuse_candidates,
    init_params,
    layer_table,
)
from lfextrap.shear import ShearConfig, ramp, shear_many
from lfextrap.training import ABLATIONS, PipelineOptions, pipeline_forward

REFERENCE_PARAMETERS = 290_848

# Dimensions column of the published layer table, one row per layer group.
EXTRAP_DIMS = [
    ("conv1", "H,W,V,8"),
    ("conv_d1", "H/2,W/2,V/2,16"),
    ("conv2", "H/2,W/2,V/2,16"),
    ("conv_d2", "H/4,W/4,V/4,32"),
    ("conv3", "H/4,W/4,V/4,32"),
    ("deconv1", "H/2,W/2,V/2,16"),
    ("conv4", "H/2,W/2,V/2,16"),
    ("deconv2", "H,W,V,8"),
    ("conv5", "H,W,V,8"),
    ("conv_d3", "H,W,V/2,16"),
    ("candidate", "H,W,V/2,1"),
]
FUSION_DIMS = [
    ("input", "H,W,2V,S"),
    ("conv6", "H,W,2V,8"),
    ("conv_d3", "H/2,W/2,V,16"),
    ("conv7", "H/2,W/2,V,16"),
    ("conv_d4", "H/4,W/4,V/2,32"),
    ("conv8", "H/4,W/4,V/2,32"),
    ("deconv3", "H/2,W/2,V,32"),
    ("conv4", "H/2,W/2,V,16"),
    ("deconv4", "H,W,2V,8"),
    ("conv9", "H,W,2V,16"),
    ("conv_d5", "H,W,V,8"),
    ("conv_d6", "H,W,V/2,16"),
    ("conv10", "H,W,V/2,S"),
]


def evaluate_dim(expr, env):
    """Evaluate a symbolic extent such as ``H/2``, ``2V`` or ``S``."""
    m = re.fullmatch(r"(\d*)([A-Z]?)(?:/(\d+))?", expr.strip())
    assert m, expr
    coef, sym, div = m.groups()
    value = env[sym] if sym else 1
    value *= int(coef) if coef else 1
    if div:
        assert value % int(div) == 0
        value //= int(div)
    return value


def row_of(layer):
    """Map a layer name to its table row: ``conv4_2`` and ``conv4_1`` share row ``conv4``."""
    return re.sub(r"^(conv\d+)_\d+$", r"\1", layer)


def expected_trace(env):
    rows = []
    for prefix, table in (("extrap", EXTRAP_DIMS), ("fusion", FUSION_DIMS)):
        for name, dims in table:
            rows.append((prefix, name, tuple(evaluate_dim(d, env) for d in dims.split(","))))
    return rows


@pytest.fixture(scope="module")
def params():
    return init_params(views_in=4, n_shears=7, seed=3)


@pytest.fixture(scope="module")
def full_batch_trace(params):
    rng = np.random.default_rng(0)
    stacks = rng.random((8, 7, 64, 64, 4)).astype(np.float32)
    trace = []
    with no_grad():
        cands = extrapolate_candidates(stacks, params, trace)
        out, weights = fuse_candidates(stacks, cands, ShearConfig().shear_values, params, trace=trace)
    return trace, cands, out, weights


# -- architecture ------------------------------------------------------------

def test_layer_shapes_match_published_dimensions(full_batch_trace, params):
    trace, _, _, _ = full_batch_trace
    expected = expected_trace({"H": 64, "W": 64, "V": 4, "S": 7})
    seen = []
    for name, shape in trace:
        prefix, layer = name.split("/")
        row = row_of(layer)
        if not seen or seen[-1][:2] != (prefix, row):
            seen.append((prefix, row, shape))
        else:
            assert shape == seen[-1][2], f"{name}: repeated layer changed shape"
    assert seen == expected


def test_candidate_and_weight_shapes(full_batch_trace):
    _, cands, out, weights = full_batch_trace
    assert cands.shape == (8, 7, 64, 64, 2)
    assert out.shape == (8, 64, 64, 2)
    assert weights.shape == (8, 64, 64, 2, 7)
    w = weights.data
    assert np.all((w > 0) & (w < 1))
    assert np.max(np.abs(w.sum(axis=-1) - 1.0)) < 1e-6


def test_parameter_count_near_reference(params):
    n = count_parameters(params)
    assert abs(n - REFERENCE_PARAMETERS) / REFERENCE_PARAMETERS < 0.10
    # every layer is a 3x3x3 kernel plus one bias per filter
    assert n == sum(s.n_params for _, s in layer_table(7))


def test_parameter_count_of_empty_table_is_zero():
    assert count_parameters({}) == 0


def test_parameter_count_matches_checkpoint_walk(params, tmp_path):
    path = tmp_path / "p.bin"
    save_checkpoint(path, params.arrays(), params.metadata())
    assert table_size(path) == count_parameters(params)


def test_parameter_count_tracks_shear_count():
    small = count_parameters(init_params(n_shears=1))
    big = count_parameters(init_params(n_shears=7))
    # only conv6_1 (input channels) and conv10 (filters) depend on S
    assert big - small == 27 * 6 * 8 + (27 * 16 * 6 + 6)


def test_init_is_seeded_he_uniform():
    a, b = init_params(seed=5), init_params(seed=5)
    for k in a.tensors:
        assert a[k].data.tobytes() == b[k].data.tobytes()
    w = a["extrap/conv2_1/w"].data
    assert np.abs(w).max() <= np.sqrt(6 / (27 * 16))
    assert not np.any(a["extrap/conv2_1/b"].data)


def test_params_validate_shapes(params):
    arrays = params.arrays()
    arrays["fusion/conv10/b"] = np.zeros(3, np.float32)
    with pytest.raises(ValueError, match="conv10"):
        SenetParams.from_arrays(arrays, params.metadata())
    with pytest.raises(ValueError):
        SenetParams({}, views_in=6)
    with pytest.raises(ValueError):
        SenetParams({}, n_shears=4)


@pytest.mark.parametrize("shape", [(1, 7, 62, 64, 4), (1, 7, 64, 64, 8), (7, 64, 64, 4)])
def test_candidate_input_preconditions(params, shape):
    with pytest.raises(ValueError):
        extrapolate_candidates(np.zeros(shape, np.float32), params)


# -- extrapolation stage -------------------------------------------------------

def test_shear_permutation_permutes_candidates(params, rng):
    stacks = rng.random((2, 7, 8, 16, 4)).astype(np.float32)
    perm = rng.permutation(7)
    a = extrapolate_candidates(stacks, params).data
    b = extrapolate_candidates(stacks[:, perm], params).data
    np.testing.assert_allclose(b, a[:, perm], atol=1e-6)


# -- fusion stage ----------------------------------------------------------------

def backward_sheared(cands, shear_values, views_in):
    """Independent route: shift each shear's candidates back to the unsheared frame."""
    b, s, h, w, half = cands.shape
    new = tuple(range(views_in, views_in + half))
    shifts = -np.asarray(shear_values)[:, None] * ramp(new, 1.0, 0)[None, :]
    out = shift_x(Tensor(cands.reshape(b * s, h, w, half).astype(np.float64)), np.tile(shifts, (b, 1)))
    return out.data.reshape(b, s, h, w, half)


@settings(max_examples=10)
@given(seed=st.integers(0, 2**31 - 1))
def test_fusion_output_is_convex_combination(params, seed):
    rng = np.random.default_rng(seed)
    d = ShearConfig().shear_values
    stacks = rng.random((1, 7, 8, 16, 4)).astype(np.float32)
    cands = Tensor(rng.random((1, 7, 8, 16, 2)).astype(np.float32))
    out, _ = fuse_candidates(stacks, cands, d, params)
    vhat = backward_sheared(cands.data, d, 4)
    assert np.all(out.data >= vhat.min(axis=1) - 1e-6)
    assert np.all(out.data <= vhat.max(axis=1) + 1e-6)


def test_identical_candidates_pass_through(params, rng):
    stacks = rng.random((1, 7, 8, 16, 4)).astype(np.float32)
    cand = rng.random((1, 1, 8, 16, 2)).astype(np.float32)
    cands = Tensor(np.repeat(cand, 7, axis=1))
    out, _ = fuse_candidates(stacks, cands, ShearConfig().shear_values, params, backward_shear=False)
    np.testing.assert_allclose(out.data, cand[:, 0], atol=1e-6)


def test_constant_candidates_survive_backward_shear(params, rng):
    stacks = rng.random((1, 7, 8, 16, 4)).astype(np.float32)
    cands = Tensor(np.full((1, 7, 8, 16, 2), 0.3, np.float32))
    out, _ = fuse_candidates(stacks, cands, ShearConfig().shear_values, params)
    np.testing.assert_allclose(out.data, 0.3, atol=1e-6)


def test_fusion_input_layout(params, rng):
    trace = []
    stacks = rng.random((1, 7, 16, 16, 4)).astype(np.float32)
    cands = extrapolate_candidates(stacks, params)
    fuse_candidates(stacks, cands, ShearConfig().shear_values, params, trace=trace)
    assert ("fusion/input", (16, 16, 8, 7)) in trace


def test_no_fusion_weights_are_uniform(params, rng):
    stacks = rng.random((1, 7, 8, 16, 4)).astype(np.float32)
    cands = extrapolate_candidates(stacks, params)
    out, w = fuse_candidates(stacks, cands, ShearConfig().shear_values, params, fusion=False)
    assert np.all(w.data == np.float32(1 / 7))
    vhat = backward_sheared(cands.data, ShearConfig().shear_values, 4)
    np.testing.assert_allclose(out.data, vhat.mean(axis=1), atol=1e-6)


def test_fusion_rejects_inconsistent_candidates(params):
    stacks = np.zeros((1, 7, 8, 16, 4), np.float32)
    with pytest.raises(ValueError):
        fuse_candidates(stacks, Tensor(np.zeros((1, 5, 8, 16, 2))), ShearConfig().shear_values, params)


# -- ablation pipelines ------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(ABLATIONS))
def test_ablation_pipelines_run(name, rng):
    options = ABLATIONS[name]
    cfg = ShearConfig()
    p = init_params(n_shears=options.effective_shear(cfg).n_shears, seed=1)
    inputs = rng.random((2, 8, 32, 4)).astype(np.float32)
    out, w = pipeline_forward(p, inputs, cfg, options)
    assert out.shape == (2, 8, 32, 2)
    assert np.all(np.isfinite(out.data))
    assert w.shape[-1] == (1 if name == "no-shear" else 7)


def test_no_shear_collapses_to_one_volume():
    assert PipelineOptions(shear=False).effective_shear(ShearConfig(K=3)).n_shears == 1


# -- equivariances ----------------------------------------------------------------

def test_translation_equivariance_in_interior(rng):
    """Shifting the input by a multiple of the total stride shifts the output, away from borders."""
    p = init_params(seed=2)
    cfg = ShearConfig()
    t, width, margin = 8, 192, 64
    wide = rng.random((1, 8, width + t, 4)).astype(np.float32)
    a, _ = pipeline_forward(p, wide[:, :, :width], cfg, PipelineOptions())
    b, _ = pipeline_forward(p, wide[:, :, t:], cfg, PipelineOptions())
    np.testing.assert_allclose(
        b.data[:, :, margin : width - margin], a.data[:, :, margin + t : width - margin + t], atol=1e-5
    )


def test_forward_is_bitwise_deterministic(params, rng):
    inputs = rng.random((2, 8, 32, 4)).astype(np.float32)
    a, _ = pipeline_forward(params, inputs, ShearConfig(), PipelineOptions())
    b, _ = pipeline_forward(params, inputs, ShearConfig(), PipelineOptions())
    assert a.data.tobytes() == b.data.tobytes()


def test_shear_stack_feeds_network_in_documented_layout(rng):
    inputs = rng.random((1, 8, 32, 4)).astype(np.float32)
    stacks = shear_many(inputs, (0, 1, 2, 3), ShearConfig().shear_values, 0, "clamp")
    assert stacks.shape == (1, 7, 8, 32, 4)
