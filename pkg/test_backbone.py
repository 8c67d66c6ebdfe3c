"""
Tests for the toy DFormerV2 model: configuration, forward shapes and accounting.
"""
import numpy as np
import pytest
from numpy.testing import assert_array_equal

from app.errors import ConfigError, ShapeError
from app.kernel import Tensor
from app.services.backbone import (
    ARMS,
    DFormerV2,
    GSABlock,
    ModelConfig,
    Stem,
    attention_flops,
    chw_to_tokens,
    count_params,
    decoder_forward,
    estimate_flops,
    gsa_block,
    tokens_to_chw,
)
from app.services.data_pipeline import synth_scene
from app.services.geo_attention import AttentionMode, sample_decay_rates
from app.services.geometry_prior import DepthGrid, FusionMemory, FusionMode, PriorKind, StagePriorBasis, normalize_depth


@pytest.fixture(scope="module")
def tiny_scene():
    return synth_scene(7, 32, 32, 4)


def test_nano_defaults():
    cfg = ModelConfig.nano()
    assert cfg.stage_dims == (32, 64, 96, 128)
    assert cfg.stage_depths == (2, 2, 4, 2)
    assert cfg.stage_heads == (1, 2, 4, 8)
    assert cfg.decay_strategy.kind == "linear"
    assert cfg.stage_modes() == (AttentionMode.AXIAL,) * 3 + (AttentionMode.FULL,)


def test_undecomposed_config_runs_full_attention_everywhere():
    assert ModelConfig.tiny(decompose=False).stage_modes() == (AttentionMode.FULL,) * 4


@pytest.mark.parametrize("overrides", [
    {"stage_dims": (8, 16, 24)},
    {"stage_dims": (8, 16, 24, 30), "stage_heads": (1, 2, 2, 4)},
    {"stage_dims": (9, 16, 24, 32), "stage_heads": (1, 2, 2, 4)},
    {"stage_depths": (1, 0, 1, 1)},
    {"num_classes": 0},
    {"ffn_ratio": 0.0},
    {"decoder_dim": 0},
    {"prior": "normals"},
    {"fusion_mode": "attention"},
])
def test_invalid_configs(overrides):
    with pytest.raises(ConfigError):
        ModelConfig.tiny(**overrides)


def test_invalid_decay_or_numeric_mode_is_rejected():
    with pytest.raises(ValueError):
        ModelConfig.tiny(decay="linear(1.0,0.5)")
    with pytest.raises(ValueError):
        ModelConfig.tiny(numeric_mode="half")


def test_mapping_round_trip_ignores_unknown_keys():
    cfg = ModelConfig.tiny(fusion_mode=FusionMode.CONV, prior=PriorKind.DEPTH, num_classes=6)
    values = cfg.to_mapping()
    assert values["fusion_mode"] == "conv" and values["prior"] == "depth"
    values["steps"] = 300
    assert ModelConfig.from_mapping(values) == cfg


@pytest.mark.parametrize("arm", list(ARMS))
def test_for_arm(arm):
    cfg = ModelConfig.tiny().for_arm(arm)
    kind, decompose = ARMS[arm]
    assert cfg.prior == kind and cfg.decompose == decompose


def test_for_arm_rejects_unknown_arm():
    with pytest.raises(ConfigError):
        ModelConfig.tiny().for_arm("depth-axial")


def test_forward_shapes(tiny_scene):
    model = DFormerV2(ModelConfig.tiny())
    feats = model.encoder(Tensor(tiny_scene.rgb), tiny_scene.depth)
    assert [f.shape for f in feats.features] == [(8, 8, 8), (16, 4, 4), (24, 2, 2), (32, 1, 1)]
    assert model(tiny_scene.rgb, tiny_scene.depth).shape == (4, 32, 32)


def test_predict_returns_labels_in_range(tiny_scene):
    pred = DFormerV2(ModelConfig.tiny(num_classes=3)).predict(tiny_scene.rgb, tiny_scene.depth)
    assert pred.shape == (32, 32)
    assert pred.dtype == np.int64
    assert pred.min() >= 0 and pred.max() < 3


def test_forward_is_deterministic(tiny_scene):
    cfg = ModelConfig.tiny(numeric_mode="wide")
    a = DFormerV2(cfg)(tiny_scene.rgb, tiny_scene.depth).data
    b = DFormerV2(cfg)(tiny_scene.rgb, tiny_scene.depth).data
    assert_array_equal(a, b)


def test_depth_only_reaches_the_model_through_the_priors(tiny_scene):
    other_depth = tiny_scene.depth[::-1].copy()
    vanilla = DFormerV2(ModelConfig.tiny().for_arm("vanilla"))
    assert_array_equal(vanilla(tiny_scene.rgb, tiny_scene.depth).data, vanilla(tiny_scene.rgb, other_depth).data)
    geometry = DFormerV2(ModelConfig.tiny().for_arm("both"))
    assert not np.array_equal(geometry(tiny_scene.rgb, tiny_scene.depth).data,
                              geometry(tiny_scene.rgb, other_depth).data)


def test_zero_init_blocks_are_identity():
    rng = np.random.default_rng(0)
    block = GSABlock(8, 2, 32, rng, zero_init=True)
    x = Tensor(rng.normal(size=(6, 8)))
    basis = StagePriorBasis.build(DepthGrid(Tensor(rng.random((2, 3)))))
    sched = sample_decay_rates("linear(0.75,1.0)", 2)
    for mode in AttentionMode:
        assert_array_equal(gsa_block(x, basis, block, sched, mode).data, x.data)


def test_input_shape_errors(tiny_scene):
    model = DFormerV2(ModelConfig.tiny())
    with pytest.raises(ShapeError):
        model(tiny_scene.rgb, tiny_scene.depth[:16])
    with pytest.raises(ShapeError):
        model(np.zeros((3, 40, 40)), np.zeros((40, 40)))


@pytest.mark.parametrize("arm", list(ARMS))
@pytest.mark.parametrize("fusion_mode", list(FusionMode))
def test_closed_form_params_match_the_model(arm, fusion_mode):
    cfg = ModelConfig.tiny(fusion_mode=fusion_mode).for_arm(arm)
    report = count_params(cfg)
    assert report.total == DFormerV2(cfg).num_parameters()
    assert [name for name, _ in report.items][0] == "stem"


def test_nano_param_report_matches_the_model():
    cfg = ModelConfig.nano()
    assert count_params(cfg).total == DFormerV2(cfg).num_parameters()


def test_axial_attention_flop_ratio():
    axial = attention_flops(60, 80, 64, AttentionMode.AXIAL)
    full = attention_flops(60, 80, 64, AttentionMode.FULL)
    assert axial * 4800 == full * 140
    report = estimate_flops(ModelConfig.nano(), 256, 256)
    assert report.stage_grids == [(64, 64), (32, 32), (16, 16), (8, 8)]
    assert report.attention_ratio(0) == pytest.approx(128 / 4096)


def test_decomposition_reduces_flops():
    cfg = ModelConfig.nano()
    axial = estimate_flops(cfg, 128, 128)
    full = estimate_flops(cfg, 128, 128, mode=AttentionMode.FULL)
    assert axial.attention_total < full.attention_total
    assert axial.total < full.total
    # the last stage is unchanged by the decomposition
    last = [f for name, f in axial.entries if name.startswith("stage3.") and name.endswith(".attention")]
    assert last == [f for name, f in full.entries if name.startswith("stage3.") and name.endswith(".attention")]


def test_estimate_flops_rejects_unaligned_input():
    with pytest.raises(ShapeError):
        estimate_flops(ModelConfig.nano(), 100, 64)


# Stem and encoder structure --------------------------------------------------

def test_stem_output_shape_and_zero_response():
    stem = Stem(64, np.random.default_rng(0))
    assert stem(Tensor(np.random.default_rng(1).random((3, 64, 64)))).shape == (64, 16, 16)
    assert_array_equal(stem(Tensor(np.zeros((3, 64, 64)))).data, np.zeros((64, 16, 16)))


@pytest.mark.parametrize("c0", [8, 32, 64])
def test_stem_parameter_count_closed_form(c0):
    mid = c0 // 2
    expected = 27 * mid + mid + 2 * mid + 9 * mid * c0 + c0 + 2 * c0
    assert Stem(c0, np.random.default_rng(0)).num_parameters() == expected
    cfg = ModelConfig.nano(stage_dims=(c0, 64, 96, 128))
    assert dict(count_params(cfg).items)["stem"] == expected


def test_zero_init_encoder_is_the_stem_and_downsample_chain(tiny_scene):
    model = DFormerV2(ModelConfig.tiny(), zero_init=True)
    rgb = Tensor(tiny_scene.rgb)
    feats = model.encoder(rgb, tiny_scene.depth)
    x = chw_to_tokens(model.encoder.stem(rgb))
    H = W = 8
    expected = [tokens_to_chw(x, H, W)]
    for down in model.encoder.downsamples:
        x = down(x, H, W)
        H, W = H // 2, W // 2
        expected.append(tokens_to_chw(x, H, W))
    for got, want in zip(feats.features, expected):
        assert_array_equal(got.data, want.data)


@pytest.mark.parametrize("decompose", [False, True])
def test_constant_depth_leaves_only_the_spatial_prior(decompose):
    model = DFormerV2(ModelConfig.tiny(decompose=decompose))
    z = Tensor(normalize_depth(np.full((32, 32), 2500.0)))
    spatial_only = FusionMemory(PriorKind.SPATIAL)
    H = W = 8
    for s in range(4):
        basis = model.encoder.stage_basis(z, s, H, W)
        prior = basis.fuse(model.encoder.stages[s][0].attn.fusion)
        expected = basis.fuse(spatial_only)
        assert prior.G is not None or prior.Gx is not None
        if prior.G is not None:
            assert_array_equal(basis.D.data, 0.0)
            assert_array_equal(prior.G.data, expected.G.data)
        if prior.Gx is not None:
            assert_array_equal(basis.axial.depth_x.data, 0.0)
            assert_array_equal(basis.axial.depth_y.data, 0.0)
            assert_array_equal(prior.Gx.data, expected.Gx.data)
            assert_array_equal(prior.Gy.data, expected.Gy.data)
        H, W = H // 2, W // 2


@pytest.mark.parametrize("scale,shift", [(0.001, 0.0), (3.7, 13.1), (0.3, 5.0), (1.0, 40000.0)])
@pytest.mark.parametrize("arm", ["both", "both-axial", "depth-only"])
def test_logits_are_exactly_invariant_to_affine_depth_rescaling(tiny_scene, arm, scale, shift):
    model = DFormerV2(ModelConfig.tiny().for_arm(arm))
    base = model(tiny_scene.rgb, tiny_scene.depth).data
    assert np.array_equal(model(tiny_scene.rgb, tiny_scene.depth * scale + shift).data, base)


def test_single_class_model_predicts_class_zero(tiny_scene):
    pred = DFormerV2(ModelConfig.tiny(num_classes=1)).predict(tiny_scene.rgb, tiny_scene.depth)
    assert_array_equal(pred, np.zeros((32, 32), dtype=np.int64))


def test_forward_goes_through_the_decoder(tiny_scene):
    model = DFormerV2(ModelConfig.tiny())
    feats = model.encoder(Tensor(tiny_scene.rgb), tiny_scene.depth)
    logits = decoder_forward(model.decoder, feats, 32, 32)
    assert_array_equal(model(tiny_scene.rgb, tiny_scene.depth).data, logits.data)
    assert_array_equal(model.predict(tiny_scene.rgb, tiny_scene.depth), np.argmax(logits.data, axis=0))


def test_doubling_widths_roughly_quadruples_params():
    cfg = ModelConfig.nano()
    wide = ModelConfig.nano(stage_dims=tuple(2 * d for d in cfg.stage_dims))
    ratio = count_params(wide).total / count_params(cfg).total
    assert ratio == pytest.approx(4.0, rel=0.1)
