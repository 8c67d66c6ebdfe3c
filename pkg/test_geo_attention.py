"""
Tests for vanilla, full and axial geometry self-attention and the decay schedules.
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from app.errors import DimensionError, ParameterError
from app.kernel import Tensor
from app.services import oracles
from app.services.geo_attention import (
    DEFAULT_DECAY,
    AttentionLayerWeights,
    AttentionMode,
    DecayStrategy,
    decayed_attention_weights,
    gsa_axial,
    gsa_full,
    multi_head_gsa,
    sample_decay_rates,
    vanilla_attention,
)
from app.services.geometry_prior import (
    DepthGrid,
    FusionMemory,
    PriorKind,
    axial_priors,
    build_geometry_prior,
)

TOL = 1e-12


def _qkv(rng, *shape):
    return tuple(Tensor(rng.normal(size=shape)) for _ in range(3))


def _prior(rng, H, W, **memory):
    return build_geometry_prior(DepthGrid(Tensor(rng.random((H, W)))), FusionMemory(**memory))


# Vanilla ---------------------------------------------------------------------

def test_single_token_returns_value():
    rng = np.random.default_rng(0)
    q, k, v = _qkv(rng, 1, 3)
    assert_allclose(vanilla_attention(q, k, v).data, v.data, rtol=0, atol=TOL)


def test_identical_keys_average_values():
    rng = np.random.default_rng(1)
    q = Tensor(rng.normal(size=(4, 3)))
    k = Tensor(np.tile(rng.normal(size=(1, 3)), (4, 1)))
    v = Tensor(rng.normal(size=(4, 2)))
    out = vanilla_attention(q, k, v).data
    assert_allclose(out, np.tile(v.data.mean(axis=0), (4, 1)), rtol=0, atol=TOL)


def test_vanilla_matches_scalar_oracle():
    rng = np.random.default_rng(2)
    q, k, v = _qkv(rng, 4, 3)
    assert_allclose(vanilla_attention(q, k, v).data, oracles.attention_oracle(q.data, k.data, v.data),
                    rtol=0, atol=TOL)


def test_vanilla_shape_mismatch():
    rng = np.random.default_rng(3)
    with pytest.raises(DimensionError):
        vanilla_attention(Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=(4, 2))),
                          Tensor(rng.normal(size=(4, 3))))
    with pytest.raises(DimensionError):
        vanilla_attention(Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=(4, 3))),
                          Tensor(rng.normal(size=(5, 3))))


# Full geometry attention -----------------------------------------------------

def test_beta_one_equals_vanilla():
    rng = np.random.default_rng(4)
    q, k, v = _qkv(rng, 6, 4)
    G = _prior(rng, 2, 3).G
    assert_allclose(gsa_full(q, k, v, G, 1.0).data, vanilla_attention(q, k, v).data, rtol=0, atol=TOL)


@pytest.mark.parametrize("beta", [0.25, 0.75, 0.99])
def test_zero_prior_equals_vanilla(beta):
    rng = np.random.default_rng(5)
    q, k, v = _qkv(rng, 6, 4)
    G = Tensor(np.zeros((6, 6)))
    assert_allclose(gsa_full(q, k, v, G, beta).data, vanilla_attention(q, k, v).data, rtol=0, atol=TOL)


def test_flat_depth_with_depth_prior_only_equals_vanilla():
    rng = np.random.default_rng(6)
    q, k, v = _qkv(rng, 9, 2)
    grid = DepthGrid(Tensor(np.full((3, 3), 0.6)))
    G = build_geometry_prior(grid, FusionMemory(kind=PriorKind.DEPTH)).G
    assert_allclose(gsa_full(q, k, v, G, 0.5).data, vanilla_attention(q, k, v).data, rtol=0, atol=TOL)


def test_gsa_full_matches_scalar_oracle():
    rng = np.random.default_rng(7)
    q, k, v = _qkv(rng, 6, 3)
    G = _prior(rng, 2, 3).G
    expected = oracles.gsa_full_oracle(q.data, k.data, v.data, G.data, 0.75)
    assert_allclose(gsa_full(q, k, v, G, 0.75).data, expected, rtol=0, atol=TOL)


def test_huge_prior_entry_annihilates_a_key():
    rng = np.random.default_rng(8)
    q, k, v = _qkv(rng, 4, 3)
    g = np.zeros((4, 4))
    g[0, 2] = g[2, 0] = 1e6
    plain = decayed_attention_weights(q, k).data
    decayed = decayed_attention_weights(q, k, Tensor(0.75 ** g)).data
    assert decayed[0, 2] <= 1e-6 * plain[0, 2]
    assert_allclose(decayed[1], plain[1], rtol=0, atol=TOL)
    # no renormalisation of the remaining weights
    assert decayed[0].sum() < 1.0


def test_decayed_weights_are_bounded_by_softmax():
    rng = np.random.default_rng(9)
    for _ in range(50):
        H, W = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        q, k, _ = _qkv(rng, H * W, 4)
        G = _prior(rng, H, W, w_spatial=float(rng.uniform(0, 1))).G
        beta = float(rng.uniform(0.05, 1.0))
        plain = decayed_attention_weights(q, k).data
        decayed = decayed_attention_weights(q, k, Tensor(np.exp(G.data * np.log(beta)))).data
        assert np.all(decayed <= plain + 1e-15)
        sums = decayed.sum(axis=1)
        assert np.all(sums > 0) and np.all(sums <= 1.0 + 1e-12)


def test_gsa_full_rejects_mismatched_prior():
    rng = np.random.default_rng(10)
    q, k, v = _qkv(rng, 6, 3)
    with pytest.raises(DimensionError):
        gsa_full(q, k, v, Tensor(np.zeros((4, 4))), 0.75)


# Axial geometry attention ----------------------------------------------------

def test_axial_matches_two_pass_oracle():
    rng = np.random.default_rng(11)
    for H, W in [(2, 2), (2, 3), (3, 2)]:
        q, k, v = _qkv(rng, H, W, 3)
        grid = DepthGrid(Tensor(rng.random((H, W))))
        gx, gy = axial_priors(grid, FusionMemory(w_spatial=0.4))
        expected = oracles.gsa_axial_oracle(q.data, k.data, v.data, gx.data, gy.data, 0.75)
        assert_allclose(gsa_axial(q, k, v, gx, gy, 0.75).data, expected, rtol=0, atol=TOL)


def test_axial_single_row_equals_full_attention_on_the_row():
    rng = np.random.default_rng(12)
    W = 5
    q, k, v = _qkv(rng, 1, W, 3)
    grid = DepthGrid(Tensor(rng.random((1, W))))
    mem = FusionMemory()
    gx, gy = axial_priors(grid, mem)
    G = build_geometry_prior(grid, mem, axial=False).G
    row = gsa_full(Tensor(q.data[0]), Tensor(k.data[0]), Tensor(v.data[0]), G, 0.8).data
    assert_allclose(gsa_axial(q, k, v, gx, gy, 0.8).data[0], row, rtol=0, atol=TOL)


def test_axial_single_column_equals_column_attention():
    rng = np.random.default_rng(13)
    H = 4
    q, k, v = _qkv(rng, H, 1, 2)
    grid = DepthGrid(Tensor(rng.random((H, 1))))
    mem = FusionMemory()
    gx, gy = axial_priors(grid, mem)
    G = build_geometry_prior(grid, mem, axial=False).G
    col = gsa_full(Tensor(q.data[:, 0]), Tensor(k.data[:, 0]), Tensor(v.data[:, 0]), G, 0.8).data
    assert_allclose(gsa_axial(q, k, v, gx, gy, 0.8).data[:, 0], col, rtol=0, atol=TOL)


def test_axial_output_shape_and_prior_checks():
    rng = np.random.default_rng(14)
    q, k, v = _qkv(rng, 3, 4, 2)
    gx, gy = axial_priors(DepthGrid(Tensor(rng.random((3, 4)))), FusionMemory())
    assert gsa_axial(q, k, v, gx, gy, 0.9).shape == (3, 4, 2)
    with pytest.raises(DimensionError):
        gsa_axial(q, k, v, gy, gx, 0.9)
    with pytest.raises(DimensionError):
        gsa_axial(Tensor(q.data[0]), Tensor(k.data[0]), Tensor(v.data[0]), gx, gy, 0.9)


# Decay schedules -------------------------------------------------------------

def test_decay_schedule_examples():
    assert sample_decay_rates(DecayStrategy.fixed(0.25), 3).rates == (0.25, 0.25, 0.25)
    assert sample_decay_rates("linear(0.5,1.0)", 2).rates == (0.5, 0.75)
    assert sample_decay_rates("linear(0.75, 1.0)", 1).rates == (0.75,)
    assert sample_decay_rates(DEFAULT_DECAY, 4).rates == (0.75, 0.8125, 0.875, 0.9375)


def test_linear_rates_stay_in_half_open_range():
    for heads in range(1, 17):
        rates = sample_decay_rates(DEFAULT_DECAY, heads).rates
        assert all(0.75 <= r < 1.0 for r in rates)
        assert list(rates) == sorted(rates)


def test_strategy_parse_and_format():
    assert DecayStrategy.parse(" linear( 0.5 , 1 ) ") == DecayStrategy.linear(0.5, 1.0)
    assert DecayStrategy.parse("fixed(0.75)") == DecayStrategy.fixed(0.75)
    assert str(DecayStrategy.linear(0.75, 1.0)) == "linear(0.75,1.0)"
    assert DecayStrategy.parse(str(DecayStrategy.fixed(0.3))) == DecayStrategy.fixed(0.3)


@pytest.mark.parametrize("text", ["", "cosine(0.5,1)", "linear(0.5)", "fixed(0.5,0.7)", "linear(a,b)", "fixed"])
def test_strategy_parse_errors(text):
    with pytest.raises(ParameterError):
        DecayStrategy.parse(text)


@pytest.mark.parametrize("strategy,heads", [
    ("linear(1.0,0.75)", 2),
    ("linear(0.0,1.0)", 2),
    ("linear(0.5,1.5)", 2),
    ("fixed(0)", 2),
    ("fixed(1.5)", 2),
    ("linear(0.75,1.0)", 0),
])
def test_invalid_schedules(strategy, heads):
    with pytest.raises(ParameterError):
        sample_decay_rates(strategy, heads)


# Multi-head layer ------------------------------------------------------------

def test_one_head_with_unit_decay_equals_vanilla_layer():
    rng = np.random.default_rng(15)
    H, W, C = 2, 3, 4
    w = AttentionLayerWeights(C, 1, rng)
    x = Tensor(rng.normal(size=(H * W, C)))
    prior = build_geometry_prior(DepthGrid(Tensor(rng.random((H, W)))), w.fusion)
    out = multi_head_gsa(x, prior, w, sample_decay_rates("fixed(1.0)", 1), AttentionMode.FULL).data
    q, k, v = (x.data @ m.data for m in (w.wq, w.wk, w.wv))
    expected = oracles.attention_oracle(q, k, v) @ w.wo.data
    assert_allclose(out, expected, rtol=0, atol=TOL)


def test_multi_head_output_shape_for_random_layouts():
    rng = np.random.default_rng(16)
    for _ in range(6):
        H, W = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        heads = int(rng.choice([1, 2, 4]))
        C = heads * int(rng.integers(1, 4))
        w = AttentionLayerWeights(C, heads, rng)
        x = Tensor(rng.normal(size=(H * W, C)))
        prior = build_geometry_prior(DepthGrid(Tensor(rng.random((H, W)))), w.fusion)
        sched = sample_decay_rates(DEFAULT_DECAY, heads)
        for mode in AttentionMode:
            assert multi_head_gsa(x, prior, w, sched, mode).shape == (H * W, C)


def test_multi_head_uses_each_head_rate():
    rng = np.random.default_rng(17)
    H, W, heads, dh = 2, 2, 2, 3
    C = heads * dh
    w = AttentionLayerWeights(C, heads, rng)
    x = Tensor(rng.normal(size=(H * W, C)))
    prior = build_geometry_prior(DepthGrid(Tensor(rng.random((H, W)))), w.fusion)
    sched = sample_decay_rates("linear(0.5,1.0)", heads)
    out = multi_head_gsa(x, prior, w, sched, AttentionMode.FULL).data
    q, k, v = (x.data @ m.data for m in (w.wq, w.wk, w.wv))
    heads_out = [
        oracles.gsa_full_oracle(q[:, h * dh:(h + 1) * dh], k[:, h * dh:(h + 1) * dh], v[:, h * dh:(h + 1) * dh],
                                prior.G.data, sched.rates[h])
        for h in range(heads)
    ]
    assert_allclose(out, np.concatenate(heads_out, axis=1) @ w.wo.data, rtol=0, atol=TOL)


def test_layer_without_prior_runs_plain_attention():
    rng = np.random.default_rng(18)
    H, W, C = 2, 2, 4
    w = AttentionLayerWeights(C, 2, rng, kind=PriorKind.NONE)
    assert w.fusion.parameters() == []
    x = Tensor(rng.normal(size=(H * W, C)))
    prior = build_geometry_prior(DepthGrid(Tensor(rng.random((H, W)))), w.fusion)
    sched = sample_decay_rates(DEFAULT_DECAY, 2)
    plain = multi_head_gsa(x, prior, w, sample_decay_rates("fixed(1.0)", 2), AttentionMode.FULL).data
    assert_allclose(multi_head_gsa(x, prior, w, sched, AttentionMode.FULL).data, plain, rtol=0, atol=TOL)


def test_multi_head_is_deterministic():
    rng = np.random.default_rng(19)
    w = AttentionLayerWeights(8, 2, rng)
    x = Tensor(rng.normal(size=(12, 8)))
    prior = build_geometry_prior(DepthGrid(Tensor(rng.random((3, 4)))), w.fusion)
    sched = sample_decay_rates(DEFAULT_DECAY, 2)
    for mode in AttentionMode:
        assert_array_equal(multi_head_gsa(x, prior, w, sched, mode).data,
                           multi_head_gsa(x, prior, w, sched, mode).data)


def test_multi_head_errors():
    rng = np.random.default_rng(20)
    with pytest.raises(DimensionError):
        AttentionLayerWeights(6, 4, rng)
    w = AttentionLayerWeights(4, 2, rng)
    prior = build_geometry_prior(DepthGrid(Tensor(rng.random((2, 2)))), w.fusion)
    sched = sample_decay_rates(DEFAULT_DECAY, 2)
    with pytest.raises(DimensionError):
        multi_head_gsa(Tensor(rng.normal(size=(6, 4))), prior, w, sched)
    with pytest.raises(DimensionError):
        multi_head_gsa(Tensor(rng.normal(size=(4, 6))), prior, w, sched)
    with pytest.raises(DimensionError):
        multi_head_gsa(Tensor(rng.normal(size=(4, 4))), prior, w, sample_decay_rates(DEFAULT_DECAY, 4))
    axial_only = build_geometry_prior(prior.grid, w.fusion, full=False)
    with pytest.raises(DimensionError):
        multi_head_gsa(Tensor(rng.normal(size=(4, 4))), axial_only, w, sched, AttentionMode.FULL)
