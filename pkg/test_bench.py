"""
Tests for the single-layer attention benchmark.
"""
import pytest

from app.errors import ParameterError
from app.kernel.tensor import WIDE
from app.services.bench import layer_flops, parse_grid, run_bench
from app.services.geo_attention import AttentionMode


@pytest.mark.parametrize("text,grid", [("32x32", (32, 32)), (" 8 X 12 ", (8, 12)), ("2x3", (2, 3))])
def test_parse_grid(text, grid):
    assert parse_grid(text) == grid


@pytest.mark.parametrize("text", ["32", "32x", "axb", "1x8", "32x32x2"])
def test_parse_grid_rejects_bad_text(text):
    with pytest.raises(ParameterError):
        parse_grid(text)


def test_axial_is_faster_than_full_at_32x32():
    report = run_bench(32, 32, 64, 4, [AttentionMode.FULL, AttentionMode.AXIAL], repeat=3)
    full, axial = report.row(AttentionMode.FULL), report.row(AttentionMode.AXIAL)
    assert axial.median_seconds < full.median_seconds
    assert report.time_ratio < 1.0
    assert report.flop_ratio == pytest.approx(64 / 1024)


def test_report_rows_follow_the_requested_modes():
    report = run_bench(4, 6, 8, 2, [AttentionMode.AXIAL], repeat=1, numeric_mode=WIDE)
    assert [r.mode for r in report.rows] == [AttentionMode.AXIAL]
    row = report.rows[0]
    assert row.repeats == 1 and row.median_seconds > 0
    assert row.layer_flops == layer_flops(4, 6, 8, AttentionMode.AXIAL)
    assert report.flop_ratio is None and report.time_ratio is None


def test_layer_flops_add_projections_to_attention():
    n, dim = 16 * 16, 32
    assert layer_flops(16, 16, dim, AttentionMode.FULL) - layer_flops(16, 16, dim, AttentionMode.AXIAL) == \
        2 * 2 * n * (n - 32) * dim


@pytest.mark.parametrize("kwargs", [{"H": 1, "W": 4}, {"H": 4, "W": 4, "repeat": 0}])
def test_run_bench_rejects_bad_arguments(kwargs):
    args = {"dim": 8, "heads": 2, "modes": [AttentionMode.FULL], **kwargs}
    with pytest.raises(ParameterError):
        run_bench(**args)
