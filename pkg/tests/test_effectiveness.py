import json
import math

import numpy as np
import pytest

from facecap.effectiveness import (
    FLAG_CLAMPED,
    FLAG_IMPLAUSIBLE,
    FMR_PRESET,
    ModelOutOfRangeError,
    effectiveness,
    effectiveness_from_counts,
    effectiveness_grid,
)
from facecap.model_fit import (
    PUBLISHED_PARAMS,
    CapacityParams,
    CoverageParams,
    FitParams,
    eval_capacity,
    eval_coverage,
)

from oracles import published_coverage, published_log_capacity

POWERS = [8, 16, 32, 64, 128, 256, 512]


def test_preset_constants():
    assert FMR_PRESET == {1.12: "1e-4", 1.18: "1e-3", 1.25: "1e-2"}


def test_high_dimensional_value():
    eta = effectiveness(PUBLISHED_PARAMS, 1.18, 128)
    oracle = published_coverage(1.18, 128) / math.exp(published_log_capacity(1.18, 128))
    assert eta == pytest.approx(oracle, rel=1e-9)
    assert eta == pytest.approx(3.4e-22, rel=0.05)
    assert eta < 1e-10


def test_equal_tables_give_one():
    caps = eval_capacity(PUBLISHED_PARAMS, np.array([0.7, 1.0, 1.3]), 5)
    assert np.all(effectiveness_from_counts(caps, caps) == 1.0)


def test_count_ratio_errors_and_clamp():
    with pytest.raises(ModelOutOfRangeError):
        effectiveness_from_counts([0.0, 1.0], [1.0, 1.0])
    assert effectiveness_from_counts([2.0], [-3.0]).tolist() == [0.0]


def test_clamped_coverage_gives_zero():
    params = FitParams(PUBLISHED_PARAMS.capacity, CoverageParams(0.0, 0.0, 0.0, -5.0))
    assert effectiveness(params, 1.0, 4) == 0.0
    grid = effectiveness_grid(params, [4], [1.0])
    assert grid.cells[0].flags == [FLAG_CLAMPED]


def test_capacity_out_of_range():
    # exp underflows to 0 in double precision
    params = FitParams(CapacityParams(0.0, -800.0, 0.0, 0.0), PUBLISHED_PARAMS.coverage)
    with pytest.raises(ModelOutOfRangeError, match="model out of range"):
        effectiveness(params, 1.0, 4)
    grid = effectiveness_grid(params, [4], [1.0])
    assert "model out of range" in grid.cells[0].flags[0]


def test_implausible_flagged_not_clamped():
    grid = effectiveness_grid(PUBLISHED_PARAMS, [3], [1.25])
    cell = grid.cells[0]
    assert cell.eta > 1 and FLAG_IMPLAUSIBLE in cell.flags


def test_preset_grid_high_dims():
    grid = effectiveness_grid(PUBLISHED_PARAMS, [128, 512], list(FMR_PRESET))
    assert grid.eta.shape == (2, 3)
    assert np.all(grid.eta < 1e-10)
    assert [c.fmr_label for c in grid.cells[:3]] == ["1e-4", "1e-3", "1e-2"]


@pytest.mark.parametrize("r", list(FMR_PRESET))
def test_decreasing_in_low_dims(r):
    eta = [effectiveness(PUBLISHED_PARAMS, r, d) for d in range(3, 11)]
    assert np.all(np.diff(eta) < 0)


@pytest.mark.parametrize("r", list(FMR_PRESET))
def test_decreasing_in_high_dims(r):
    eta = [effectiveness(PUBLISHED_PARAMS, r, d) for d in POWERS]
    assert np.all(np.diff(eta) < 0)


@pytest.mark.parametrize("r", list(FMR_PRESET))
def test_growth_shapes(r):
    d = np.arange(3, 40, dtype=float)
    log_cap = np.log(eval_capacity(PUBLISHED_PARAMS, r, d))
    diffs = np.diff(log_cap)
    assert np.max(np.abs(diffs - diffs[0])) < 1e-9
    third = np.diff(eval_coverage(PUBLISHED_PARAMS, r, d), 3)
    assert np.max(np.abs(third - third[0])) < 1e-6


def test_single_cell_matches_scalar():
    grid = effectiveness_grid(PUBLISHED_PARAMS, [64], [1.18])
    assert grid.eta[0, 0] == effectiveness(PUBLISHED_PARAMS, 1.18, 64)


def test_grid_outputs():
    grid = effectiveness_grid(PUBLISHED_PARAMS, [3, 128], [1.12, 1.0])
    lines = grid.to_csv().splitlines()
    assert lines[0] == "d,r,fmr_label,capacity,coverage,eta,flags"
    assert len(lines) == 5 and lines[1].startswith("3,1.12,1e-4,")
    data = json.loads(grid.to_json())
    assert data["rows"][1]["fmr_label"] is None
    assert np.all(grid.capacity > 0)
    np.testing.assert_allclose(grid.eta, grid.coverage / grid.capacity, rtol=1e-12)


def test_grid_requires_both_models():
    with pytest.raises(ValueError):
        effectiveness_grid(FitParams(capacity=PUBLISHED_PARAMS.capacity), [3], [1.0])
    with pytest.raises(ValueError):
        effectiveness_grid(PUBLISHED_PARAMS, [], [1.0])
