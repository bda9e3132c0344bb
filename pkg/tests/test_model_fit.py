import json
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facecap.model_fit import (
    PUBLISHED_PARAMS,
    CapacityParams,
    CoverageParams,
    FitParams,
    PerDimParams,
    SweepSchemaError,
    UnderdeterminedFitError,
    coverage_regressor,
    default_grid,
    eval_capacity,
    eval_coverage,
    fit_capacity,
    fit_capacity_stage1,
    fit_capacity_stage2,
    fit_coverage,
    fit_coverage_stage1,
    fit_coverage_stage2,
    read_sweep,
    relative_error,
    synthetic_sweep,
)

from oracles import published_coverage, published_log_capacity

DIMS, RADII = default_grid()


def nonzero(bound):
    return st.builds(lambda sign, mag: sign * mag, st.sampled_from([-1.0, 1.0]), st.floats(1e-3, bound))


def test_default_grid():
    assert DIMS == list(range(3, 11))
    assert RADII[0] == 0.65 and RADII[-1] == 1.35 and len(RADII) == 15


# -- stage one ----------------------------------------------------------------------

def test_capacity_stage1_exact():
    r = np.array([0.7, 1.0, 1.3])
    p = fit_capacity_stage1(r, np.exp(2.0 - r))
    assert p.A == pytest.approx(2.0, abs=1e-9) and p.B == pytest.approx(-1.0, abs=1e-9)
    assert p.residual < 1e-12


def test_capacity_stage1_published_d5():
    # A(5) = 5 * 0.993 + 3.701, B(5) = 5 * -0.436 - 3.706
    counts = [math.exp(published_log_capacity(r, 5)) for r in RADII]
    p = fit_capacity_stage1(RADII, counts, dim=5)
    assert p.A == pytest.approx(8.666, abs=1e-6)
    assert p.B == pytest.approx(-5.886, abs=1e-6)


def test_capacity_stage1_constant():
    p = fit_capacity_stage1([0.7, 0.9, 1.1, 1.3], [10, 10, 10, 10])
    assert p.A == pytest.approx(math.log(10), abs=1e-12) and abs(p.B) < 1e-12


def test_stage1_underdetermined():
    with pytest.raises(UnderdeterminedFitError, match="underdetermined stage-1 fit"):
        fit_capacity_stage1([0.7, 1.0], [5, 3])
    with pytest.raises(UnderdeterminedFitError):
        fit_capacity_stage1([0.7, 0.7, 1.0, 1.0], [5, 5, 3, 3])
    with pytest.raises(UnderdeterminedFitError):
        fit_coverage_stage1([0.9, 1.1], [3, 2])


def test_capacity_stage1_needs_positive_counts():
    with pytest.raises(ValueError):
        fit_capacity_stage1([0.7, 1.0, 1.3], [4, 0, 2])


def test_coverage_stage1_exact():
    r = np.array([0.8, 0.95, 1.0, 1.05, 1.2])
    p = fit_coverage_stage1(r, 5.0 * coverage_regressor(r) + 1.0)
    assert p.A == pytest.approx(5.0, abs=1e-9) and p.B == pytest.approx(1.0, abs=1e-9)


def test_coverage_stage1_published_d8():
    counts = [published_coverage(r, 8) for r in RADII]
    p = fit_coverage_stage1(RADII, counts, dim=8)
    assert p.A == pytest.approx(-79.806, abs=1e-6)
    assert p.B == pytest.approx(78.651, abs=1e-6)


def test_coverage_stage1_constant():
    p = fit_coverage_stage1([0.7, 1.0, 1.3], [4.0, 4.0, 4.0])
    assert abs(p.A) < 1e-12 and p.B == pytest.approx(4.0, abs=1e-12)


# -- stage two ----------------------------------------------------------------------

def _per_dim(dims, a, b):
    return [PerDimParams(d, a(d), b(d), 0.0, 3) for d in dims]


def test_capacity_stage2_published():
    got = fit_capacity_stage2(_per_dim(DIMS, lambda d: 0.993 * d + 3.701, lambda d: -0.436 * d - 3.706))
    for name, want in dict(alpha=0.993, beta=3.701, gamma=-0.436, delta=-3.706).items():
        assert getattr(got, name) == pytest.approx(want, abs=1e-9)


def test_capacity_stage2_constant_and_two_dims():
    got = fit_capacity_stage2(_per_dim(DIMS, lambda d: 4.0, lambda d: -1.0))
    assert abs(got.alpha) < 1e-12 and got.beta == pytest.approx(4.0)
    got = fit_capacity_stage2(_per_dim([3, 7], lambda d: 2.0 * d + 1, lambda d: -d))
    assert (got.alpha, got.beta, got.gamma, got.delta) == pytest.approx((2, 1, -1, 0), abs=1e-12)


def test_coverage_stage2_published():
    got = fit_coverage_stage2(_per_dim(DIMS, lambda d: -0.172 * d**3 + 8.258, lambda d: 0.153 * d**3 + 0.315))
    for name, want in dict(alpha_bar=-0.172, beta_bar=8.258, gamma_bar=0.153, delta_bar=0.315).items():
        assert getattr(got, name) == pytest.approx(want, abs=1e-9)


def test_coverage_stage2_constant_and_two_dims():
    got = fit_coverage_stage2(_per_dim(DIMS, lambda d: 3.0, lambda d: 1.0))
    assert abs(got.alpha_bar) < 1e-12
    got = fit_coverage_stage2(_per_dim([2, 4], lambda d: d**3, lambda d: 2.0))
    assert got.alpha_bar == pytest.approx(1.0) and abs(got.beta_bar) < 1e-9


def test_stage2_underdetermined():
    with pytest.raises(UnderdeterminedFitError):
        fit_capacity_stage2(_per_dim([5], lambda d: 1.0, lambda d: 1.0))
    with pytest.raises(UnderdeterminedFitError):
        fit_coverage_stage2(_per_dim([5, 5], lambda d: 1.0, lambda d: 1.0))


# -- full fit -----------------------------------------------------------------------

def _assert_recovered(got, want, tol=1e-6):
    for k, v in vars(want).items():
        assert relative_error(getattr(got, k), v) < tol, k


def test_round_trip_published():
    cap = fit_capacity(synthetic_sweep(PUBLISHED_PARAMS, "capacity", DIMS, RADII))
    cov = fit_coverage(synthetic_sweep(PUBLISHED_PARAMS, "coverage", DIMS, RADII))
    _assert_recovered(cap.params.capacity, PUBLISHED_PARAMS.capacity)
    _assert_recovered(cov.params.coverage, PUBLISHED_PARAMS.coverage)
    assert len(cap.per_dim) == 8 and not cap.excluded


@settings(max_examples=40, deadline=None)
@given(st.tuples(*[nonzero(2.0) for _ in range(4)]), st.tuples(*[nonzero(5.0) for _ in range(4)]))
def test_round_trip_any_parameters(cap, cov):
    params = FitParams(CapacityParams(*cap), CoverageParams(*cov))
    got_cap = fit_capacity(synthetic_sweep(params, "capacity", DIMS, RADII)).params.capacity
    got_cov = fit_coverage(synthetic_sweep(params, "coverage", DIMS, RADII)).params.coverage
    _assert_recovered(got_cap, params.capacity)
    _assert_recovered(got_cov, params.coverage)


def test_order_independence():
    rows = synthetic_sweep(PUBLISHED_PARAMS, "capacity", DIMS, RADII)
    base = fit_capacity(rows).params.capacity
    shuffled = rows[:]
    random.Random(3).shuffle(shuffled)
    got = fit_capacity(shuffled).params.capacity
    for k, v in vars(base).items():
        assert getattr(got, k) == pytest.approx(v, rel=1e-12, abs=1e-12)


def test_contaminated_cells_excluded():
    rows = synthetic_sweep(PUBLISHED_PARAMS, "capacity", DIMS, RADII)
    rows[0] = dict(rows[0], N=1e9, converged=False)
    rows[1] = dict(rows[1], N=1e9, ceiling_reached=True)
    rows[2] = dict(rows[2], N=1e9, error="boom")
    rep = fit_capacity(rows)
    assert [e["reasons"][0] for e in rep.excluded] == ["not converged", "ceiling reached", "error: boom"]
    _assert_recovered(rep.params.capacity, PUBLISHED_PARAMS.capacity)


def test_single_dimension_fails():
    rows = synthetic_sweep(PUBLISHED_PARAMS, "capacity", [5], RADII)
    with pytest.raises(UnderdeterminedFitError, match="stage-2"):
        fit_capacity(rows)


def test_wrong_schema():
    rows = synthetic_sweep(PUBLISHED_PARAMS, "capacity", DIMS, RADII)
    with pytest.raises(SweepSchemaError, match="N_bar"):
        fit_coverage(rows)


def test_read_sweep_csv_and_json(tmp_path):
    rows = synthetic_sweep(PUBLISHED_PARAMS, "capacity", [3, 4], [0.7, 1.0, 1.3])
    csv_path = tmp_path / "s.csv"
    csv_path.write_text("d,r,N,converged,ceiling_reached\n"
                        + "".join(f"{r['d']},{r['r']!r},{r['N']!r},true,false\n" for r in rows))
    json_path = tmp_path / "s.json"
    json_path.write_text(json.dumps({"rows": [dict(dim=r["d"], radius=r["r"], capacity=r["N"]) for r in rows]}))
    a = fit_capacity(read_sweep(csv_path)).params.capacity
    b = fit_capacity(read_sweep(json_path)).params.capacity
    assert a == b


# -- evaluation ---------------------------------------------------------------------

def test_published_evaluation():
    # independently expanded: log N = 128 (0.993 - 0.436 * 1.18) + 3.701 - 3.706 * 1.18
    log_n = published_log_capacity(1.18, 128)
    assert log_n == pytest.approx(60.58, abs=0.01)
    assert eval_capacity(PUBLISHED_PARAMS, 1.18, 128) == pytest.approx(math.exp(log_n), rel=1e-12)
    assert eval_capacity(PUBLISHED_PARAMS, 1.18, 128) == pytest.approx(math.exp(60.58), rel=0.01)
    cov = eval_coverage(PUBLISHED_PARAMS, 1.18, 128)
    assert cov == pytest.approx(published_coverage(1.18, 128), rel=1e-12)
    # quoted to three significant figures as 6.98e4
    assert cov == pytest.approx(6.98e4, rel=5e-3)


def test_sigmoid_midpoint():
    assert float(coverage_regressor(1.0)) == 0.5
    params = FitParams(coverage=CoverageParams(1.0, 2.0, 3.0, 4.0))
    d = 3.0
    assert eval_coverage(params, 1.0, d) == pytest.approx(0.5 * (d**3 + 2.0) + 3.0 * d**3 + 4.0, abs=1e-12)


def test_zero_parameters_give_one():
    params = FitParams(capacity=CapacityParams(0.0, 0.0, 0.0, 0.0))
    assert eval_capacity(params, np.array([0.5, 1.0, 1.9]), 7).tolist() == [1.0, 1.0, 1.0]


def test_coverage_clamp_flag():
    params = FitParams(coverage=CoverageParams(0.0, 0.0, 0.0, -1.0))
    assert eval_coverage(params, 1.0, 3, with_flag=True) == (0.0, True)
    assert eval_coverage(PUBLISHED_PARAMS, 1.0, 3, with_flag=True)[1] is False


def test_capacity_decreasing_in_radius():
    r = np.linspace(0.05, 1.95, 200)
    for d in (1, 3, 10, 128, 512):
        assert np.all(np.diff(eval_capacity(PUBLISHED_PARAMS, r, d)) < 0)


def test_params_json_round_trip():
    data = json.loads(json.dumps(PUBLISHED_PARAMS.to_dict()))
    assert FitParams.from_dict(data) == PUBLISHED_PARAMS
    assert data["fixed"] == {"phi": 10000.0, "epsilon": 0.0005}
