import math

import numpy as np
import pytest

from excursion_area import (ConvergenceTrace, cheb_check, duration_clt, duration_clt_trace, kappa_fit,
                            llt_error, tail_ratio)
from excursion_area.fit import fit_c0

# regression baselines measured on the a_max = 4000 table
KAPPA_TOP_BASELINE = 0.038026
FREE_LLT_N160_BASELINE = 0.1628


def test_trace_grid_must_increase():
    with pytest.raises(ValueError):
        ConvergenceTrace("t", [1, 1, 2], [0.0, 0.0, 0.0], 1.0, 0.1)
    with pytest.raises(ValueError):
        ConvergenceTrace("t", [1, 2], [0.0, 0.0], 1.0, 0.1, mode="sideways")


def test_trace_verdicts_are_pure(tmp_path):
    args = ("t", [1, 2, 3], [1.0, 1.04, 1.2], 1.0, 0.05)
    a, b = ConvergenceTrace(*args), ConvergenceTrace(*args)
    assert a.verdicts.tolist() == b.verdicts.tolist() == [True, True, False]
    upper = ConvergenceTrace("u", [1, 2], [0.5, 2.0], 1.0, 0.0, "upper")
    assert upper.verdicts.tolist() == [True, False]
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "x,statistic,target,gap,verdict"


def test_kappa_hat(table, profile):
    trace = kappa_fit(table, profile)
    assert np.all(trace.values > 0)
    assert trace.summary["kappa_top"] == pytest.approx(KAPPA_TOP_BASELINE, rel=1e-4)
    assert trace.summary["top_decade"] == [400, 4000]


def test_tail_ratio(table, profile):
    ratio, closed = tail_ratio(table, profile)
    assert np.all(ratio.values > 0)
    assert abs(ratio.summary["ratio_top"] - 1) <= 0.05
    assert closed.passed


def test_chebyshev_dominates(table, profile):
    bound, gap = cheb_check(table, profile)
    assert bound.summary["violations"] == 0
    assert bound.values[0] <= bound.target[0]
    assert gap.summary["max_over_min"] <= 2.0


def test_duration_distances(table, profile):
    res = duration_clt(table, profile, 1000)
    assert res.tv >= 0 and res.sup_norm >= 0
    tv, _ = duration_clt_trace(table, profile, [400, 800, 1600, 3200, 3999])
    assert np.all(tv.values >= 0)
    assert tv.summary["decreasing"]


def test_free_local_limit(pmf, profile):
    errs = [llt_error(pmf, profile, n).sup_error for n in (20, 40, 80, 160)]
    assert all(e >= 0 for e in errs)
    assert np.all(np.diff(errs) < 0)
    assert errs[-1] == pytest.approx(FREE_LLT_N160_BASELINE, rel=1e-3)


def test_bridge_peak_with_exact_constants(pmf, profile):
    from excursion_area import tilted_layer

    layer = tilted_layer(pmf, 160, 1.0, barrier=0, lam=profile.lam)
    for x, qhat in ((1, 0.6), (2, 0.84)):
        res = llt_error(pmf, profile, 160, 1.0, "bridge", endpoint=x, q=0.3, qhat=qhat, layer=layer)
        assert res.sup_error >= 0
        assert abs(res.peak_ratio - 1) <= 0.15


def test_llt_mode_errors(pmf, profile):
    with pytest.raises(ValueError):
        llt_error(pmf, profile, 20, mode="barrier")
    with pytest.raises(ValueError):
        llt_error(pmf, profile, 20, mode="other")


def test_c0_flattening(pmf0):
    trace = fit_c0(pmf0, 4000)
    assert trace.summary["C0"] == pytest.approx(0.154532, rel=1e-4)
    assert trace.summary["top_quartile_relative_spread"] < 0.01
    # n^{3/2} P(tau = n) flattens: late-grid changes are much smaller than early ones
    v = trace.values
    assert abs(v[3999] - v[1999]) < 0.1 * abs(v[199] - v[99])
    assert math.isfinite(trace.summary["C0"])
