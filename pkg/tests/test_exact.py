import math

import numpy as np
import pytest

from excursion_area import (CapsTooSmall, LatticePMF, ValidationError, ZeroConditioningEvent, area_marginal,
                            area_tail, area_tails, change_of_measure_identity, conditional_tau, duration_law,
                            enumerate_excursions, excursion_law, load_table, save_table, survival_exact,
                            tilt, tilted_layer)
from excursion_area.exact import original_layer

LAM = math.log(2.5)


def test_first_marginals(small_table, pmf):
    m = area_marginal(small_table)
    assert m[0] == pytest.approx(0.8, abs=1e-15)
    assert m[1] == pytest.approx(0.2 * 0.5, abs=1e-15)
    assert m[2] == pytest.approx(0.2 * 0.3 * 0.5, abs=1e-15)
    assert small_table.stopped[0, 0] == pmf.prob_at_most(0)


def test_conservation(small_table, table):
    for t in (small_table, table):
        assert t.conservation_error() <= 1e-10
        assert t.alive_mass_at_caps >= 0 and t.overflow_mass >= 0
        assert np.all((t.stopped >= 0) & (t.stopped <= 1))


def test_tail_complement(small_table):
    tail = area_tail(small_table, 1)
    assert tail.lower <= 1 - 0.8 + 1e-15 <= tail.upper + 1e-15
    assert tail.upper - tail.lower <= 1e-12
    tails = area_tails(small_table)
    assert tails[1] == pytest.approx(tail.value, rel=1e-12)
    assert np.all(np.diff(tails) <= 0)


def test_duration_monotone(small_table, pmf):
    law = duration_law(pmf, 300)
    survival = 1 - np.cumsum(law)
    assert np.all(np.diff(survival) <= 1e-16)
    dp = small_table.duration_pmf()
    # every excursion of duration <= 20 has area below 400, so the table holds the full law there
    assert np.allclose(dp[:20], law[1:21], atol=1e-15)


def test_conditional_tau(small_table):
    for x, k in ((0, 1), (1, 2), (2, 3)):
        law = conditional_tau(small_table, x)
        assert law[k - 1] == pytest.approx(1.0, abs=1e-15)
    law = conditional_tau(small_table, 300)
    assert math.fsum(law) == pytest.approx(1.0, abs=1e-12)


def test_conditional_tau_zero_event():
    p = LatticePMF.from_pairs([(-1, 0.6), (0, 0.2), (2, 0.2)])
    t = excursion_law(p, 40)
    with pytest.raises(ZeroConditioningEvent):
        conditional_tau(t, 1)


def test_brute_force_enumeration(pmf):
    t = excursion_law(pmf, 60)
    enum = enumerate_excursions(pmf, 7)
    worst = 0.0
    for (n, a), prob in enum.items():
        worst = max(worst, abs(prob - float(t.stopped[n, a])))
    assert worst <= 1e-14
    # every table entry with n <= 7 is reached by some enumerated path
    assert set(zip(*np.nonzero(t.stopped[:8]))) == set(enum)


def test_caps_too_small(pmf):
    with pytest.raises(CapsTooSmall):
        excursion_law(pmf, 200, n_max=5)


def test_rejects_positive_drift():
    with pytest.raises(ValidationError):
        excursion_law(LatticePMF.from_pairs([(-1, 0.2), (1, 0.8)]), 10)


def test_extended_precision_agrees(pmf):
    a = excursion_law(pmf, 300)
    b = excursion_law(pmf, 300, precision="dd")
    assert b.stopped.dtype == np.longdouble
    rel = np.abs(np.asarray(b.marginal, dtype=float) - a.marginal) / a.marginal
    assert rel.max() <= 1e-12


def test_save_load_roundtrip(tmp_path, small_table, pmf):
    save_table(small_table, tmp_path)
    again = load_table(tmp_path, expect_pmf=pmf)
    assert again.stopped.tobytes() == small_table.stopped.tobytes()
    assert again.marginal.tobytes() == small_table.marginal.tobytes()
    save_table(again, tmp_path / "b")
    assert (tmp_path / "b" / "table.bin").read_bytes() == (tmp_path / "table.bin").read_bytes()
    with pytest.raises(ValidationError):
        load_table(tmp_path, expect_pmf=LatticePMF.from_pairs([(-1, 0.6), (0, 0.2), (1, 0.2)]))
    raw = bytearray((tmp_path / "table.bin").read_bytes())
    raw[8] ^= 1
    (tmp_path / "table.bin").write_bytes(bytes(raw))
    with pytest.raises(ValidationError):
        load_table(tmp_path)
    with pytest.raises(FileNotFoundError, match="exact"):
        load_table(tmp_path / "missing")


def test_tilted_layer_one_step(pmf):
    layer = tilted_layer(pmf, 5, 0.2, lam=LAM)
    assert layer.m == 1
    step = tilt(pmf, LAM)
    for k, p in step.entries:
        assert layer.prob(k, k) == pytest.approx(p, abs=1e-15)
    assert layer.mass == pytest.approx(1.0, abs=1e-14)


def test_barrier_layer_below_free(pmf):
    free = tilted_layer(pmf, 4, 0.5, lam=LAM)
    barred = tilted_layer(pmf, 4, 0.5, barrier=0, lam=LAM)
    for s in free.s_values:
        for a in free.a_values:
            assert barred.prob(int(s), int(a)) <= free.prob(int(s), int(a)) + 1e-18
    assert barred.mass < free.mass


def test_layer_mass(pmf):
    layer = tilted_layer(pmf, 40, 0.5, lam=LAM)
    assert layer.mass == pytest.approx(1.0, abs=1e-10)
    assert original_layer(pmf, 20).mass == pytest.approx(1.0, abs=1e-10)


def test_change_of_measure_one_step(pmf):
    for y in (1,):
        lhs, rhs, gap = change_of_measure_identity(pmf, 1, x=y, y=y)
        assert lhs == pytest.approx(0.2) and gap <= 1e-15


def test_change_of_measure_marginalizes(pmf):
    check = change_of_measure_identity(pmf, 12)
    assert check.max_relative_gap() <= 1e-10
    survival = 1 - math.fsum(duration_law(pmf, 12))
    assert math.fsum(check.rhs.ravel()) == pytest.approx(survival, abs=1e-10)


def test_survival_exact(pmf):
    tilted = tilt(pmf, LAM)
    for a, q in ((0, 0.3), (1, 0.6), (2, 0.84)):
        val = survival_exact(tilted, a, 400)
        assert val.finite_horizon == pytest.approx(q, abs=1e-12)
        assert 0 <= val.bracket <= 1e-10
    neg = pmf.negated()
    for y, q in ((1, 0.6), (2, 0.84), (3, 0.936)):
        assert survival_exact(neg, y, 400).finite_horizon == pytest.approx(q, abs=1e-12)
    short = [survival_exact(tilted, 1, k).finite_horizon for k in (1, 2, 5, 20, 100)]
    assert np.all(np.diff(short) <= 0)
