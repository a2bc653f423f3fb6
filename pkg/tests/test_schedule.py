import mpmath as mp
import numpy as np
import pytest

from cmrestore.schedule import (ALPHA_BAR_MAX, Schedule, ScheduleError,
                                build_alpha_bar_table, build_schedule,
                                preset_for)
from conftest import TUNED_ROWS


def hp_alpha_bar(i, dps=60):
    """Arbitrary-precision product of (1 - beta_j) for j = 1..i."""
    with mp.workdps(dps):
        lo, hi = mp.mpf("0.0001"), mp.mpf("0.02")
        acc = mp.mpf(1)
        for j in range(i):
            acc *= 1 - (lo + j * (hi - lo) / 999)
        return acc


def hp_schedule(i_n, gamma, n, dps=60):
    with mp.workdps(dps):
        g = mp.mpf(repr(gamma))
        cap = mp.mpf("0.999")
        alpha = [hp_alpha_bar(i_n, dps)]
        if alpha[0] > cap:
            alpha[0] = cap
        for _ in range(n - 1):
            alpha.append(min(alpha[-1] * (1 + g), cap))
        return alpha, [mp.sqrt(1 - a) for a in alpha]


def test_table_first_entries():
    table = build_alpha_bar_table()
    assert len(table) == 1000
    assert table[0] == pytest.approx(0.9999, abs=1e-15)
    beta2 = 0.0001 + 0.0199 / 999
    assert table[1] == pytest.approx(0.9999 * (1 - beta2), rel=1e-14)


def test_table_monotone_and_bounded():
    table = build_alpha_bar_table()
    assert np.all(np.diff(table) < 0)
    assert np.all((table > 0) & (table < 1))


def test_table_last_entry_high_precision():
    table = build_alpha_bar_table()
    expected = float(hp_alpha_bar(1000))
    assert abs(table[999] - expected) / expected <= 1e-12


def test_build_schedule_geometric_with_clip():
    table = build_alpha_bar_table()
    sched = build_schedule(150, 0.2, 4)
    a = table[149]
    expected = [a, a * 1.2, min(a * 1.44, 0.999), 0.999]
    # a * 1.44 = 1.135... so the last two entries saturate at the cap
    assert np.allclose(sched.alpha_bar, expected, rtol=1e-15)
    assert np.allclose(sched.tau, np.sqrt(1 - np.asarray(expected)), rtol=1e-15)


def test_build_schedule_saturation():
    sched = build_schedule(150, 5.0, 4)  # 0.788 * 6 > 0.999 immediately
    assert np.all(sched.alpha_bar[1:] == ALPHA_BAR_MAX)
    assert sched.tau[1] == sched.tau[3]


def test_build_schedule_single_point():
    table = build_alpha_bar_table()
    sched = build_schedule(321, 0.5, 1)
    assert sched.n_steps == 1
    assert sched.alpha_bar[0] == table[320]
    assert sched.tau[0] == np.sqrt(1 - table[320])


def test_build_schedule_errors():
    with pytest.raises(ScheduleError):
        build_schedule(0, 0.2, 4)
    with pytest.raises(ScheduleError):
        build_schedule(1001, 0.2, 4)
    with pytest.raises(ScheduleError):
        build_schedule(150, 0.0, 4)
    with pytest.raises(ScheduleError):
        build_schedule(150, 0.2, 0)
    with pytest.raises(ScheduleError):
        build_schedule(150, 0.2, 4, delta=(0.1, 0.2))
    with pytest.raises(ScheduleError):
        build_schedule(150, 0.2, 4, eta=1.5)
    with pytest.raises(ScheduleError):
        build_schedule(150, 0.2, 4, delta=-0.1)


def test_delta_vector_and_reversal():
    sched = build_schedule(150, 0.2, 4, delta=(0.1, 0.2, 0.3, 0.4))
    assert np.array_equal(sched.delta, [0.1, 0.2, 0.3, 0.4])
    rev = build_schedule(150, 0.2, 4, delta=(0.1, 0.2, 0.3, 0.4),
                         delta_reversed=True)
    assert np.array_equal(rev.delta, [0.4, 0.3, 0.2, 0.1])
    scalar = build_schedule(150, 0.2, 4, delta=0.2)
    assert np.array_equal(scalar.delta, [0.2] * 4)


def test_reproducibility_bit_identical():
    a = build_schedule(400, 0.7, 4, delta=(0.0, 0.5, 0.1, 0.0))
    b = build_schedule(400, 0.7, 4, delta=(0.0, 0.5, 0.1, 0.0))
    assert np.array_equal(a.alpha_bar, b.alpha_bar)
    assert np.array_equal(a.tau, b.tau)


def test_tau_monotone_over_grid():
    for i_n in (50, 150, 400, 900):
        for gamma in (0.02, 0.2, 0.7, 3.0):
            sched = build_schedule(i_n, gamma, 4)
            assert np.all(np.diff(sched.tau) <= 0)
            unclipped = sched.alpha_bar < ALPHA_BAR_MAX
            diffs = np.diff(sched.tau)[unclipped[1:]]
            assert np.all(diffs < 0)


def test_tuned_rows_valid():
    floor = np.sqrt(1 - ALPHA_BAR_MAX)
    for i_n, gamma, delta, zeta in TUNED_ROWS:
        sched = build_schedule(i_n, gamma, 4, delta=delta, zeta=zeta)
        assert sched.n_steps == 4
        assert sched.tau[-1] >= floor - 1e-15


def test_tuned_rows_match_high_precision():
    for i_n, gamma, delta, _ in TUNED_ROWS:
        sched = build_schedule(i_n, gamma, 4, delta=delta)
        alpha_hp, tau_hp = hp_schedule(i_n, gamma, 4)
        for k in range(4):
            assert abs(sched.alpha_bar[k] - float(alpha_hp[k])) / float(alpha_hp[k]) <= 1e-12
            assert abs(sched.tau[k] - float(tau_hp[k])) / float(tau_hp[k]) <= 1e-12


def test_schedule_validation():
    with pytest.raises(ScheduleError):
        Schedule(alpha_bar=np.array([0.5, 0.4]), tau=np.array([0.5, 0.9]),
                 delta=np.zeros(2), mu=np.ones(2))
    with pytest.raises(ScheduleError):
        Schedule(alpha_bar=np.array([0.5]), tau=np.array([1.5]),
                 delta=np.zeros(1), mu=np.ones(1))


def test_presets():
    assert preset_for("sr4", 0.025)["i_n"] == 400
    assert preset_for("sr2", 0.04)["i_n"] == 250
    assert preset_for("gblur", 0.025)["zeta"] == 3.0
    assert preset_for("inpaint-random", 0.0)["i_n"] == 150
