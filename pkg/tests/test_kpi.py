import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ergohrc.errors import ParseError, ValidationError
from ergohrc.kpi import (HandoverTrial, KpiRecord, MotionRecord, aggregate_kpis,
                         format_kpi_report, kpi_records, motion_magnitude, parse_motion_csv,
                         parse_trials_csv, riom_kpi, round_percent, spatial_adaptation_kpi)

# Table II, operators 1..14
TABLE_II_SA = [39.10, 33.30, 21.10, 27.50, 30.40, 31.90, 27.10,
               31.80, 13.40, 33.90, 43.50, 32.10, 18.70, 27.40]
TABLE_II_RIOM = [31.40, 33.10, 24.40, 27.10, 32.10, 27.30, 24.50,
                 26.80, 37.40, 20.60, 45.90, 20.80, 21.30, 24.50]


def _dist(a, b):
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def sa_oracle(wp, php, ahp):
    return 100.0 * (_dist(ahp, wp) - _dist(php, wp)) / _dist(php, wp)


def random_rigid(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q, rng.uniform(-200, 200, 3)


def test_sa_examples():
    wp, php = (0, 0, 0), (100, 0, 0)
    assert spatial_adaptation_kpi(HandoverTrial(wp, php, php)) == 0.0
    assert spatial_adaptation_kpi(HandoverTrial(wp, php, (50, 0, 0))) == pytest.approx(-50.0)
    assert spatial_adaptation_kpi(HandoverTrial(wp, php, (139.1, 0, 0))) == pytest.approx(39.10)
    with pytest.raises(ValidationError):
        spatial_adaptation_kpi(HandoverTrial(wp, wp, php))


def test_magnitude_examples():
    assert motion_magnitude([[1, 2, 3]] * 4) == 0.0
    assert motion_magnitude([[1, 2, 3]]) == 0.0
    path = [[0, 0, 0], [3, 4, 0], [3, 4, 12]]
    assert motion_magnitude(path) == 17.0
    assert motion_magnitude(path[::-1]) == 17.0
    with pytest.raises(ValidationError):
        motion_magnitude(np.empty((0, 3)))


def test_riom_examples():
    assert riom_kpi(100.0, 70.0) == pytest.approx(30.0)
    rec = MotionRecord.from_path([[0, 0, 0], [5, 0, 0]])
    assert riom_kpi(rec, rec) == 0.0
    assert riom_kpi(60.0, 80.0) == pytest.approx(-33.333333333, rel=1e-9)
    assert round_percent(riom_kpi(60.0, 80.0)) == "-33.33"
    with pytest.raises(ValidationError):
        riom_kpi(0.0, 1.0)


def test_table_two_means():
    records = [KpiRecord(str(i + 1), sa, ri)
               for i, (sa, ri) in enumerate(zip(TABLE_II_SA, TABLE_II_RIOM))]
    sa, riom = aggregate_kpis(records)
    assert abs(sa - 29.37) <= 0.005 and abs(riom - 28.37) <= 0.005
    assert format_kpi_report(records).splitlines()[-1] == "mean,29.37,28.37"


def test_aggregate_singleton_and_empty():
    assert aggregate_kpis([KpiRecord("1", 12.5, -3.0)]) == (12.5, -3.0)
    with pytest.raises(ValidationError):
        aggregate_kpis([])
    with pytest.raises(ValidationError):
        KpiRecord("1", float("nan"), 0.0)


def test_round_half_away_from_zero():
    assert round_percent(0.125) == "0.13"
    assert round_percent(-0.125) == "-0.13"
    assert round_percent(29.371428571428574) == "29.37"


HAND_TRIALS = [
    # (wp, php, ahp)
    ((0, 0, 0), (100, 0, 0), (50, 0, 0)),
    ((0, 0, 0), (100, 0, 0), (139.1, 0, 0)),
    ((0, 0, 0), (100, 0, 0), (100, 0, 0)),
    ((0, 0, 0), (0, 3, 4), (0, 6, 8)),
    ((1, 1, 1), (4, 5, 1), (1, 1, 13)),
    ((0, -20, 30), (25, 5, 25), (30, 10, 20)),
    ((0, -20, 30), (25, 5, 25), (10, 0, 10)),
    ((10, 10, 10), (10, 10, 20), (10, 10, 5)),
    ((-5, 2, 7), (3, -1, 0), (8, 8, 8)),
    ((0, 0, 0), (1, 0, 0), (0, 1, 0)),
    ((0, 0, 0), (2, 0, 0), (0, 0, 0)),
    ((0, 0, 0), (60, 80, 0), (0, 0, 130)),
    ((3, 4, 0), (0, 0, 0), (6, 8, 0)),
    ((100, 100, 100), (101, 101, 101), (99, 99, 99)),
    ((0, 0, 0), (0, 0, 50), (0, 0, 65)),
    ((12.5, -7.25, 3.0), (40.0, 10.0, -2.0), (35.5, 2.25, 18.0)),
    ((0, 0, 0), (30, 40, 0), (30, 40, 0.001)),
    ((-10, -10, -10), (10, 10, 10), (0, 0, 0)),
    ((1e3, 0, 0), (1e3, 1e2, 0), (1e3, 2e2, 0)),
    ((0, 0, 0), (7, 24, 0), (20, 21, 0)),
]


def test_twenty_hand_trials():
    assert len(HAND_TRIALS) == 20
    for wp, php, ahp in HAND_TRIALS:
        got = spatial_adaptation_kpi(HandoverTrial(wp, php, ahp))
        assert got == pytest.approx(sa_oracle(wp, php, ahp), rel=1e-9, abs=1e-12)


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    rot, shift = random_rigid(rng)
    wp, php, ahp = rng.uniform(-100, 100, (3, 3))
    path = rng.uniform(-100, 100, (6, 3))
    move = lambda p: p @ rot.T + shift  # noqa: E731
    assert spatial_adaptation_kpi(HandoverTrial(move(wp), move(php), move(ahp))) == pytest.approx(
        spatial_adaptation_kpi(HandoverTrial(wp, php, ahp)), rel=1e-9, abs=1e-9)
    assert motion_magnitude(move(path)) == pytest.approx(motion_magnitude(path), rel=1e-9)


@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(1, 8))
def test_magnitude_additive(seed, n, m):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, 3))
    b = rng.normal(size=(m, 3))
    whole = motion_magnitude(np.vstack([a, b]))
    bridge = float(np.linalg.norm(b[0] - a[-1]))
    assert whole == pytest.approx(motion_magnitude(a) + bridge + motion_magnitude(b), rel=1e-12)


coords = st.lists(st.integers(-50, 50), min_size=3, max_size=3)


@given(st.lists(coords, min_size=2, max_size=6), st.lists(coords, min_size=1, max_size=6))
def test_riom_at_most_hundred(without, with_gr):
    base = MotionRecord.from_path(without)
    if base.magnitude == 0:
        return
    other = MotionRecord.from_path(with_gr)
    value = riom_kpi(base, other)
    assert value <= 100.0
    constant = all(p == with_gr[0] for p in with_gr)
    assert (value == 100.0) == constant


def test_csv_inputs_to_report():
    trials = ("operator,wp_x,wp_y,wp_z,php_x,php_y,php_z,ahp_x,ahp_y,ahp_z\n"
              "2,0,0,0,100,0,0,130,0,0\n"
              "1,0,0,0,100,0,0,139.1,0,0\n"
              "1,0,0,0,100,0,0,139.1,0,0\n")
    motion = ("operator,condition,x,y,z\n"
              "1,without,0,0,0\n1,without,100,0,0\n1,with,0,0,0\n1,with,70,0,0\n"
              "2,without,0,0,0\n2,without,0,50,0\n2,with,0,0,0\n2,with,0,40,0\n")
    records = kpi_records(parse_trials_csv(trials), parse_motion_csv(motion))
    assert format_kpi_report(records) == (
        "operator,SA,RiOM\n1,39.10,30.00\n2,30.00,20.00\nmean,34.55,25.00\n")


def test_csv_errors():
    with pytest.raises(ParseError, match="line 2"):
        parse_trials_csv("1,0,0,0,1,0,0,1,0,0\n1,0,0\n")
    with pytest.raises(ParseError):
        parse_motion_csv("operator,condition,x,y,z\n1,sideways,0,0,0\n")
    with pytest.raises(ValidationError):
        kpi_records({"1": [HandoverTrial((0, 0, 0), (1, 0, 0), (1, 0, 0))]},
                    {"1": {"without": MotionRecord.from_path([[0, 0, 0], [1, 0, 0]])}})
