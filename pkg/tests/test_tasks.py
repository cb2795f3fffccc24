import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import two_segment_genome
from esp_creatures.genome import express
from esp_creatures.physics import DT, GRAVITY, Light, Trajectory
from esp_creatures.tasks import (D_NORM, SETTLE_STEPS, TASKS, FightOrFlightScore,
                                 LocomotionFitnessParams, fitness_attack, fitness_fight_or_flight,
                                 fitness_high_reach, fitness_locomotion, fitness_move_to_light,
                                 fitness_retreat, fitness_strike, fitness_turn, fitness_turn_from_light,
                                 fitness_turn_to_light, get_task, locomotion_score, run_task)

MASS = 10.0


def make_traj(xy, headings, *, light=None, work=None, impulse=None, top=None, blew_up=False, died=False):
    """Synthetic single-segment trajectory from per-step root xy and yaw."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    headings = np.asarray(headings, dtype=float)
    n = len(xy)
    pos = np.zeros((n, 1, 3))
    pos[:, 0, :2] = xy
    pos[:, 0, 2] = 0.15
    quat = np.zeros((n, 1, 4))
    quat[:, 0, 0] = np.cos(headings / 2)
    quat[:, 0, 3] = np.sin(headings / 2)
    lights = [light] if light is not None else []
    return Trajectory(
        pos, quat, np.zeros((n, 0)),
        np.zeros(n) if work is None else np.asarray(work, dtype=float),
        np.full(n, MASS * GRAVITY * DT) if impulse is None else np.asarray(impulse, dtype=float),
        np.full(n, 0.3) if top is None else np.asarray(top, dtype=float),
        np.ones((n, len(lights)), dtype=bool), np.zeros((n, 0)), lights, MASS,
        np.array([xy[0, 0], xy[0, 1], 0.15]) if n else np.zeros(3), 0.0, n, n, blew_up, died)


def still(n=1200, heading=0.0, **kw):
    return make_traj(np.zeros((n, 2)), np.full(n, heading), **kw)


def light_at(deg, d=3.0, kind="vulnerable"):
    a = math.radians(deg)
    return Light((d * math.cos(a), d * math.sin(a), 0.5), 1.0, kind)


# --------------------------------------------------------------------------
# locomotion


def test_locomotion_score_examples():
    assert locomotion_score(0.0, 0.5, sigma=0.25, s_max=2.0) == pytest.approx(0.0625)
    assert locomotion_score(2.0, 1.0, sigma=0.25, s_max=2.0) == pytest.approx(1.0)
    assert locomotion_score(0.2499, 0.0, sigma=0.25, s_max=2.0) == 0.0
    assert locomotion_score(5.0, 1.0) == pytest.approx(1.0)


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 3), st.floats(0, 3), st.floats(0, 1), st.floats(0, 1))
def test_locomotion_score_is_monotone_and_bounded(s1, s2, e1, e2):
    lo_s, hi_s = sorted((s1, s2))
    lo_e, hi_e = sorted((e1, e2))
    assert 0.0 <= locomotion_score(s1, e1) <= 1.0
    assert locomotion_score(s1, lo_e) <= locomotion_score(s1, hi_e)
    assert locomotion_score(lo_s, e1) <= locomotion_score(hi_s, e1)


def test_locomotion_rejects_bad_efficiency():
    with pytest.raises(ValueError):
        locomotion_score(1.0, 1.5)


def test_locomotion_fitness_from_trajectory():
    n = 1200
    x = np.linspace(0, 6.0, n)  # 6 m in 10 s
    traj = make_traj(np.c_[x, np.zeros(n)], np.zeros(n), work=np.linspace(0, 250, n))
    p = LocomotionFitnessParams(sigma_step=0.25)
    # s = 0.6 m/s, two full steps, efficiency 1 - 250/500
    assert fitness_locomotion(traj, p) == pytest.approx(0.25 * (2 + 0.5) / 2.0)


def test_locomotion_counts_net_displacement_in_any_direction():
    n = 1200
    y = np.linspace(0, -3.0, n)
    traj = make_traj(np.c_[np.zeros(n), y], np.zeros(n))
    assert fitness_locomotion(traj) == pytest.approx(locomotion_score(0.3, 1.0))


def test_locomotion_blowup_scores_zero():
    assert fitness_locomotion(still(blew_up=True)) == 0.0


# --------------------------------------------------------------------------
# turning


def spin(total, n=1200, drift=0.0):
    h = np.linspace(0, total, n)
    return make_traj(np.c_[np.linspace(0, drift, n), np.zeros(n)], h)


def test_turn_examples():
    assert fitness_turn(still(), "ccw") == 0.0
    assert fitness_turn(spin(2 * math.pi), "ccw") == pytest.approx(1.0, abs=1e-3)
    assert fitness_turn(spin(2 * math.pi), "cw") == 0.0
    assert fitness_turn(spin(-math.pi), "cw") == pytest.approx(0.5, abs=1e-3)


def test_turn_counts_unwrapped_yaw_and_penalises_drift():
    assert fitness_turn(spin(4 * math.pi), "ccw") == 1.0
    assert fitness_turn(spin(math.pi, drift=0.5), "ccw") == pytest.approx(0.25, abs=1e-3)
    assert fitness_turn(spin(math.pi, drift=2.0), "ccw") == 0.0


def test_turn_rejects_unknown_direction():
    with pytest.raises(ValueError):
        fitness_turn(still(), "up")


# --------------------------------------------------------------------------
# lights


def test_turn_to_light_examples():
    headings = [45, 135, -135, -45]
    facing = [still(heading=math.radians(h), light=light_at(h)) for h in headings]
    away = [still(heading=math.radians(h + 180), light=light_at(h)) for h in headings]
    assert fitness_turn_to_light(facing) == pytest.approx(1.0)
    assert fitness_turn_to_light(away) == pytest.approx(0.0, abs=1e-12)


def test_turn_to_light_static_creature_matches_closed_form():
    headings = [45, 135, -135, -45]
    trajs = [still(light=light_at(h)) for h in headings]
    expected = np.mean([max(0.0, math.cos(math.radians(h))) for h in headings])
    assert fitness_turn_to_light(trajs) == pytest.approx(expected)


def approach(frac, h, n=600, d=5.0):
    a = math.radians(h)
    r = np.linspace(0, frac * d, n)
    return make_traj(np.c_[r * math.cos(a), r * math.sin(a)], np.full(n, a), light=light_at(h, d))


def test_move_to_light_examples():
    hs = [0, 72, 144, 216, 288]
    assert fitness_move_to_light([approach(1.0, h) for h in hs]) == pytest.approx(1.0)
    assert fitness_move_to_light([approach(0.0, h) for h in hs]) == 0.0
    assert fitness_move_to_light([approach(0.5, h) for h in hs]) == pytest.approx(0.5)
    assert fitness_move_to_light([approach(-0.5, h) for h in hs]) == 0.0


def strike_traj(step, excess_ratio=2.0, xy=None, light=None, n=300):
    w = MASS * GRAVITY * DT
    imp = np.full(n, w)
    if step is not None:
        imp[step] = w * (1 + excess_ratio)
    return make_traj(np.zeros((n, 2)) if xy is None else xy, np.zeros(n), impulse=imp, light=light)


def test_strike_examples():
    assert fitness_strike(still(300)) == 0.0
    assert fitness_strike(strike_traj(100, 1.5)) == pytest.approx(0.5)
    assert fitness_strike(strike_traj(100, 4.0)) == 1.0
    assert fitness_strike(strike_traj(SETTLE_STEPS - 1, 3.0)) == 0.0  # settling impact ignored
    assert fitness_strike(strike_traj(100, 0.4)) == 0.0  # under the event threshold
    assert fitness_strike(still(300, blew_up=True)) == 0.0


def test_attack_examples():
    n = 300
    hs = [45, 135, -135, -45]

    def lit(frac):
        out = []
        for h in hs:
            a = math.radians(h)
            r = np.linspace(0, 3.0 * frac, n)
            out.append(strike_traj(n - 1, 2.0, np.c_[r * math.cos(a), r * math.sin(a)], light_at(h), n))
        return out

    assert fitness_attack(lit(1.0), strike_traj(None)) == pytest.approx(1.0)
    assert fitness_attack(lit(0.5), strike_traj(None)) == pytest.approx(0.5)
    assert fitness_attack(lit(1.0), strike_traj(100)) == 0.0
    assert fitness_attack([still(n, light=light_at(h)) for h in hs], strike_traj(None)) == 0.0


def test_turn_from_light_examples():
    n = 1200
    away = still(n, heading=math.pi, light=light_at(0))
    towards = still(n, light=light_at(0))
    assert fitness_turn_from_light([away]) == pytest.approx(1.0)
    assert fitness_turn_from_light([towards]) == 0.0
    # faces the light for the first second, then turns away for good
    h = np.where(np.arange(n) < 120, 0.0, math.pi)
    late = make_traj(np.zeros((n, 2)), h, light=light_at(0))
    assert fitness_turn_from_light([late]) == pytest.approx(0.75)


def test_retreat_examples():
    n = 600
    assert fitness_retreat([still(n, heading=math.pi, light=light_at(0))]) == 0.0
    x = np.linspace(0, -D_NORM, n)
    run_away = make_traj(np.c_[x, np.zeros(n)], np.full(n, math.pi), light=light_at(0))
    assert fitness_retreat([run_away]) == pytest.approx(1.0)
    x = np.linspace(0, 2.0, n)
    closer = make_traj(np.c_[x, np.zeros(n)], np.full(n, math.pi), light=light_at(0))
    assert fitness_retreat([closer]) == 0.0
    dead = make_traj(np.c_[-x, np.zeros(n)], np.full(n, math.pi), light=light_at(0), died=True)
    assert fitness_retreat([dead]) == 0.0


def test_high_reach_squashes_peak_after_settling():
    n = 300
    top = np.full(n, 0.4)
    top[10] = 50.0  # during settling, ignored
    top[200] = 2.0
    assert fitness_high_reach(still(n, top=top)) == pytest.approx(0.5)
    top[200] = 6.0
    assert fitness_high_reach(still(n, top=top)) == pytest.approx(0.75)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 100), st.floats(0, 100))
def test_high_reach_is_monotone_and_never_saturates(a, b):
    lo, hi = sorted((a, b))
    f = [fitness_high_reach(still(120, top=np.full(120, h))) for h in (lo, hi)]
    assert 0.0 <= f[0] <= f[1] < 1.0


# --------------------------------------------------------------------------
# fight or flight


def test_fight_or_flight_examples():
    assert fitness_fight_or_flight(FightOrFlightScore(4, 1.0, 1.0)) == 1.0
    assert fitness_fight_or_flight(FightOrFlightScore(4, 1.0, 0.0)) == pytest.approx(1 / 9)
    # one perfect minimum among n directions outweighs perfect maxima everywhere
    n = 4
    assert 2 * n * (1 / n) > 1.0


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 20), st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.1))
def test_fight_or_flight_weights_and_monotonicity(n, a, b, delta):
    hi, lo = max(a, b), min(a, b)
    f = fitness_fight_or_flight(FightOrFlightScore(n, hi, lo))
    assert 0.0 <= f <= 1.0
    assert fitness_fight_or_flight(FightOrFlightScore(n, min(hi + delta, 1.0), lo)) >= f
    d_minus = fitness_fight_or_flight(FightOrFlightScore(n, 1.0, 1.0)) - \
        fitness_fight_or_flight(FightOrFlightScore(n, 1.0, 0.0))
    d_plus = fitness_fight_or_flight(FightOrFlightScore(n, 1.0, 0.0)) - \
        fitness_fight_or_flight(FightOrFlightScore(n, 0.0, 0.0))
    assert d_minus == pytest.approx(2 * n * d_plus)


def test_fight_or_flight_validation():
    with pytest.raises(ValueError):
        FightOrFlightScore(0, 1.0, 0.0)
    with pytest.raises(ValueError):
        FightOrFlightScore(2, 0.2, 0.5)
    s = FightOrFlightScore.from_components([1.0, 0.0], [0.0, 0.5])
    assert (s.n, s.f_plus, s.f_minus) == (2, 0.75, 0.0)


# --------------------------------------------------------------------------
# scenarios and running


def test_heading_counts():
    assert get_task("turn_to_light").runs == 4
    assert get_task("move_to_light").runs == 5
    assert get_task("attack").runs == 4 + 1
    assert get_task("turn_from_light").runs == 13
    assert len({p.heading_deg for p in get_task("turn_from_light").scenarios.placements}) == 13


def test_unknown_task_raises():
    with pytest.raises(KeyError):
        get_task("juggle")


def test_scenario_averaging_is_permutation_invariant():
    hs = [45, 135, -135, -45]
    trajs = [still(heading=0.3 * i, light=light_at(h)) for i, h in enumerate(hs)]
    base = fitness_turn_to_light(trajs)
    assert fitness_turn_to_light(trajs[::-1]) == pytest.approx(base, abs=1e-15)
    assert fitness_turn_from_light(trajs[1:] + trajs[:1]) == pytest.approx(fitness_turn_from_light(trajs))


@pytest.mark.parametrize("task", sorted(TASKS))
def test_every_task_runs_and_is_bounded(task):
    c = express(two_segment_genome())
    res = run_task(task, c, steps=120, keep_trajectories=True)
    assert 0.0 <= res.fitness <= 1.0
    assert res.evaluations == get_task(task).runs == len(res.trajectories) == len(res.labels)
    again = run_task(task, c, steps=120)
    assert again.fitness == res.fitness and again.components == res.components


def test_run_task_exports_one_file_per_scenario(tmp_path):
    c = express(two_segment_genome())
    run_task("turn_to_light", c, steps=10, export_dir=tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert len(names) == 4 and names[0].startswith("turn_to_light_00_vulnerable_45")
