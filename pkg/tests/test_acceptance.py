"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

The lines are printed in the "acceptance criteria" section at the end of the
pytest run.  Optimizer budgets are module constants; set
SCMAPPER_FULL_ACCEPTANCE=1 to run criteria 4 and 5 with the full default
OptRunConfig (three DE restarts per outer step) instead.
"""
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import full_acceptance
from oracles import scalar_threshold
from scmapper.channel import IdenticalFamily, PamFamily
from scmapper.density import ThresholdConfig, run_de, threshold
from scmapper.ensemble import EnsembleParams, design_rate, layout
from scmapper.experiments import gap
from scmapper.mapper import flip_columns, input_eps, rotate_columns, uniform, validate
from scmapper.optimizer import OptRunConfig, iterative_threshold_opt, objective
from strategies import random_valid_mapper

PAM4 = PamFamily(2)
CFG = ThresholdConfig()  # delta 1e-4, p_tar 1e-6, l_max 5000, linear scan

# one DE restart per outer step, three independently seeded runs of the whole routine
OPT_BUDGET = OptRunConfig(restarts=1)
OPT_SEEDS = (0, 1, 2)
TREND_BUDGET = OptRunConfig(restarts=1, generations=60)


def opt_budget(seed):
    base = OptRunConfig() if full_acceptance() else OPT_BUDGET
    return replace(base, seed=seed)


def best_of_seeds(p, stop):
    """Run the optimizer per seed until ``stop(result)`` holds; return all results."""
    runs = []
    for seed in OPT_SEEDS:
        res = iterative_threshold_opt(p, PAM4, opt_budget(seed))
        runs.append(res)
        if stop(res):
            break
    return runs


def test_c01_design_rate(criterion):
    R = design_rate(EnsembleParams(4, 8, 20, 2))
    ok = abs(R - 0.4752) <= 5e-5
    criterion("1 design rate", ok, f"R = {R:.6f} (target 0.4752 +- 5e-5)")
    assert ok


def test_c02_circular_uniform_threshold(criterion):
    t0 = time.perf_counter()
    cfg = ThresholdConfig(search="bisection")
    got = {w: threshold(uniform(2, 20), PAM4, EnsembleParams(4, 8, 20, w, "circular"), cfg).eps_bar_star
           for w in (2, 4)}
    dt = time.perf_counter() - t0
    ok = all(abs(v - 0.3834) <= 2e-4 for v in got.values()) and dt < 60
    criterion("2 circular uniform threshold", ok, f"w=2: {got[2]}, w=4: {got[4]} (target 0.3834 +- 2e-4), "
                                                  f"{dt:.1f} s")
    assert ok


def test_c03_two_sided_uniform_thresholds(criterion):
    target = {2: 0.497, 4: 0.494}
    got = {(L, w): threshold(uniform(2, L), PAM4, EnsembleParams(4, 8, L, w), CFG).eps_bar_star
           for w in (2, 4) for L in range(15, 41)}
    bad = {k: v for k, v in got.items() if abs(v - target[k[1]]) > 1e-3}
    span = {w: (min(v for (L, ww), v in got.items() if ww == w), max(v for (L, ww), v in got.items() if ww == w))
            for w in (2, 4)}
    detail = (f"w=2 in [{span[2][0]}, {span[2][1]}] (target 0.497 +- 1e-3), "
              f"w=4 in [{span[4][0]}, {span[4][1]}] (target 0.494 +- 1e-3); {len(bad)}/{len(got)} points outside")
    criterion("3 two-sided uniform thresholds", not bad, detail)
    assert not bad, detail


def test_c04_smoke_L10(criterion):
    p = EnsembleParams(4, 8, 10, 2)
    t0 = time.perf_counter()
    res = iterative_threshold_opt(p, PAM4, OptRunConfig(generations=50))
    dt = time.perf_counter() - t0
    ok = res.threshold > res.uniform_threshold and dt < 600 and validate(res.best).ok
    criterion("4s optimizer smoke (L=10, 50 generations)", ok,
              f"{res.uniform_threshold} -> {res.threshold} in {dt:.0f} s (needs strict gain, < 600 s)")
    assert ok


@pytest.fixture(scope="module")
def two_sided_runs():
    p = EnsembleParams(4, 8, 20, 2)
    return p, best_of_seeds(p, lambda r: r.threshold >= 0.5 and r.threshold - r.uniform_threshold >= 0.003)


def test_c04_two_sided_gain(criterion, two_sided_runs):
    p, runs = two_sided_runs
    passed = [r for r in runs if r.threshold >= 0.5 and r.threshold - r.uniform_threshold >= 0.003]
    best = max(runs, key=lambda r: r.threshold)
    desc = ", ".join(f"seed {r.seed}: {r.threshold} ({r.wall_time:.0f} s)" for r in runs)
    criterion("4 two-sided (4,8,20,2) optimizer", bool(passed),
              f"uniform {best.uniform_threshold}; {desc} (needs >= 0.500 and gain >= 0.003 for one seed)")
    for r in runs:
        assert validate(r.best).ok
        assert r.threshold > r.uniform_threshold
    assert passed


@pytest.fixture(scope="module")
def circular_runs():
    p = EnsembleParams(4, 8, 20, 2, "circular")
    return p, best_of_seeds(p, lambda r: r.threshold >= 0.47 and r.threshold - r.uniform_threshold >= 0.086)


def wave_fronts(A, p, eps_bar):
    traj = run_de(A, PAM4(eps_bar), p, CFG, record_trajectory=True).trajectory
    hit = [(l, float(row.min()), float(row.max())) for l, row in enumerate(traj)
           if row.min() < CFG.p_tar and row.max() > 0.3]
    return hit


def test_c05_circular_gain_and_wave(criterion, circular_runs):
    p, runs = circular_runs
    best = max(runs, key=lambda r: r.threshold)
    hit = wave_fronts(best.best, p, best.threshold)
    gain = best.threshold - best.uniform_threshold
    ok = best.threshold >= 0.47 and gain >= 0.086 and bool(hit)
    desc = ", ".join(f"seed {r.seed}: {r.threshold} ({r.wall_time:.0f} s)" for r in runs)
    wave = f"first localized iteration {hit[0][0]}" if hit else "no localized region seen"
    criterion("5 circular (4,8,20,2) optimizer + wave", ok,
              f"uniform {best.uniform_threshold}; {desc}; gain {gain:.4f} (needs >= 0.47, >= 0.086); {wave}")
    assert validate(best.best).ok
    assert ok


def test_c06_monotone_de(criterion):
    rng = np.random.default_rng(2024)
    worst_inc, worst_excess = 0.0, 0.0
    for k in range(100):
        L = int(rng.integers(4, 25))
        w = int(rng.integers(1, 5))
        circ = bool(rng.integers(0, 2)) and w <= L
        p = EnsembleParams(4, 8, L, w, "circular" if circ else "two_sided")
        A = random_valid_mapper(rng, 2, L)
        cs = PAM4(float(rng.uniform(0.05, 0.95)))
        res = run_de(A, cs, p, ThresholdConfig(l_max=500), record_trajectory=True)
        tr = res.trajectory
        data = tr[:, layout(p).data_slice]
        worst_inc = max(worst_inc, float(np.diff(tr, axis=0).max(initial=0.0)))
        worst_excess = max(worst_excess, float((data[1:] - input_eps(A, cs)).max(initial=0.0)))
    ok = worst_inc <= 0.0 and worst_excess <= 0.0
    criterion("6 monotone DE", ok, f"100 mappers: max step increase {worst_inc:.3g}, "
                                   f"max p_j - eps_j {worst_excess:.3g}")
    assert ok


def test_c07_symmetry(criterion):
    rng = np.random.default_rng(7)
    two = EnsembleParams(4, 8, 10, 2)
    circ = EnsembleParams(4, 8, 10, 2, "circular")
    mismatches = []
    for k in range(20):
        A = random_valid_mapper(rng, 2, 10)
        t = threshold(A, PAM4, two, CFG).eps_bar_star
        tf = threshold(flip_columns(A), PAM4, two, CFG).eps_bar_star
        s = int(rng.integers(1, 10))
        tc = threshold(A, PAM4, circ, CFG).eps_bar_star
        tr = threshold(rotate_columns(A, s), PAM4, circ, CFG).eps_bar_star
        cs = PAM4(max(t - 0.01, CFG.delta))
        ls = (objective(A, cs, two, CFG), objective(flip_columns(A), cs, two, CFG))
        csc = PAM4(max(tc - 0.01, CFG.delta))
        lc = (objective(A, csc, circ, CFG), objective(rotate_columns(A, s), csc, circ, CFG))
        if t != tf or tc != tr or ls[0] != ls[1] or lc[0] != lc[1]:
            mismatches.append(k)
    ok = not mismatches
    criterion("7 symmetry", ok, f"20 mappers, flip (two-sided) and rotate (circular): "
                                f"{len(mismatches)} mismatches in threshold or l_s")
    assert ok


def test_c08_uncoupled_oracle(criterion):
    p = EnsembleParams(3, 6, 1, 1)
    got = threshold(uniform(1, 1), IdenticalFamily(1), p, ThresholdConfig(search="bisection")).eps_bar_star
    ref = scalar_threshold(3, 6)
    ok = abs(got - 0.4294) <= CFG.delta and got == ref
    criterion("8 uncoupled (3,6) oracle", ok, f"package {got}, scalar oracle {ref} (target 0.4294 +- 1e-4)")
    assert ok


def test_c09_channel_model(criterion):
    fams = {m: PamFamily(m) for m in (2, 3)}
    grid = np.linspace(0.0, 1.0, 100)
    worst, monotone, ends = 0.0, True, True
    for m, fam in fams.items():
        E = fam.eps_matrix(grid)
        worst = max(worst, float(np.abs(E.mean(axis=1) - grid).max()))
        monotone &= bool(np.all(np.diff(E, axis=0) >= 0))
        ends &= bool(np.all(fam(0.0).eps == 0.0) and np.all(fam(1.0).eps == 1.0))
    ok = worst <= 1e-9 and monotone and ends
    criterion("9 channel model", ok, f"max |mean(eps) - eps_bar| = {worst:.2e}, monotone {monotone}, "
                                     f"exact endpoints {ends} (m = 2, 3)")
    assert ok


def test_c10_gap_arithmetic(criterion):
    a, b = gap(0.4752, 0.5024), gap(0.5, 0.4772)
    ok = round(a, 4) == 0.0224 and round(b, 4) == 0.0228 and gap(0.5, 0.5) == 0.0
    criterion("10 gap arithmetic", ok, f"{a:.4f}, {b:.4f}")
    assert ok


def test_trend_note(criterion):
    gains = {}
    for boundary in ("two_sided", "circular"):
        for L in (10, 20, 30):
            p = EnsembleParams(4, 8, L, 2, boundary)
            res = iterative_threshold_opt(p, PAM4, TREND_BUDGET)
            gains[boundary, L] = round(res.threshold - res.uniform_threshold, 4)
    two = [gains["two_sided", L] for L in (10, 20, 30)]
    circ = [gains["circular", L] for L in (10, 20, 30)]
    ok = two[0] > two[1] > two[2] and circ[0] < circ[1] < circ[2]
    criterion("note trends L in {10,20,30}", ok,
              f"two-sided gains {two} (should shrink), circular gains {circ} (should grow); reduced budget")
    assert ok
