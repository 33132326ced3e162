"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line with the measured
numbers, then asserts.  Run the file directly to print all lines without
pytest:  ``python3 tests/test_acceptance.py``.
"""
from __future__ import annotations

import math
import os
import sys
import time
from contextlib import nullcontext

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from dynbins import metrics  # noqa: E402
from dynbins.cli import main as cli_main  # noqa: E402
from dynbins.environments import Environment, EnvironmentSpec, c_stat  # noqa: E402
from dynbins.experts import SleepingExperts  # noqa: E402
from dynbins.groups import family_from_name  # noqa: E402
from dynbins.harness import SweepSpec, replica_seed, run_many, run_sweep  # noqa: E402
from dynbins.learner import RunConfig, run  # noqa: E402
from dynbins.solver import constraint_rows, solve_forecast  # noqa: E402

from oracles import anh_regret_run, c_stat_grid, calerr_triple_loop, game_value_grid, mcerr_triple_loop  # noqa: E402

pytestmark = pytest.mark.acceptance

REPLICAS = 20
MASTER_SEED = 0
STATIONARY = EnvironmentSpec("piecewise_bernoulli", {"means": [0.37]})


def report(capsys, n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    with capsys.disabled() if capsys is not None else nullcontext():
        print(line, flush=True)


# -- 1 ---------------------------------------------------------------------


def random_instance(rng, n):
    leaves = [(0, 0)]
    while len(leaves) < n:
        j = int(rng.integers(len(leaves)))
        d, k = leaves.pop(j)
        leaves[j:j] = [(d + 1, 2 * k), (d + 1, 2 * k + 1)]
    widths = np.array([2.0 ** -d for d, _ in leaves])
    mids = np.array([(k + 0.5) * 2.0 ** -d for d, k in leaves])
    b = rng.random(n)
    a = rng.uniform(-1.0, 1.0, n) * b
    return mids, widths, a, b


def criterion_1():
    start = time.perf_counter()
    rng = np.random.default_rng(MASTER_SEED)
    worst_value, worst_gap, small = -math.inf, 0.0, 0
    for _ in range(10_000):
        n = int(rng.integers(1, 65))
        mids, widths, a, b = random_instance(rng, n)
        fc = solve_forecast(mids, widths, a, b)
        c0, c1 = constraint_rows(mids, widths, a, b)
        pi = fc.dense(n)
        worst_value = max(worst_value, float(c0 @ pi), float(c1 @ pi))
        if n <= 8:
            small += 1
            worst_gap = max(worst_gap, abs(fc.value - game_value_grid(mids, widths, a, b)))
    elapsed = time.perf_counter() - start
    ok = worst_value <= 1e-9 and worst_gap <= 2e-3 and elapsed < 30
    return ok, (f"max constraint value {worst_value:.3e} (<= 1e-9), grid gap {worst_gap:.2e} on {small} "
                f"small instances (<= 2e-3), {elapsed:.1f}s (< 30s)")


# -- 2 ---------------------------------------------------------------------


def split_rule_configs(count=100, T=2**12):
    envs = [
        (EnvironmentSpec("piecewise_bernoulli", {"means": [0.37]}), "all_ones"),
        (EnvironmentSpec("piecewise_bernoulli", {"means": [0.1, 0.9, 0.5]}), "all_ones"),
        (EnvironmentSpec("drifting", {"kind": "sinusoid", "amplitude": 0.3, "period": 1024}), "all_ones"),
        (EnvironmentSpec("drifting", {"kind": "random_walk", "step": 0.02}), "all_ones"),
        (EnvironmentSpec("ordered_grid_walsh", {"m": 4}), "walsh:4"),
        (EnvironmentSpec("adaptive", {"strategy": "anti_mean"}), "all_ones"),
    ]
    out = []
    for i in range(count):
        spec, fam = envs[i % len(envs)]
        seed = replica_seed(MASTER_SEED + 2, i)
        out.append(RunConfig(T=T, environment=spec, family=fam, learner_seed=seed, env_seed=seed + 1))
    return out


def criterion_2():
    start = time.perf_counter()
    bad = []
    for cfg in split_rule_configs():
        tr = run(cfg)
        inv = metrics.check_invariants(tr)
        for key in ("partition", "split_overshoot", "max_depth", "lifetime"):
            if not inv.checks[key]:
                bad.append((cfg.environment.variant, key, inv.details.get(key, "")))
    elapsed = time.perf_counter() - start
    ok = not bad and elapsed < 300
    return ok, f"{len(bad)} violations over 100 runs at T=4096, {elapsed:.1f}s (< 300s)" + (f"; first {bad[0]}" if bad else "")


# -- 3 ---------------------------------------------------------------------


def _awake_pattern(rng, kind, T, n):
    aw = np.ones((T, n), dtype=bool)
    if kind == "blocks":
        for e in range(1, n):
            lo = int(rng.integers(0, T - 10))
            hi = int(rng.integers(lo + 5, T + 1))
            aw[:, e] = False
            aw[lo:hi, e] = True
    elif kind == "periodic":
        for e in range(1, n):
            p = int(rng.integers(2, 6))
            aw[:, e] = (np.arange(T) % p) == (e % p)
    elif kind == "random":
        aw = rng.random((T, n)) < 0.6
        aw[:, 0] = True
    return aw


def sleeping_instance(k):
    """Hand-built instance k: awake pattern and loss style cycle through fixed menus.

    The adaptive style puts loss 1 on whichever awake expert currently holds
    the most weight, so it needs the learner in the loop.
    """
    rng = np.random.default_rng(1000 + k)
    T = int(rng.integers(50, 201))
    n = int(rng.integers(2, 9))
    aw = _awake_pattern(rng, ("full", "blocks", "periodic", "random")[k % 4], T, n)
    style = ("adaptive", "switching", "random01", "late_best", "alternating")[k % 5]
    priors = np.full(n, 1.0 / n)
    se = SleepingExperts(priors)
    losses = np.zeros((T, n))
    lhat = np.zeros(T)
    best = int(rng.integers(n))
    for t in range(T):
        if style == "adaptive":
            w = se.weights(aw[t])
            row = np.where(w >= w[aw[t]].max() - 1e-15, 1.0, 0.0)
            row[best] = min(row[best], 0.5)
        elif style == "switching":
            row = np.ones(n)
            row[(best + (4 * t) // T) % n] = 0.0
        elif style == "random01":
            row = rng.integers(0, 2, n).astype(float)
        elif style == "late_best":
            row = np.full(n, 0.5)
            row[best] = 1.0 if t < T // 2 else 0.0
        else:
            row = np.where((np.arange(n) + t) % 2 == 0, 1.0, 0.0)
        losses[t] = row
        lhat[t] = se.update(row, aw[t])
    return losses, aw, priors, lhat


def criterion_3():
    start = time.perf_counter()
    worst, mismatch = 0.0, 0.0
    for k in range(50):
        losses, aw, priors, lhat = sleeping_instance(k)
        T, n = losses.shape
        ref_lhat, _, _ = anh_regret_run(losses, aw, priors)
        mismatch = max(mismatch, float(np.abs(ref_lhat - lhat).max()))
        L = math.log(math.e * T * n)
        for e in range(n):
            # brute force over the expert's awake rounds
            regret = 0.0
            rel = 0.0
            for t in range(T):
                if aw[t, e]:
                    regret += lhat[t] - losses[t, e]
                    rel += abs(lhat[t] - losses[t, e])
            worst = max(worst, regret / (math.sqrt(rel * L) + L))
    elapsed = time.perf_counter() - start
    ok = worst <= 10.0 and mismatch <= 1e-9 and elapsed < 60
    return ok, (f"worst regret / (sqrt(L~ L) + L) = {worst:.3f} (<= 10) over 50 instances, "
                f"oracle mismatch {mismatch:.1e}, {elapsed:.1f}s (< 60s)")


# -- 4 ---------------------------------------------------------------------


def criterion_4():
    start = time.perf_counter()
    base = RunConfig(T=2**10, environment=STATIONARY)
    rep = run_sweep(SweepSpec("T", (2**10, 2**11, 2**12, 2**13, 2**14), REPLICAS, base, master_seed=MASTER_SEED))
    fit = rep.fit("calerr")
    elapsed = time.perf_counter() - start
    ok = 0.35 <= fit.exponent <= 0.65 and elapsed < 900
    med = ", ".join(f"{m:.0f}" for m in rep.medians("calerr"))
    return ok, (f"exponent {fit.exponent:.3f} +/- {fit.stderr:.3f} (in [0.35, 0.65]); medians {med}; "
                f"{elapsed:.0f}s (< 900s)")


# -- 5 ---------------------------------------------------------------------


def nondecreasing_with_one_inversion(values) -> bool:
    inversions = sum(b < a for a, b in zip(values, values[1:]))
    return inversions <= 1


def criterion_5():
    start = time.perf_counter()
    base = RunConfig(T=2**14, environment=EnvironmentSpec("piecewise_bernoulli", {"means": [0.2, 0.8]}))
    rep = run_sweep(SweepSpec("J", (1, 2, 4, 8, 16), REPLICAS, base, master_seed=MASTER_SEED))
    med = rep.medians("calerr")
    fit = rep.fit("calerr")
    elapsed = time.perf_counter() - start
    mono = nondecreasing_with_one_inversion(med)
    ok = mono and 0.3 <= fit.exponent <= 0.7 and elapsed < 1200
    return ok, (f"medians {', '.join(f'{m:.0f}' for m in med)} (monotone up to one inversion: {mono}); "
                f"exponent {fit.exponent:.3f} (in [0.3, 0.7]); {elapsed:.0f}s (< 1200s)")


# -- 6 ---------------------------------------------------------------------

DRIFT_AMPLITUDES = (0.03, 0.12, 0.48)


def drift_spec(T, amplitude):
    # one full period over the horizon, so the mean drifts slowly across its range
    return EnvironmentSpec("drifting", {"kind": "sinusoid", "amplitude": amplitude, "period": T, "center": 0.5})


def criterion_6():
    start = time.perf_counter()
    T = 2**13
    seeds = [replica_seed(MASTER_SEED, r) for r in range(REPLICAS)]
    cstats, medians = [], []
    for amp in DRIFT_AMPLITUDES:
        spec = drift_spec(T, amp)
        cstats.append(Environment(spec, T, 0).c_stat())
        res = run_many([RunConfig(T=T, environment=spec, learner_seed=s, env_seed=s + 1) for s in seeds])
        medians.append(float(np.median([r.calerr for r in res])))
    elapsed = time.perf_counter() - start
    ratios = [c / cstats[0] for c in cstats]
    ratio_ok = all(abs(r - want) <= 1e-6 * want for r, want in zip(ratios, (1, 4, 16)))
    mono = all(b >= a for a, b in zip(medians, medians[1:]))
    predicted = [(T * c) ** (1 / 3) for c in cstats]
    ok = ratio_ok and mono and elapsed < 900
    return ok, (f"C_stat ratios {', '.join(f'{r:.3f}' for r in ratios)}; median CalErr "
                f"{', '.join(f'{m:.0f}' for m in medians)} vs (T C_stat)^(1/3) "
                f"{', '.join(f'{p:.0f}' for p in predicted)} (monotone: {mono}); {elapsed:.0f}s (< 900s)")


# -- 7 ---------------------------------------------------------------------


def criterion_7():
    start = time.perf_counter()
    base = RunConfig(T=2**13, environment=EnvironmentSpec("ordered_grid_walsh", {"m": 2}), family="walsh:2")
    rep = run_sweep(SweepSpec("m", (2, 4, 8), REPLICAS, base, master_seed=MASTER_SEED))
    med = rep.medians("mcerr")
    elapsed = time.perf_counter() - start
    mono = all(b >= a for a, b in zip(med, med[1:]))
    ok = mono and elapsed < 1200
    return ok, f"median MCerr {', '.join(f'{m:.0f}' for m in med)} for m = 2, 4, 8 (nondecreasing: {mono}); {elapsed:.0f}s (< 1200s)"


# -- 8 ---------------------------------------------------------------------


def criterion_8():
    start = time.perf_counter()
    T = 2**14
    base = RunConfig(T=T, environment=STATIONARY)
    rep = run_sweep(SweepSpec("T", (T,), REPLICAS, base, baseline="auto", master_seed=MASTER_SEED))
    dyn = rep.medians("calerr")[0]
    grid = rep.medians("baseline_calerr")[0]
    elapsed = time.perf_counter() - start
    ok = dyn <= grid and elapsed < 600
    return ok, f"dynamic median CalErr {dyn:.1f} vs fixed_grid(26) {grid:.1f} (need <=); {elapsed:.0f}s (< 600s)"


# -- 9 ---------------------------------------------------------------------


def small_transcript_configs(count=100):
    rng = np.random.default_rng(MASTER_SEED + 9)
    out = []
    for i in range(count):
        T = int(rng.integers(1, 65))
        kind = i % 3
        if kind == 0:
            means = [float(q) for q in np.round(rng.random(int(rng.integers(1, 4))), 3)]
            env, fam = EnvironmentSpec("piecewise_bernoulli", {"means": means}), "all_ones"
            if len(means) > T:
                env = EnvironmentSpec("piecewise_bernoulli", {"means": means[:1]})
        elif kind == 1:
            env, fam = EnvironmentSpec("ordered_grid_walsh", {"m": 2}), "walsh:2"
        else:
            env, fam = EnvironmentSpec("adaptive", {"strategy": "anti_mean"}), "all_ones"
        out.append(RunConfig(T=T, environment=env, family=fam, learner_seed=i, env_seed=1000 + i))
    return out


def criterion_9():
    start = time.perf_counter()
    mismatches = 0
    for cfg in small_transcript_configs():
        fam = family_from_name(cfg.family)
        tr = run(cfg, fam)
        table = metrics.mcerr(tr, fam)
        p, y = tr.p_values.tolist(), tr.y.tolist()
        if table.mcerr != mcerr_triple_loop(p, y, tr.contexts, fam.groups):
            mismatches += 1
        if table.calerr != calerr_triple_loop(p, y):
            mismatches += 1
    rng = np.random.default_rng(MASTER_SEED + 99)
    worst = 0.0
    for _ in range(100):
        q = rng.random(int(rng.integers(1, 60)))
        worst = max(worst, abs(c_stat(q) - c_stat_grid(q)))
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and worst <= 1e-4 and elapsed < 60
    return ok, (f"{mismatches} metric mismatches on 100 transcripts (T <= 64, exact); c_stat grid gap "
                f"{worst:.1e} (<= 1e-4); {elapsed:.1f}s (< 60s)")


# -- 10 --------------------------------------------------------------------


def criterion_10(tmp_dir):
    import json
    from pathlib import Path

    start = time.perf_counter()
    tmp = Path(tmp_dir)
    cfg = tmp / "cfg.json"
    cfg.write_text(json.dumps({
        "run": {"T": 1024, "environment": {"variant": "piecewise_bernoulli", "means": [0.2, 0.8]},
                "record_level": "full"},
        "sweep": {"axis": "T", "values": [256, 512, 1024], "replicas": 2, "baseline": "auto", "master_seed": 12345},
    }))
    outs = []
    for name in ("first", "second"):
        out = tmp / name
        code = cli_main(["sweep", "--config", str(cfg), "--out", str(out), "--transcripts", "--no-plots"])
        assert code == 0
        outs.append(out)
    a, b = outs
    same_csv = (a / "report.csv").read_bytes() == (b / "report.csv").read_bytes()
    names = sorted(p.name for p in (a / "transcripts").iterdir())
    same_tr = names == sorted(p.name for p in (b / "transcripts").iterdir()) and all(
        (a / "transcripts" / n).read_bytes() == (b / "transcripts" / n).read_bytes() for n in names
    )
    elapsed = time.perf_counter() - start
    ok = same_csv and same_tr and len(names) == 6 and elapsed < 120
    return ok, f"report.csv identical: {same_csv}; {len(names)} transcripts identical: {same_tr}; {elapsed:.1f}s (< 120s)"


# -- pytest entry points ---------------------------------------------------


def _check(capsys, n, result):
    ok, detail = result
    report(capsys, n, ok, detail)
    assert ok, detail


def test_criterion_1_feasibility(capsys):
    _check(capsys, 1, criterion_1())


def test_criterion_2_split_rule(capsys):
    _check(capsys, 2, criterion_2())


def test_criterion_3_wrapper_regret(capsys):
    _check(capsys, 3, criterion_3())


def test_criterion_4_stochastic_rate(capsys):
    _check(capsys, 4, criterion_4())


def test_criterion_5_segment_dependence(capsys):
    _check(capsys, 5, criterion_5())


def test_criterion_6_drifting_means(capsys):
    _check(capsys, 6, criterion_6())


def test_criterion_7_walsh_direction(capsys):
    _check(capsys, 7, criterion_7())


def test_criterion_8_adaptivity_gap(capsys):
    _check(capsys, 8, criterion_8())


def test_criterion_9_metric_oracles(capsys):
    _check(capsys, 9, criterion_9())


def test_criterion_10_determinism(capsys, tmp_path):
    _check(capsys, 10, criterion_10(tmp_path))


if __name__ == "__main__":
    import tempfile

    checks = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
              criterion_6, criterion_7, criterion_8, criterion_9]
    failed = 0
    for i, fn in enumerate(checks, start=1):
        ok, detail = fn()
        report(None, i, ok, detail)
        failed += not ok
    with tempfile.TemporaryDirectory() as d:
        ok, detail = criterion_10(d)
    report(None, 10, ok, detail)
    failed += not ok
    sys.exit(1 if failed else 0)
