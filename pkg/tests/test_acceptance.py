"""Acceptance criteria, one test each.

Every test prints a single ``PASS`` or ``FAIL`` line with the measured
numbers and runtime; the assertion runs after the line is printed. Run
``python3 tests/test_acceptance.py`` for the lines alone, or
``pytest tests/test_acceptance.py -v``.
"""

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from tierfl.analytics import StragglerParams, straggler_prob, straggler_prob_bound
from tierfl.cli import main
from tierfl.config import reference_config
from tierfl.engine import run_experiment
from tierfl.latency import ResourceProfile, client_latency
from tierfl.model import ClientUpdate, ModelParams, aggregate, loss, loss_and_grad, param_count
from tierfl.scheduler import AdaptiveState, adaptive_step, change_probs, select_vanilla
from tierfl.tiering import TierTable, assign_tiers, profile_clients

ROOT = Path(__file__).resolve().parent.parent
STATIC_PRESETS = ("slow", "uniform", "random", "fast", "fast1", "fast2", "fast3")


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail, started, budget_s):
        took = time.perf_counter() - started
        ok = ok and took < budget_s
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail} [{took:.1f}s / {budget_s:.0f}s]")
        return ok

    return emit


def test_criterion_1_straggler_probability(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    trials = 100_000
    hits = 0
    for _ in range(trials):
        sel = select_vanilla(range(50), 5, rng)
        hits += sel.clients[0] < 10  # clients 0..9 form the slowest level; tuples are sorted
    freq = hits / trials
    exact = straggler_prob(StragglerParams(50, 5, 10))
    violations = 0
    grid = [(k, c, s) for k in (5, 10, 20, 50, 100) for c in (1, 2, 3, 5) for s in (0, 1, 2, 4)]
    grid += [(k, c, s) for k in (200, 500, 1000, 5000, 10**6) for c in (1, 5, 10, 20, 50, 100, 200, 400)
             for s in (1, 10, 100, 150, 190)]
    grid = [g for g in grid if g[1] <= g[0] and g[2] < g[0]][:200]
    for k, c, s in grid:
        p = StragglerParams(k, c, s)
        violations += straggler_prob_bound(p) > straggler_prob(p)
    ok = abs(freq - 0.68944) <= 0.01 and abs(exact - 0.68944) < 5e-6 and violations == 0 and len(grid) == 200
    assert report(1, ok, f"MC freq {freq:.5f} vs {exact:.5f}; bound violations {violations}/{len(grid)}", t0, 10)


def test_criterion_2_estimator_fidelity(report):
    t0 = time.perf_counter()
    base = reference_config()
    rows = {}
    for name in STATIC_PRESETS:
        res = run_experiment(base.with_overrides(policy=name))
        lat = np.array(res.tier_table.latencies())
        p = np.array(res.config.policy.probs)
        # spread of the total under the tier draw alone, relative to the estimate
        sd = math.sqrt(float(p @ lat**2 - (p @ lat) ** 2) * base.rounds) / res.estimate * 100
        rows[name] = (res.mape, sd)
    one_hot_exact = rows["slow"][0] == 0.0 and rows["fast"][0] == 0.0
    ok = all(m <= 6.0 for m, _ in rows.values()) and one_hot_exact
    detail = ", ".join(f"{n} {m:.2f}% (sd {s:.1f})" for n, (m, s) in rows.items())
    assert report(2, ok, f"MAPE {detail}; one-hot exact {one_hot_exact}", t0, 60)


def test_criterion_3_wall_clock_speedup(report):
    t0 = time.perf_counter()
    base = reference_config()
    wall = {p: run_experiment(base.with_overrides(policy=p)).total_wall_clock for p in ("vanilla", "uniform", "fast")}
    up_u, up_f = wall["vanilla"] / wall["uniform"], wall["vanilla"] / wall["fast"]
    ok = up_u >= 2 and up_f >= 4
    assert report(3, ok, f"vanilla {wall['vanilla']:.1f}s, uniform x{up_u:.2f}, fast x{up_f:.2f}", t0, 300)


def test_criterion_4_accuracy_parity(report):
    t0 = time.perf_counter()
    gaps = []
    for seed in (2024, 1, 2):
        base = reference_config(seed=seed)
        van = run_experiment(base.with_overrides(policy="vanilla")).final_accuracy
        uni = run_experiment(base.with_overrides(policy="uniform")).final_accuracy
        gaps.append((van, uni))
    van_mean = np.mean([v for v, _ in gaps])
    uni_mean = np.mean([u for _, u in gaps])
    gap_pp = abs(van_mean - uni_mean) * 100
    ok = gap_pp <= 4.0
    assert report(4, ok, f"vanilla {van_mean:.4f} vs uniform {uni_mean:.4f}, gap {gap_pp:.2f} pp", t0, 600)


def test_criterion_5_adaptive_invariants(report):
    t0 = time.perf_counter()
    m, c = 5, 3
    table = TierTable({cl: cl // 4 + 1 for cl in range(20)}, {t: float(t) for t in range(1, m + 1)}, m)
    rng = np.random.default_rng(5)
    acc_rng = np.random.default_rng(6)
    checked = violations = 0
    for on_exhaust in ("reset", "vanilla"):
        state = AdaptiveState.start(m, 60, 10, gamma=1.0, on_exhaust=on_exhaust)  # 12 credits per tier
        acc = acc_rng.uniform(0.2, 0.6, m)
        for r in range(400):
            acc = np.clip(acc + acc_rng.normal(0, 0.02, m), 0, 1)
            before = state
            sel, state = adaptive_step(state, r, list(acc), table, c, rng)
            bad = min(state.credits.values()) < 0
            bad |= abs(math.fsum(state.probs) - 1.0) > 1e-9
            if sel.tier is not None:
                # without a reset in this step the chosen tier must have had credit
                bad |= state.resets == before.resets and before.credits[sel.tier] <= 0
            if state.updates > before.updates:
                checked += 1
                low = np.flatnonzero(acc == acc.min())
                if len(low) == 1:
                    bad |= state.probs[low[0]] != max(state.probs)
                    bad |= state.probs != change_probs(list(acc))
            violations += bool(bad)
    # engine-level run: credits in every record stay non-negative
    res = run_experiment(reference_config(rounds=200).with_overrides(policy="adaptive"))
    violations += sum(min(rec.credits) < 0 or abs(math.fsum(rec.probs) - 1) > 1e-9 for rec in res.records)
    ok = violations == 0 and checked > 0
    assert report(5, ok, f"{violations} violations, {checked} probability updates checked", t0, 60)


def _numeric_grad(p, x, y, h=1e-6):
    g = np.zeros_like(p.values)
    for i in range(len(g)):
        up, dn = p.values.copy(), p.values.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (loss(ModelParams(up, p.dims), x, y) - loss(ModelParams(dn, p.dims), x, y)) / (2 * h)
    return g


def test_criterion_6_model_core(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    worst_grad = 0.0
    for i in range(100):
        dims = (4, 3) if i % 2 else (4, 5, 3)
        p = ModelParams(rng.normal(scale=0.5, size=param_count(dims)), dims)
        x = rng.normal(size=(8, dims[0]))
        y = rng.integers(0, dims[-1], 8)
        g = loss_and_grad(p, x, y)[1]
        num = _numeric_grad(p, x, y)
        worst_grad = max(worst_grad, float(np.linalg.norm(g - num) / max(np.linalg.norm(num), 1e-12)))
    worst_agg = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 10))
        ups = [ClientUpdate(ModelParams(rng.normal(size=8), (3, 2)), int(rng.integers(1, 1000)), j) for j in range(n)]
        total = sum(u.sample_count for u in ups)
        oracle = [math.fsum(float(u.params.values[k]) * u.sample_count for u in ups) / total for k in range(8)]
        worst_agg = max(worst_agg, float(np.max(np.abs(aggregate(ups).values - oracle))))
    ok = worst_grad <= 1e-4 and worst_agg <= 1e-12
    assert report(6, ok, f"worst gradient rel err {worst_grad:.2e}, worst aggregate err {worst_agg:.2e}", t0, 10)


def test_criterion_7_tiering(report):
    t0 = time.perf_counter()
    shares = (4.0, 2.0, 1.0, 0.5, 0.1)
    profiles = {cl: ResourceProfile(shares[cl // 10], 0.5, 0.00625, 0.05) for cl in range(50)}
    # five extra clients whose every attempt exceeds t_max = 60 s
    profiles.update({cl: ResourceProfile(0.01, 0.5, 0.00625, 0.05) for cl in range(50, 55)})

    def fn(cl, r):
        return client_latency(profiles[cl], 200, np.random.default_rng([7, cl, r]))

    prof = profile_clients(range(55), 5, 60.0, fn)
    table = assign_tiers(prof, 5)
    recovered = all(table.assignment[cl] == cl // 10 + 1 for cl in range(50))
    dropouts_ok = prof.dropouts == set(range(50, 55))
    rng = np.random.default_rng(8)
    size_ok = True
    for n in range(5, 80):
        lat = dict(enumerate(rng.uniform(1, 30, n)))
        for m in (1, 2, 3, 5, min(n, 7)):
            sizes = assign_tiers(profile_clients(range(n), 1, 100.0, lambda cl, r: lat[cl]), m).sizes().values()
            size_ok &= max(sizes) - min(sizes) <= 1 and sum(sizes) == n
    ok = recovered and dropouts_ok and size_ok
    assert report(7, ok, f"groups recovered {recovered}, dropouts exact {dropouts_ok}, sizes within 1 {size_ok}", t0, 10)


def test_criterion_8_determinism(report, tmp_path):
    t0 = time.perf_counter()
    cfg = str(ROOT / "configs" / "reference.yaml")
    codes = [main(["run", "--config", cfg, "--out", str(tmp_path / d)]) for d in ("a", "b")]
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("rounds.csv", "summary.json"))
    ok = codes == [0, 0] and same
    assert report(8, ok, f"exit codes {codes}, byte-identical outputs {same}", t0, 300)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
