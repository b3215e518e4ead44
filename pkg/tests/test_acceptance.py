"""Acceptance criteria 1-9.  Each test records one verdict line (see acceptance_log)."""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from geowalk.alignment import SegmentItem, find_linkage_set, is_aligned
from geowalk.divergence import UNREACHABLE, contraction_probe, detour_length, landing_check, neighborhood_mask
from geowalk.experiments import run_experiment
from geowalk.geometry import axis_projection, axis_segment, build_ball, exact_oracle, project
from geowalk.group import cycle_graph, free_group, racg
from geowalk.pivots import (
    PivotConfig,
    PivotRunner,
    class_key,
    enumerate_pivot_sets,
    pivot_tail_dp,
    pivoted_class,
    synthetic_pivot_counts,
    tenfold_tail_bounds,
)
from geowalk.walks import (
    BirthDeathChain,
    decompose_convolution,
    dyadic_decomposition,
    multiples_grid,
    sample_walk,
    simple_random_walk,
    trial_seeds,
    wilson_interval,
)

from acceptance_log import record
from oracles import tree_axis_projection

CONFIGS = sorted((Path(__file__).resolve().parent.parent / "configs").glob("*.json"))


def _csvs(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))}


def _rows(path: Path) -> list:
    return list(csv.DictReader(io.StringIO(path.read_text())))


@pytest.fixture(scope="module")
def cache_dir(tmp_path_factory, monkeypatch_module):
    d = tmp_path_factory.mktemp("ball-cache")
    monkeypatch_module.setenv("GEOWALK_CACHE_DIR", str(d))
    return d


@pytest.fixture(scope="module")
def monkeypatch_module():
    mp = pytest.MonkeyPatch()
    yield mp
    mp.undo()


@pytest.fixture(scope="module")
def first_runs(tmp_path_factory, cache_dir):
    """Every shipped config, run once single-threaded: {stem: (out_dir, manifest, seconds)}."""
    root = tmp_path_factory.mktemp("run1")
    out = {}
    for cfg in CONFIGS:
        t0 = time.perf_counter()
        man = run_experiment(str(cfg), out_dir=root / cfg.stem, threads=1)
        out[cfg.stem] = (root / cfg.stem, man, time.perf_counter() - t0)
    return out


# -- 1. CLT on F2 -------------------------------------------------------------


def test_criterion_1_free_group_clt(first_runs):
    ch = BirthDeathChain(2)
    # the oracle itself: exact law against brute-force enumeration at n = 8
    brute = [Fraction(0)] * 9
    for w in itertools.product((1, -1, 2, -2), repeat=8):
        st = []
        for c in w:
            st.pop() if st and st[-1] == -c else st.append(c)
        brute[len(st)] += Fraction(1, 4**8)
    oracle_ok = ch.law(8, exact=True) == brute and ch.drift == Fraction(1, 2) and ch.variance == Fraction(3, 4)
    out, man, secs = first_runs["clt_f2"]
    summary = json.loads((out / "summary.json").read_text())
    d = np.array([int(r["displacement"]) for r in _rows(out / "clt.csv")])
    ok = (
        oracle_ok
        and summary["normalisation"] == "birth-death"
        and summary["lambda"] == 0.5
        and summary["sigma"] == pytest.approx(math.sqrt(0.75))
        and len(d) == 10_000
        and summary["n"] == 10_000
        and summary["ks"] < 0.05
        and secs < 300
    )
    record(1, ok, f"KS={summary['ks']:.4f} (<0.05), lambda_hat={summary['lambda_hat']:.5f}, "
                  f"sigma_hat={summary['sigma_hat']:.4f}, {secs:.1f}s")
    assert ok


# -- 2. dyadic identity -------------------------------------------------------


def test_criterion_2_dyadic_identity():
    G = free_group(2)
    O = exact_oracle(G)
    mu = simple_random_walk(G)
    N, k = 4, 16
    residuals = []
    for s in trial_seeds(2024, 100):
        tr = sample_walk(G, mu, N * k, s, multiples_grid(N, k))
        residuals.append(dyadic_decomposition(O, tr, N, k).residual)
    ok = all(r == 0 and isinstance(r, Fraction) for r in residuals) and len(residuals) == 100
    record(2, ok, f"100 paths, N=4, k=16, max |residual| = {max(abs(r) for r in residuals)}")
    assert ok


# -- 3. pivot tail ------------------------------------------------------------


@pytest.fixture(scope="module")
def tail_table():
    return pivot_tail_dp(tenfold_tail_bounds, Fraction(9, 10), 30)


def test_criterion_3_monte_carlo_below_dp(first_runs, tail_table):
    probs = tail_table.probs
    # #P_k <= k/2 has a floor in it, so the sequence is geometric along each residue class mod 4
    per_class = all(probs[i + 4] < probs[i] for i in range(len(probs) - 4))
    k, trials = 20, 100_000
    counts = synthetic_pivot_counts(0.9, 0.9, k, trials, seed=11)
    worst = 0.0
    mc_ok = True
    for j in range(1, k + 1):
        hits = int(np.sum(2 * counts[:, j - 1] <= j))
        lo, _ = wilson_interval(hits, trials, 0.99)
        mc_ok &= lo <= float(probs[j - 1])
        worst = max(worst, lo - float(probs[j - 1]))
    out, _, _ = first_runs["pivots_synthetic"]
    csv_final = np.array([int(r["num_pivots"]) for r in _rows(out / "pivots.csv")])
    same = np.array_equal(csv_final, counts[:, -1])
    tail_csv = _rows(out / "tail.csv")
    dp_csv = [Fraction(r["p_exact"]) for r in tail_csv] == list(probs)
    literal = ", ".join(f"k={j}: {float(probs[j - 1]):.3g} vs (1/10)^k={float(tail_table.literal[j - 1]):.0e}" for j in (2, 10))
    ok = per_class and mc_ok and same and dp_csv
    record(3, ok, f"MC (1e5 trials, k<=20) at or below exact DP within Wilson 99% "
                  f"(largest excess of lower bound {worst:+.2e}); DP decays per residue mod 4; literal constant "
                  f"reported only: {literal}")
    assert ok


def test_criterion_3_decay_rate(tail_table):
    rho = tail_table.rho
    ok = rho <= 0.7
    record(3, ok, f"fitted rho = {rho:.4f} (target <= 0.7; the saturated chain's large-deviation rate is about 0.93)")
    assert ok


# -- 4. pivoted classes -------------------------------------------------------


def test_criterion_4_pivoted_classes_partition():
    G = free_group(2)
    O = exact_oracle(G)
    S = find_linkage_set(O, axis_segment(G, "a", (-20, 20)), 6, 3, 0.3, 4)
    hostile = tuple(G.multiply(G.invert(S.elements[j]), "a^-5") for j in range(3))
    cfgs = {
        "plain": PivotConfig(math.exp(10), 0.3, S.elements, (), O, (1,)),
        "backtracking": PivotConfig(math.exp(10), 0.3, S.elements, (G.identity,) + hostile, O, (1,)),
    }
    ok = True
    notes = []
    for name, cfg in cfgs.items():
        runner = PivotRunner(cfg)
        for k in (1, 2, 3):
            table = enumerate_pivot_sets(cfg, k, runner=runner)
            ok &= len(table) == 4 ** (3 * k)
            groups: dict = {}
            for s, P in table.items():
                groups.setdefault(class_key(s, P), []).append(s)
            seen = 0
            for members in groups.values():
                s = members[0]
                cls = pivoted_class(cfg, s, runner=runner)
                ok &= cls == sorted(members)
                ok &= all(table[s2] == table[s] for s2 in cls)
                seen += len(cls)
            ok &= seen == len(table)
            notes.append(f"{name} k={k}: {len(groups)} classes")
    record(4, ok, "; ".join(notes))
    assert ok


# -- 5. coin-toss decomposition ----------------------------------------------


def test_criterion_5_decomposition(first_runs):
    G = free_group(2)
    O = exact_oracle(G)
    S = find_linkage_set(O, axis_segment(G, "a", (-20, 20)), K=2, m=2, eps=0.3, size=2)
    rep = decompose_convolution(G, simple_random_walk(G), S, m=2, K=2)
    out, _, _ = first_runs["decompose_f2"]
    summary = json.loads((out / "summary.json").read_text())
    ok = (
        rep.s == 2 and rep.N == 10
        and rep.min_margin >= 0 and rep.verdict
        and rep.tv == 0
        and sum(rep.nu.values()) == 1 and all(v >= 0 for v in rep.nu.values())
        and summary["verdict"] and summary["tv"] == "0" and summary["N"] == 10
    )
    record(5, ok, f"N={rep.N}, |S|=2, q={rep.q}, min margin={rep.min_margin}, TV={rep.tv}, "
                  f"support {rep.support_size}")
    assert ok


# -- 6. divergence controls ---------------------------------------------------


def test_criterion_6_divergence(first_runs):
    c4_out, _, t4 = first_runs["divergence_c4"]
    c5_out, _, t5 = first_runs["divergence_c5"]
    c4 = json.loads((c4_out / "summary.json").read_text())
    c5 = json.loads((c5_out / "summary.json").read_text())
    d5 = [int(r["detour"]) for r in _rows(c5_out / "divergence.csv")]
    R5 = [int(r["R"]) for r in _rows(c5_out / "divergence.csv")]
    ratios = [d / R for d, R in zip(d5, R5)]
    ok = (
        c4["model"] == "polynomial" and abs(c4["degree"] - 1.0) <= 0.3 and not c4["superlinear"]
        and c5["model"] == "exponential" and c5["superlinear"]
        and R5 == [1, 2, 3, 4, 5] and all(b > a for a, b in zip(ratios, ratios[1:]))
        and c4["ball_radius"] <= 12 and c5["ball_radius"] <= 12
        and t4 + t5 < 600
    )
    record(6, ok, f"C4 degree {c4['degree']:.3f}, superlinear {c4['superlinear']}; C5 model {c5['model']}, "
                  f"detours {d5}; {t4 + t5:.1f}s")
    assert ok


# -- 7. tree exactness --------------------------------------------------------


def _reduced(rng, G, max_len, avoid_first=None):
    w = []
    for _ in range(int(rng.integers(0, max_len + 1))):
        choices = [c for c in G.letters if not (w and c == -w[-1]) and not (not w and c in (avoid_first or ()))]
        w.append(int(rng.choice(choices)))
    return tuple(w)


def test_criterion_7_tree_exactness(ball_F2_8):
    G = free_group(2)
    O = exact_oracle(G)
    rng = np.random.default_rng(7)
    cases = 1000
    bad = {"diameter": 0, "landing": 0, "detour": 0, "align": 0}

    # off-axis geodesics inside one branch project to a single vertex
    for _ in range(cases):
        t = int(rng.integers(-6, 7))
        c = int(rng.choice([2, -2]))
        g = G.reduce((1 if t > 0 else -1,) * abs(t) + (c,))
        x = G.multiply(g, _reduced(rng, G, 5, avoid_first=(-c,)))
        y = G.multiply(g, _reduced(rng, G, 5, avoid_first=(-c,)))
        ts = {axis_projection(O, (1,), p).t for p in O.geodesic_path(x, y)}
        if ts != {t} or tree_axis_projection(x.word)[0] != t:
            bad["diameter"] += 1

    # geodesics between points with distinct projections run along the axis in between
    for _ in range(cases):
        t1 = int(rng.integers(-12, 0))
        t2 = int(rng.integers(1, 13))
        x = G.multiply((-1,) * -t1, _reduced(rng, G, 4, avoid_first=(1, -1)))
        y = G.multiply((1,) * t2, _reduced(rng, G, 4, avoid_first=(1, -1)))
        seg = axis_segment(G, "a", (-40, 40))
        rep = landing_check(O, seg, x, y, delta=0.5)
        px, py = project(O, seg, x), project(O, seg, y)
        if not (rep.entry_offsets == (0, 0) and rep.mid_max_distance == 0 and rep.p_x == px.point and rep.p_y == py.point):
            bad["landing"] += 1

    # removing a tube around the axis disconnects the tree
    Ob = ball_F2_8
    seg = axis_segment(G, "a", (-12, 12))
    masks = {R: neighborhood_mask(Ob, seg, R) for R in (0, 1, 2)}
    for _ in range(cases):
        R = int(rng.integers(0, 3))
        t1, t2 = int(rng.integers(-3, 0)), int(rng.integers(1, 4))
        h1 = (int(rng.choice([2, -2])),)
        h2 = (int(rng.choice([2, -2])),)
        h1 = h1 + _reduced(rng, G, 2, avoid_first=(-h1[0],))[: max(0, R)]
        h2 = h2 + _reduced(rng, G, 2, avoid_first=(-h2[0],))[: max(0, R)]
        pm = G.multiply((-1,) * -t1, h1)
        pp = G.multiply((1,) * t2, h2)
        if project(Ob, seg, pm).distance <= R or project(Ob, seg, pp).distance <= R:
            h1, h2 = (h1[0],) * (R + 1), (h2[0],) * (R + 1)
            pm, pp = G.multiply((-1,) * -t1, h1), G.multiply((1,) * t2, h2)
        if detour_length(Ob, seg, R, pm, pp, theta=1, mask=masks[R]) is not UNREACHABLE:
            bad["detour"] += 1

    # alignment of (x, gamma[m, n], y) against the closed-form tree projections
    for _ in range(cases):
        x = G.reduce(_reduced(rng, G, 8))
        y = G.reduce(_reduced(rng, G, 8))
        m = int(rng.integers(-5, 6))
        n = m + int(rng.integers(0, 8))
        K = int(rng.integers(0, 4))
        got = is_aligned(O, [x, SegmentItem(G.identity, (1,), m, n), y], K).aligned
        want = tree_axis_projection(x.word)[0] <= m + K and tree_axis_projection(y.word)[0] >= n - K
        if got != want:
            bad["align"] += 1

    ok = not any(bad.values())
    record(7, ok, f"{cases} cases per check, mismatches {bad}")
    assert ok


# -- 8. contraction versus divergence ----------------------------------------


def test_criterion_8_contraction_dichotomy(ball_F2_8, ball_C4_10):
    F2 = free_group(2)
    C4 = racg(cycle_graph(4))
    tree_seg = axis_segment(F2, "a", (-12, 12))
    tree = [contraction_probe(ball_F2_8, tree_seg, K, 400, seed=8) for K in (1, 2, 3)]
    R = ball_C4_10.radius
    flat_seg = axis_segment(C4, "ac", (-14, 14), oracle=ball_C4_10)
    flat = [contraction_probe(ball_C4_10, flat_seg, K, 400, seed=8) for K in (1, 2, 3)]
    # explicit flat rectangle: gamma(-j) h to gamma(j) h with h in <b, d> of length K+1
    rect = []
    for K in (1, 2, 3):
        h = C4.word("bd" * 2)[: K + 1]
        j = (R - (K + 1)) // 2
        x = C4.multiply(flat_seg.point(-j), h)
        y = C4.multiply(flat_seg.point(j), h)
        path = ball_C4_10.geodesic_path(x, y)
        off = min(project(ball_C4_10, flat_seg, p).distance for p in path)
        ts = [project(ball_C4_10, flat_seg, p).t for p in path]
        rect.append((off > K, max(ts) - min(ts)))
    ok = (
        all(r.qualifying > 0 and r.max_diameter == 0 for r in tree)
        and all(r.qualifying > 0 and 2 * r.max_diameter >= R for r in flat)
        and all(off and 2 * dia >= R for off, dia in rect)
    )
    record(8, ok, f"F2 max diameters {[r.max_diameter for r in tree]}; C4 (ball radius {R}) sampled "
                  f"{[r.max_diameter for r in flat]}, rectangle {[d for _, d in rect]} for K=1,2,3")
    assert ok


# -- 9. determinism -----------------------------------------------------------


def test_criterion_9_determinism(first_runs, tmp_path):
    diffs = []
    for cfg in CONFIGS:
        out1, man1, _ = first_runs[cfg.stem]
        again = run_experiment(str(cfg), out_dir=tmp_path / "again" / cfg.stem, threads=1)
        wide = run_experiment(str(cfg), out_dir=tmp_path / "wide" / cfg.stem, threads=8)
        base = _csvs(out1)
        if not base:
            diffs.append(f"{cfg.stem}: no CSV")
        if _csvs(tmp_path / "again" / cfg.stem) != base:
            diffs.append(f"{cfg.stem}: rerun")
        if _csvs(tmp_path / "wide" / cfg.stem) != base:
            diffs.append(f"{cfg.stem}: threads 8")
        if not man1.config_hash == again.config_hash == wide.config_hash:
            diffs.append(f"{cfg.stem}: hash")
    ok = not diffs
    record(9, ok, f"{len(CONFIGS)} configs, rerun and threads 1 vs 8: " + ("identical CSV bytes" if ok else ", ".join(diffs)))
    assert ok
