"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line (printed in the terminal summary) and
then asserts, so a failing criterion shows up in both places.
"""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, centered_panel
from oracles import ari_brute, random_partition
from marketstates.analysis import (
    adjusted_rand_index,
    cluster_labels,
    demeaned_state_analysis,
    load_events,
    rand_index,
)
from marketstates.clustering import MatrixSet, bisecting_kmeans, kmeans, lloyd_violations, pca_project
from marketstates.config import load_config
from marketstates.ingest import ReturnMatrix
from marketstates.matrix_core import (
    epoch_matrices,
    epoch_matrix,
    mean_correlation,
    normalize,
    pearson,
    reduce_corr,
    reduce_cov,
    sliding_mean_correlation,
)
from marketstates.pipeline import run_pipeline
from marketstates.synthetic import mean_shift_panel, planted_panel

DATA = Path(__file__).resolve().parents[1] / "src" / "marketstates" / "data"


def record(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _eig_route(second_moment):
    """Subtract the top eigen-dyad and rescale to unit diagonal."""
    w, Q = np.linalg.eigh(second_moment)
    reduced = second_moment - w[-1] * np.outer(Q[:, -1], Q[:, -1])
    d = np.sqrt(np.diag(reduced))
    return reduced / np.outer(d, d)


def _panels(n, seed, T_below_K=True):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        K = int(rng.integers(5, 31))
        T = int(rng.integers(4, K)) if T_below_K else int(rng.integers(4, 60))
        out.append(centered_panel(rng, K, T) + rng.standard_normal((K, 1)))
    return out


def test_no_correction_term_identity():
    t0 = time.perf_counter()
    err = 0.0
    for raw in _panels(100, seed=1):
        n = normalize(raw)
        T = raw.shape[1]
        cb = reduce_cov(n).correlation
        cl = reduce_corr(n).correlation
        err = max(err, np.abs(cb - _eig_route(n.A @ n.A.T / T)).max(),
                  np.abs(cl - _eig_route(pearson(n.M))).max())
    elapsed = time.perf_counter() - t0
    record("no-correction-term identity", err < 1e-10 and elapsed < 10,
           f"max error {err:.2e} (< 1e-10) over 100 panels in {elapsed:.2f} s (< 10 s)")


def _rank(c):
    w = np.linalg.eigvalsh(c)
    return int(np.sum(w > 1e-8 * w.max()))


def test_rank_laws():
    t0 = time.perf_counter()
    bad = []
    for i, raw in enumerate(_panels(50, seed=2)):
        T = raw.shape[1]
        ranks = [_rank(epoch_matrix(raw, kind)) for kind in ("standard", "reduced_cov", "reduced_corr")]
        if ranks != [T - 1, T - 2, T - 2]:
            bad.append((i, T, ranks))
    elapsed = time.perf_counter() - t0
    record("rank laws", not bad and elapsed < 10,
           f"{50 - len(bad)}/50 panels with rank(C)=T-1, rank(C_B)=rank(C_L)=T-2 in {elapsed:.2f} s")


def test_centering_lemma():
    worst = 0.0
    for raw in _panels(100, seed=1) + _panels(50, seed=2) + _panels(50, seed=3, T_below_K=False):
        n = normalize(raw)
        worst = max(worst, np.abs(reduce_cov(n).data_matrix.mean(axis=1)).max(),
                    np.abs(reduce_corr(n).data_matrix.mean(axis=1)).max())
    record("centering lemma", worst < 1e-10, f"max |row mean| of B and L {worst:.2e} (< 1e-10)")


def test_bisecting_endpoints():
    ok = True
    for seed in range(5):
        x = np.random.default_rng(seed).standard_normal((12, 6))
        one = bisecting_kmeans(x, 1, restarts=5, seed=seed)
        full = bisecting_kmeans(x, 12, restarts=5, seed=seed)
        ok &= len(one) == 1 and set(one[0].labels.tolist()) == {1}
        ok &= len(full) == 12 and sorted(full[-1].labels.tolist()) == list(range(1, 13))
    record("bisecting endpoints", bool(ok), "k_target=1 gives one cluster, k_target=N_ep gives singletons")


def test_lloyd_monotonicity():
    runs, steps, strict = 0, 0, 0
    sols = []
    for seed in range(10):
        x = np.random.default_rng(seed).standard_normal((60, 8))
        sols.append(kmeans(x, 5, restarts=20, seed=seed))
        sols.extend(bisecting_kmeans(x, 8, restarts=10, seed=seed)[-1:])
    p = planted_panel(seed=4)
    sols.append(cluster_labels(epoch_matrices(p.returns, p.T, "standard"), 6, 30, 1)[1])
    violations = 0
    for sol in sols:
        violations += lloyd_violations(sol)
        for h in sol.histories:
            runs += 1
            steps += max(len(h) - 1, 0)
            strict += sum(b > a for a, b in zip(h, h[1:]))
    record("Lloyd monotonicity", violations == 0,
           f"{violations} violations ({strict} strict increases) over {runs} restarts, {steps} steps")


def test_pca_equivalence():
    same = 0
    aris = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        values = 0.01 * rng.standard_normal((12, 20 * 15))
        r = ReturnMatrix(values=values, tickers=[str(i) for i in range(12)], dates=[str(i) for i in range(300)])
        mats = epoch_matrices(r, 15, "standard")
        a = bisecting_kmeans(MatrixSet(mats), 4, restarts=10, seed=seed)[-1]
        b = bisecting_kmeans(pca_project(mats), 4, restarts=10, seed=seed)[-1]
        same += np.array_equal(a.labels, b.labels)
        aris.append(adjusted_rand_index(a.labels, b.labels))
    record("PCA equivalence", same == 20 and all(v == 1.0 for v in aris),
           f"{same}/20 trials with identical assignments, min ARI {min(aris)}")


def test_ari_oracle():
    rng = np.random.default_rng(11)
    worst, checked, degenerate, self_ok = 0.0, 0, 0, True
    while checked < 200:
        n = int(rng.integers(2, 9))
        z1, z2 = random_partition(rng, n), random_partition(rng, n)
        self_ok &= adjusted_rand_index(z1, z1) == 1.0 and adjusted_rand_index(z2, z2) == 1.0
        trivial = {len(set(z.tolist())) in (1, n) for z in (z1, z2)}
        if trivial == {True}:
            # 1 - PM vanishes: convention is 1 for identical partitions, else 0
            expected = 1.0 if rand_index(z1, z2) == 1.0 else 0.0
            self_ok &= adjusted_rand_index(z1, z2) == expected
            degenerate += 1
            continue
        worst = max(worst, abs(adjusted_rand_index(z1, z2) - ari_brute(z1, z2)))
        checked += 1
    record("ARI oracle", worst < 1e-9 and self_ok,
           f"max error {worst:.2e} (< 1e-9) on {checked} pairs (+{degenerate} trivial pairs); ARI(z,z)=1 and trivial-pair convention: {self_ok}")


def test_planted_regime_recovery():
    t0 = time.perf_counter()
    ari = {"standard": [], "reduced_cov": [], "reduced_corr": []}
    for seed in range(50):
        p = planted_panel(seed=seed)
        for kind in ari:
            sol = cluster_labels(epoch_matrices(p.returns, p.T, kind), 3, restarts=20, seed=seed)[1]
            ari[kind].append(adjusted_rand_index(p.regimes, sol.labels))
    shift = mean_shift_panel(K=8, T=20, levels=(0.2, 0.6), epochs_per_level=6, seed=0)
    timeline, _, _ = demeaned_state_analysis(epoch_matrices(shift.returns, shift.T, "standard"), 3, 20, 0)
    elapsed = time.perf_counter() - t0
    frac = {k: float(np.mean(np.array(v) >= 0.9)) for k, v in ari.items()}
    mean = {k: float(np.mean(v)) for k, v in ari.items()}
    ok_a = frac["reduced_cov"] >= 0.9 and frac["reduced_corr"] >= 0.9
    ok_b = mean["standard"] < mean["reduced_cov"] and mean["standard"] < mean["reduced_corr"]
    ok_c = timeline.k == 1
    record("planted regimes (a) reduced recovery", ok_a,
           f"ARI >= 0.9 in {frac['reduced_cov']:.0%} (cov) / {frac['reduced_corr']:.0%} (corr) of 50 trials")
    record("planted regimes (b) standard lower", ok_b,
           f"mean ARI standard {mean['standard']:.3f} vs cov {mean['reduced_cov']:.3f}, "
           f"corr {mean['reduced_corr']:.3f}")
    record("planted regimes (c) de-meaned mean shift", ok_c, f"{timeline.k} state(s) found")
    record("planted regimes runtime", elapsed < 120, f"{elapsed:.1f} s (< 120 s)")


def test_mean_correlation_consistency():
    exact = True
    worst_ratio = 0.0
    for seed in range(5):
        p = planted_panel(regime_sequence=(1, 2, 3), epochs_per_regime=3, seed=seed)
        r, T = p.returns, p.T
        std = None
        for kind in ("standard", "reduced_cov", "reduced_corr"):
            _, sliding = sliding_mean_correlation(r, T, kind)
            disjoint = np.array([mean_correlation(m) for m in epoch_matrices(r, T, kind)])
            exact &= np.array_equal(sliding[::T][: len(disjoint)], disjoint)
            if kind == "standard":
                std = np.abs(disjoint)
            else:
                worst_ratio = max(worst_ratio, float((np.abs(disjoint) / std).max()))
    record("mean-correlation consistency", bool(exact) and worst_ratio < 1,
           f"sliding == disjoint exactly: {bool(exact)}; max |reduced| / |standard| per epoch {worst_ratio:.3f}")


def _numerical_files(out):
    return {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*"))
            if p.is_file() and p.name != "manifest.json"}


def test_determinism(tmp_path):
    cfg_path = DATA / "sample_config.yaml"
    t0 = time.perf_counter()
    outs = []
    for name in ("a", "b"):
        cfg = load_config(cfg_path, [("paths.output", str(tmp_path / name))])
        run_pipeline(cfg)
        outs.append(tmp_path / name)
    elapsed = time.perf_counter() - t0
    a, b = (_numerical_files(o) for o in outs)
    differing = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    ma, mb = (json.loads((o / "manifest.json").read_text())["outputs"] for o in outs)
    record("determinism", not differing and ma == mb and elapsed < 60,
           f"{len(a)} files, {len(differing)} differing, two runs in {elapsed:.1f} s (< 60 s)")


REAL = os.environ.get("MARKETSTATES_REAL_CONFIG")
REFERENCE_COUNTS = {"standard": [26, 15, 38, 8], "reduced_cov": [73, 5, 1, 8], "reduced_corr": [44, 7, 17, 11, 8]}


@pytest.mark.skipif(not REAL, reason="set MARKETSTATES_REAL_CONFIG to a config for the 262-stock panel")
def test_real_data(tmp_path):
    cfg = load_config(REAL, [("paths.output", str(tmp_path / "real")), ("epoch_length", "42"),
                             ("kinds", "[standard, reduced_cov, reduced_corr]"), ("robustness.enabled", "false")])
    run_pipeline(cfg)
    out = cfg.output
    n_ep = len((out / "standard" / "epochs.csv").read_text().splitlines()) - 1
    record("real data epochs", n_ep == 87, f"N_ep = {n_ep} (expected 87)")
    dates, vals = [], []
    for line in (out / "standard" / "mean_corr_sliding.csv").read_text().splitlines()[1:]:
        d, v = line.split(",")
        dates.append(np.datetime64(d))
        vals.append(float(v))
    vals, dates = np.array(vals), np.array(dates)
    events = load_events(cfg.events) if cfg.events else load_events(DATA / "crisis_events.csv")
    hits = 0
    for date, _ in events:
        i = int(np.searchsorted(dates, np.datetime64(date)))
        lo, hi = max(i - 42, 1), min(i + 42, len(vals) - 1)
        window = vals[lo:hi]
        peaks = [j for j in range(lo, hi) if vals[j] >= vals[j - 1] and vals[j] >= vals[j + 1]]
        hits += bool(peaks) and window.max() > np.median(vals)
    record("real data crisis maxima", hits == len(events), f"{hits}/{len(events)} events near a local maximum")
    counts_ok = True
    for kind, expected in REFERENCE_COUNTS.items():
        summary = json.loads((out / kind / "summary.json").read_text())
        got = sorted(s["count"] for s in summary["states"])
        counts_ok &= len(got) == len(expected) and all(abs(a - b) <= 3 for a, b in zip(got, sorted(expected)))
    record("real data state counts", bool(counts_ok), "sorted state counts within +-3 of the reference counts")
