"""Market-state timelines, typical states, turning points and ARI robustness."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from math import comb
from pathlib import Path

import numpy as np

from .clustering import ClusterSolution, MatrixSet, bisecting_kmeans, pca_project
from .errors import DataError
from .ingest import ReturnMatrix
from .matrix_core import CorrelationMatrix, demean_matrix, epoch_matrices, mean_correlation

log = logging.getLogger(__name__)


@dataclass
class StateTimeline:
    labels: np.ndarray  # per epoch, 1..k by first appearance
    mid_dates: list
    epochs: list[int]
    mapping: dict[int, int] = field(default_factory=dict)  # raw label -> state
    events: list[tuple[str, str]] = field(default_factory=list)

    @property
    def k(self) -> int:
        return int(self.labels.max()) if len(self.labels) else 0


@dataclass
class TypicalState:
    label: int
    matrix: np.ndarray
    count: int
    mean_correlation: float


@dataclass
class TurningPoint:
    epoch_pair: tuple[int, int]
    date_pair: tuple
    from_state: int
    to_state: int
    is_new_state: bool


@dataclass
class AriReport:
    sizes: list[int]
    values: dict[int, list[float]]
    seeds: dict[int, list[int]]

    def summary(self) -> list[dict]:
        rows = []
        for K in self.sizes:
            v = np.array(self.values[K])
            rows.append({"K": K, "n_rep": len(v), "mean": float(v.mean()), "min": float(v.min()),
                         "max": float(v.max()), "std": float(v.std())})
        return rows


def _labels(z) -> np.ndarray:
    if isinstance(z, (ClusterSolution, StateTimeline)):
        return np.asarray(z.labels)
    return np.asarray(z)


def build_timeline(sol, epochs=None, events=None) -> StateTimeline:
    """Renumber states in order of first appearance and attach epoch dates.

    ``epochs`` may be EpochWindow or CorrelationMatrix objects (anything with
    ``index``/``epoch`` and ``mid_date``).
    """
    raw = _labels(sol)
    mapping: dict[int, int] = {}
    for lab in raw.tolist():
        mapping.setdefault(lab, len(mapping) + 1)
    labels = np.array([mapping[lab] for lab in raw.tolist()], dtype=int)
    if epochs is None:
        idx, dates = list(range(1, len(raw) + 1)), [None] * len(raw)
    else:
        if len(epochs) != len(raw):
            raise DataError(f"{len(epochs)} epochs for {len(raw)} labels")
        idx = [getattr(e, "index", None) or getattr(e, "epoch", i + 1) for i, e in enumerate(epochs)]
        dates = [e.mid_date for e in epochs]
    return StateTimeline(labels, dates, idx, mapping, list(events or []))


def typical_states(labels, matrices) -> tuple[list[TypicalState], np.ndarray]:
    """Element-wise mean matrix per state, plus the average over all epochs."""
    labels = _labels(labels)
    stack = np.stack([m.values if isinstance(m, CorrelationMatrix) else np.asarray(m) for m in matrices])
    if len(stack) != len(labels):
        raise DataError(f"{len(stack)} matrices for {len(labels)} labels")
    states = []
    for lab in sorted(set(labels.tolist())):
        mask = labels == lab
        mean = stack[mask].mean(axis=0)
        states.append(TypicalState(lab, mean, int(mask.sum()), mean_correlation(mean)))
    return states, stack.mean(axis=0)


def turning_points(t: StateTimeline) -> list[TurningPoint]:
    if len(t.labels) < 2:
        raise DataError("turning points need at least 2 epochs")
    seen = {int(t.labels[0])}
    out = []
    for i in range(1, len(t.labels)):
        a, b = int(t.labels[i - 1]), int(t.labels[i])
        if a != b:
            out.append(TurningPoint((t.epochs[i - 1], t.epochs[i]), (t.mid_dates[i - 1], t.mid_dates[i]),
                                    a, b, b not in seen))
        seen.add(b)
    return out


def _pair_counts(z1, z2):
    """Return (a, same1, same2, n_pairs): same-same pairs and per-partition
    same-cluster pair totals."""
    l1, l2 = _labels(z1), _labels(z2)
    if len(l1) != len(l2):
        raise DataError(f"partitions cover {len(l1)} and {len(l2)} items")
    _, i1 = np.unique(l1, return_inverse=True)
    _, i2 = np.unique(l2, return_inverse=True)
    table = np.zeros((i1.max() + 1, i2.max() + 1), dtype=np.int64)
    np.add.at(table, (i1, i2), 1)
    a = sum(comb(int(v), 2) for v in table.ravel())
    s1 = sum(comb(int(v), 2) for v in table.sum(axis=1))
    s2 = sum(comb(int(v), 2) for v in table.sum(axis=0))
    return a, s1, s2, comb(len(l1), 2)


def rand_index(z1, z2) -> float:
    a, s1, s2, n2 = _pair_counts(z1, z2)
    if n2 == 0:
        return 1.0
    b = n2 - s1 - s2 + a  # split in both
    return (a + b) / n2


def adjusted_rand_index(z1, z2) -> float:
    """Rand index corrected for chance under the permutation model.

    With a = same-cluster pairs in both, S1/S2 the same-cluster pair totals
    and N the number of pairs, E[a] = S1 S2 / N and
    ARI = (a - E[a]) / ((S1 + S2)/2 - E[a]), which equals (R - PM) / (1 - PM).
    If 1 - PM vanishes the value is 1 for identical partitions, else 0.
    """
    a, s1, s2, n2 = _pair_counts(z1, z2)
    if n2 == 0:
        return 1.0
    expected = s1 * s2 / n2
    denom = 0.5 * (s1 + s2) - expected
    if denom == 0:
        same = s1 == a == s2
        log.warning("ARI undefined (both partitions trivial); reporting %d", int(same))
        return 1.0 if same else 0.0
    return (a - expected) / denom


def cluster_labels(mats: list[CorrelationMatrix], k: int, restarts: int, seed: int,
                   use_pca: bool = True) -> tuple[list[ClusterSolution], ClusterSolution]:
    data = MatrixSet(mats)
    points = pca_project(data) if use_pca else data
    hierarchy = bisecting_kmeans(points, k, restarts=restarts, seed=seed)
    return hierarchy, hierarchy[-1]


def subset_robustness(r: ReturnMatrix, kind: str, K_list, n_rep: int, k_ref: int, seed: int,
                      T: int = 42, restarts: int = 20, reference=None, use_pca: bool = True,
                      max_resample: int = 100) -> AriReport:
    """Recluster random ticker subsets and compare each with the reference.

    For every K' in ``K_list`` and repetition, K' tickers are drawn without
    replacement (kept in their original row order), the epoch matrices of
    ``kind`` are rebuilt and clustered at ``k_ref`` with the clustering seed
    of the reference. A subset that hits a zero-volatility row is redrawn with
    the next sub-seed.
    """
    if max(K_list) > r.K:
        raise DataError(f"subset size {max(K_list)} exceeds universe of {r.K}")
    if reference is None:
        reference = cluster_labels(epoch_matrices(r, T, kind), k_ref, restarts, seed, use_pca)[1]
    ref = _labels(reference)
    values, seeds = {}, {}
    for Kp in K_list:
        values[Kp], seeds[Kp] = [], []
        for rep in range(n_rep):
            attempt = 0
            while True:
                sub_seed = int(np.random.SeedSequence([seed, Kp, rep, attempt]).generate_state(1)[0])
                rows = np.sort(np.random.default_rng(sub_seed).choice(r.K, size=Kp, replace=False))
                try:
                    mats = epoch_matrices(r.take(rows), T, kind)
                    break
                except DataError as exc:
                    attempt += 1
                    log.info("K'=%d rep %d: %s; resampling", Kp, rep, exc)
                    if attempt >= max_resample:
                        raise
            sol = cluster_labels(mats, k_ref, restarts, seed, use_pca)[1]
            values[Kp].append(adjusted_rand_index(ref, sol))
            seeds[Kp].append(sub_seed)
    return AriReport(list(K_list), values, seeds)


def demeaned_state_analysis(mats: list[CorrelationMatrix], k: int, restarts: int = 100, seed: int = 0,
                            use_pca: bool = True):
    """Cluster de-meaned standard matrices; returns (timeline, states, overall)."""
    dm = [demean_matrix(m) for m in mats]
    hierarchy, sol = cluster_labels(dm, k, restarts, seed, use_pca)
    if sol.k < k:
        log.warning("de-meaned clustering is degenerate: %d state(s) instead of %d", sol.k, k)
    timeline = build_timeline(sol, dm)
    states, overall = typical_states(timeline.labels, dm)
    return timeline, states, overall


# --- report files -----------------------------------------------------------

def write_timeline(path, t: StateTimeline) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "date", "state"])
        for e, d, s in zip(t.epochs, t.mid_dates, t.labels.tolist()):
            w.writerow([e, d or "", s])


def write_turning_points(path, tps: list[TurningPoint]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["from_epoch", "to_epoch", "from_date", "to_date", "from_state", "to_state", "new_state"])
        for tp in tps:
            w.writerow([*tp.epoch_pair, tp.date_pair[0] or "", tp.date_pair[1] or "",
                        tp.from_state, tp.to_state, int(tp.is_new_state)])


def write_ari(path, rep: AriReport) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["K", "rep", "seed", "ari"])
        for K in rep.sizes:
            for i, (s, v) in enumerate(zip(rep.seeds[K], rep.values[K])):
                w.writerow([K, i + 1, s, repr(float(v))])


def load_events(path) -> list[tuple[str, str]]:
    """Crisis markers: ``date,label`` rows, header optional, '#' comments."""
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.reader(line for line in fh if not line.lstrip().startswith("#")):
            if not row or row[0].strip().lower() == "date":
                continue
            out.append((row[0].strip(), row[1].strip() if len(row) > 1 else ""))
    return out
