"""Stage orchestration: ingest -> matrices -> cluster -> select-k -> analyze
-> robustness. Each stage reads the files written by the previous one, so
stages can be rerun individually.

Output layout (relative to the output directory)::

    returns.csv, drop_report.txt
    <kind>/epochs.csv, matrices.bin, mean_corr_disjoint.csv,
           mean_corr_sliding.csv, mean_corr.svg
    <kind>/hierarchy.json, centroids.bin
    <kind>/kselection.csv, kselection.svg
    <kind>/timeline.csv, timeline.svg, turning_points.csv, summary.json,
           typical_states.bin, state_<l>.svg, overall.svg
    tables/state_counts.csv, tables/mean_correlations.csv
    robustness/<kind>_ari.csv, robustness/summary.json
    manifest.json
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import analysis, clustering, matrix_core, render
from .config import RunConfig
from .errors import ConfigError, DataError, MarketStatesError
from .ingest import load_prices, load_sectors, log_returns, read_returns, sector_sort, write_returns

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
STAGES = ("ingest", "matrices", "cluster", "select-k", "analyze", "robustness")


def _dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class _Collector(logging.Handler):
    def __init__(self):
        super().__init__(logging.WARNING)
        self.messages: list[str] = []

    def emit(self, record):
        self.messages.append(f"{record.name}: {record.getMessage()}")


class Run:
    """Book-keeping for one CLI invocation: timings, warnings, manifest."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.output)
        self.out.mkdir(parents=True, exist_ok=True)
        self.timings: dict[str, float] = {}
        self.collector = _Collector()
        self.failed: dict | None = None

    def __enter__(self):
        logging.captureWarnings(True)
        logging.getLogger().addHandler(self.collector)
        return self

    def __exit__(self, exc_type, exc, tb):
        logging.getLogger().removeHandler(self.collector)
        logging.captureWarnings(False)
        self.write_manifest()
        return False

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except MarketStatesError as exc:
            self.failed = {"stage": name, "error": str(exc), "type": type(exc).__name__}
            raise
        except Exception as exc:
            self.failed = {"stage": name, "error": repr(exc), "type": type(exc).__name__}
            raise
        finally:
            self.timings[name] = round(time.perf_counter() - t0, 6)

    def write_manifest(self) -> dict:
        path = self.out / MANIFEST
        old = {}
        if path.exists():
            try:
                old = json.loads(path.read_text())
            except json.JSONDecodeError:
                old = {}
        inputs = {}
        for p in (self.cfg.prices, self.cfg.sectors, self.cfg.events):
            if p is not None and Path(p).exists():
                inputs[str(p)] = _sha256(p)
        files = sorted(p for p in self.out.rglob("*") if p.is_file() and p.name != MANIFEST)
        outputs = {str(p.relative_to(self.out)): _sha256(p) for p in files}
        outputs[MANIFEST] = None
        timings = dict(old.get("timings", {}))
        timings.update(self.timings)
        manifest = {
            "config_hash": self.cfg.digest,
            "config": self.cfg.tree,
            "inputs": inputs,
            "outputs": outputs,
            "timings": timings,
            "warnings": self.collector.messages,
            "status": "failed" if self.failed else "ok",
            "failure": self.failed,
        }
        _dump_json(path, manifest)
        return manifest


# --- stages -----------------------------------------------------------------

def stage_ingest(cfg: RunConfig, out: Path):
    if cfg.prices is None or cfg.sectors is None:
        raise ConfigError("paths.prices and paths.sectors are required")
    for p in (cfg.prices, cfg.sectors):
        if not Path(p).exists():
            raise ConfigError(f"input file not found: {p}")
    table = load_prices(cfg.prices, cfg.schema)
    sectors = load_sectors(cfg.sectors)
    r = sector_sort(log_returns(table), sectors)
    write_returns(out / "returns.csv", r)
    (out / "drop_report.txt").write_text("".join(f"{t}\n" for t in table.dropped))
    log.info("ingested %d tickers x %d returns (%d dropped)", r.K, r.T_tot, len(table.dropped))
    return r


def _write_series(path, dates, values) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "mean_correlation"])
        for d, v in zip(dates, values):
            w.writerow([d or "", repr(float(v))])


def _read_series(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [r["date"] for r in rows], np.array([float(r["mean_correlation"]) for r in rows])


def _events(cfg):
    if cfg.events is None or not Path(cfg.events).exists():
        return []
    return analysis.load_events(cfg.events)


def stage_matrices(cfg: RunConfig, out: Path) -> None:
    r = read_returns(out / "returns.csv")
    T = cfg.epoch_length
    windows = matrix_core.slice_epochs(r, T)
    cfg.check_epochs(len(windows))
    events = _events(cfg)
    for kind in cfg.kinds:
        d = out / kind
        d.mkdir(exist_ok=True)
        mats = matrix_core.epoch_matrices(r, T, kind)
        matrix_core.write_matrices(d / "matrices.bin", mats)
        with (d / "epochs.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "start_date", "end_date", "mid_date"])
            for win in windows:
                w.writerow([win.index, r.dates[win.start], r.dates[win.start + T - 1], win.mid_date])
        disjoint = ([m.mid_date for m in mats], [matrix_core.mean_correlation(m) for m in mats])
        _write_series(d / "mean_corr_disjoint.csv", *disjoint)
        sliding = None
        if cfg.sliding:
            sliding = matrix_core.sliding_mean_correlation(r, T, kind)
            _write_series(d / "mean_corr_sliding.csv", *sliding)
        render.render_mean_correlation(disjoint, sliding, d / "mean_corr.svg", events, title=kind)


def _solution_json(sol: clustering.ClusterSolution) -> dict:
    return {
        "k": sol.k,
        "labels": sol.labels.tolist(),
        "sizes": sol.sizes.tolist(),
        "widths": [repr(float(w)) for w in sol.widths],
        "objective": repr(float(sol.objective)),
        "nodes": list(sol.nodes),
    }


def _load_hierarchy(path) -> list[clustering.ClusterSolution]:
    doc = json.loads(Path(path).read_text())
    splits = [clustering.SplitNode(s["parent"], s["left"], s["right"], float(s["d_ctoc"]),
                                   tuple(s["sizes"]), s["seed"]) for s in doc["splits"]]
    out = []
    for i, s in enumerate(doc["solutions"]):
        out.append(clustering.ClusterSolution(
            labels=np.array(s["labels"]),
            centroids=np.empty((s["k"], 0)),
            widths=np.array([float(w) for w in s["widths"]]),
            sizes=np.array(s["sizes"]),
            objective=float(s["objective"]),
            nodes=s["nodes"],
            splits=splits[:i],
        ))
    return out


def stage_cluster(cfg: RunConfig, out: Path) -> None:
    for kind in cfg.kinds:
        d = out / kind
        mats = matrix_core.read_matrices(d / "matrices.bin")
        cfg.check_epochs(len(mats))
        data = clustering.MatrixSet(mats)
        points = clustering.pca_project(data) if cfg.use_pca else data
        hierarchy = clustering.bisecting_kmeans(points, cfg.k_max, restarts=cfg.restarts, seed=cfg.seed)
        final = hierarchy[-1]
        k = min(cfg.k[kind], len(hierarchy))
        if k < cfg.k[kind]:
            log.warning("%s: requested k=%d but hierarchy stopped at %d", kind, cfg.k[kind], k)
        chosen = hierarchy[k - 1]
        states, _ = analysis.typical_states(chosen.labels, mats)
        centroids = [matrix_core.CorrelationMatrix(s.matrix, kind, s.label, None) for s in states]
        matrix_core.write_matrices(d / "centroids.bin", centroids)
        doc = {
            "kind": kind,
            "seed": cfg.seed,
            "restarts": cfg.restarts,
            "use_pca": cfg.use_pca,
            "k_selected": k,
            "k_attained": len(hierarchy),
            "centroids_file": "centroids.bin",
            "epochs": [m.epoch for m in mats],
            "splits": [{"parent": s.parent, "left": s.left, "right": s.right, "d_ctoc": repr(s.d_ctoc),
                        "sizes": list(s.sizes), "seed": s.seed} for s in final.splits],
            "solutions": [_solution_json(s) for s in hierarchy],
            "lloyd_violations": clustering.lloyd_violations(final),
        }
        _dump_json(d / "hierarchy.json", doc)


def stage_select_k(cfg: RunConfig, out: Path) -> None:
    for kind in cfg.kinds:
        d = out / kind
        curve = clustering.k_selection(_load_hierarchy(d / "hierarchy.json"))
        with (d / "kselection.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "mean_quotient", "mean_quotient_over_k", "contributing", "omitted"])
            for k, m, mk, q, om in zip(curve.k, curve.mean_quotient, curve.mean_quotient_over_k,
                                       curve.quotients, curve.omitted):
                w.writerow([k, "" if m is None else repr(m), "" if mk is None else repr(mk), len(q), om])
        render.render_k_selection(curve, d / "kselection.svg", title=kind)


def _hierarchy_doc(d: Path) -> dict:
    path = d / "hierarchy.json"
    if not path.exists():
        raise DataError(f"{path} missing; run the cluster stage first")
    return json.loads(path.read_text())


def stage_analyze(cfg: RunConfig, out: Path) -> None:
    r = read_returns(out / "returns.csv")
    labels_axis = r.sectors or [""] * r.K
    events = _events(cfg)
    counts, means = {}, {}
    for kind in cfg.kinds:
        d = out / kind
        mats = matrix_core.read_matrices(d / "matrices.bin")
        doc = _hierarchy_doc(d)
        chosen = doc["solutions"][doc["k_selected"] - 1]
        timeline = analysis.build_timeline(np.array(chosen["labels"]), mats, events)
        states, overall = analysis.typical_states(timeline.labels, mats)
        tps = analysis.turning_points(timeline) if len(mats) > 1 else []
        analysis.write_timeline(d / "timeline.csv", timeline)
        analysis.write_turning_points(d / "turning_points.csv", tps)
        matrix_core.write_matrices(d / "typical_states.bin", [
            *(matrix_core.CorrelationMatrix(s.matrix, kind, s.label, None) for s in states),
            matrix_core.CorrelationMatrix(overall, kind, 0, None),
        ])
        for s in states:
            render.render_heatmap(s.matrix, labels_axis, d / f"state_{s.label}.svg", kind,
                                  title=f"{kind}: state {s.label} ({s.count} epochs)")
        render.render_heatmap(overall, labels_axis, d / "overall.svg", kind,
                              title=f"{kind}: average over all {len(mats)} epochs")
        render.render_timeline(timeline, d / "timeline.svg", events, title=kind)
        summary = {
            "kind": kind,
            "k": timeline.k,
            "states": [{"state": s.label, "count": s.count, "mean_correlation": repr(s.mean_correlation)}
                       for s in states],
            "overall_mean_correlation": repr(matrix_core.mean_correlation(overall)),
            "turning_points": [{"epochs": list(tp.epoch_pair), "dates": list(tp.date_pair),
                                "from": tp.from_state, "to": tp.to_state, "new_state": tp.is_new_state}
                               for tp in tps],
            "label_map": {str(k): v for k, v in timeline.mapping.items()},
        }
        _dump_json(d / "summary.json", summary)
        counts[kind] = {s.label: s.count for s in states}
        means[kind] = {s.label: s.mean_correlation for s in states}
    tables = out / "tables"
    tables.mkdir(exist_ok=True)
    kmax = max((max(c) for c in counts.values()), default=0)
    for name, data, fmt in (("state_counts.csv", counts, str), ("mean_correlations.csv", means, repr)):
        with (tables / name).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["state", *cfg.kinds])
            for lab in range(1, kmax + 1):
                w.writerow([lab, *(fmt(data[k][lab]) if lab in data[k] else "" for k in cfg.kinds)])


def stage_robustness(cfg: RunConfig, out: Path) -> None:
    rob = cfg.robustness
    if not rob.get("enabled"):
        log.info("robustness block disabled")
        return
    r = read_returns(out / "returns.csv")
    d = out / "robustness"
    d.mkdir(exist_ok=True)
    summary = {}
    for kind in rob.get("kinds", []):
        doc = _hierarchy_doc(out / kind)
        k = doc["k_selected"]
        reference = np.array(doc["solutions"][k - 1]["labels"])
        sizes = [s for s in rob["sizes"] if s <= r.K]
        if len(sizes) < len(rob["sizes"]):
            log.warning("robustness: skipping subset sizes above K=%d", r.K)
        if not sizes:
            continue
        rep = analysis.subset_robustness(r, kind, sizes, rob["n_rep"], k, cfg.seed, T=cfg.epoch_length,
                                         restarts=rob["restarts"], reference=reference, use_pca=cfg.use_pca)
        analysis.write_ari(d / f"{kind}_ari.csv", rep)
        summary[kind] = [{key: (repr(v) if isinstance(v, float) else v) for key, v in row.items()}
                         for row in rep.summary()]
    _dump_json(d / "summary.json", summary)


STAGE_FUNCS = {
    "ingest": stage_ingest,
    "matrices": stage_matrices,
    "cluster": stage_cluster,
    "select-k": stage_select_k,
    "analyze": stage_analyze,
    "robustness": stage_robustness,
}


def run_stages(cfg: RunConfig, stages=STAGES) -> dict:
    with Run(cfg) as run:
        for name in stages:
            with run.stage(name):
                STAGE_FUNCS[name](cfg, run.out)
    return json.loads((run.out / MANIFEST).read_text())


def run_pipeline(cfg: RunConfig) -> dict:
    """Run every stage in order and return the manifest."""
    return run_stages(cfg, STAGES)
