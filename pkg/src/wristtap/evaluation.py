"""Protocol execution: featurize, train, score, and aggregate over the
window grid, splits, and forest seeds.

Each (cell, split, seed) triple trains one forest and yields one MetricSet;
cell-level numbers are arithmetic means over those classifiers, with the
per-classifier rows retained for dispersion reporting. Intent-recognition
runs additionally tally per-activity false-acceptance rates at each
classifier's EER threshold and every run collects the modal top-five
features by Gini importance.

Work items are independent, so `jobs` workers (fork-based) may run them in
parallel; results are reduced in a fixed order and are byte-identical for
any jobs setting.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from multiprocessing import get_context
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import GestureWindow, SensorKind, WindowParams
from .errors import EmptySplit, SingleClassTrials, WristtapError
from .features import feature_names, featurize
from .forest import score_batch, top_features, train_forest_xy
from .ingest import FIXED_TERMINALS, TERMINALS, Dataset
from .metrics import MetricSet, ScoredTrial, evaluate_trials, far_by_activity
from .protocols import (AUTH_TERMINAL_AGNOSTIC, AUTH_TERMINAL_SPECIFIC,
                        INTENT_USER_AGNOSTIC, ProtocolSpec, Split, WindowGrid,
                        split_auth_terminal_agnostic, split_auth_terminal_specific,
                        split_intent_user_agnostic)
from .windows import extract_activity_windows, extract_tap_windows, truncate_trailing

N_TOP_FEATURES = 5
TOP_FEATURE_ROWS = 10


@dataclass(frozen=True)
class DetailRow:
    s: float
    o: float
    seed: int
    split_id: str
    metrics: MetricSet


@dataclass(frozen=True)
class CellAggregate:
    s: float
    o: float
    n_classifiers: int
    metrics: MetricSet


@dataclass(frozen=True)
class TopFeatureRow:
    s: float
    o: float
    rank: int
    feature: str
    count: int


@dataclass(frozen=True)
class ActivityFarRow:
    s: float
    o: float
    activity: str
    count: float
    proportion_pct: float
    far: float


@dataclass(frozen=True)
class EvaluationReport:
    protocol: str
    detail: tuple[DetailRow, ...]
    cells: tuple[CellAggregate, ...]
    top_features: tuple[TopFeatureRow, ...]
    activity_far: tuple[ActivityFarRow, ...]
    skipped: tuple[str, ...]

    def cell(self, s: float, o: float) -> CellAggregate:
        for c in self.cells:
            if c.s == s and c.o == o:
                return c
        raise KeyError(f"no cell ({s}, {o})")


# Worker context, populated in the parent before forking so workers inherit
# the window lists and feature matrices without pickling them.
_CTX: dict = {}


def _featurize_task(args):
    key, lo, hi = args
    windows = _CTX["windows"][key][lo:hi]
    spec: ProtocolSpec = _CTX["spec"]
    rows = [featurize(w, spec.subset, spec.cutoff_hz, spec.peak_gate).values
            for w in windows]
    return key, lo, np.asarray(rows)


def _forest_task(item_idx: int):
    item = _CTX["items"][item_idx]
    spec: ProtocolSpec = _CTX["spec"]
    X = _CTX["X"][item["cell_idx"]]
    fp = spec.forest
    model = train_forest_xy(
        X[item["train_idx"]], item["y_train"], _CTX["schema"],
        n_trees=fp.n_trees, seed=item["seed"], mtry=fp.mtry,
        max_depth=fp.max_depth, min_split=fp.min_split, bootstrap=fp.bootstrap)
    scores = np.clip(score_batch(model, X[item["test_idx"]]), 0.0, 1.0)
    trials = [ScoredTrial(float(sc), bool(pos), user_id=item["target"],
                          group=grp, seed=item["seed"])
              for sc, pos, grp in zip(scores, item["y_test"], item["groups"])]
    try:
        metrics = evaluate_trials(trials, spec.theta)
    except SingleClassTrials:
        return {"cell_idx": item["cell_idx"], "split_id": item["split_id"],
                "seed": item["seed"], "skip": "single-class test side"}
    top = tuple(name for name, _ in top_features(model, N_TOP_FEATURES))
    out = {"cell_idx": item["cell_idx"], "split_id": item["split_id"],
           "seed": item["seed"], "metrics": metrics, "top": top}
    if _CTX["with_activity_far"]:
        rows = far_by_activity(trials, metrics.theta_eer)
        out["activity_far"] = [(r.activity, r.count, r.far) for r in rows
                               if r.count > 0 or r.activity == "all"]
    return out


def _warm_kernels():
    """Compile/load the numba kernels once in the parent before forking."""
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    model = train_forest_xy(X, np.array([0, 0, 1, 1]), ("f0",), n_trees=1, seed=0, mtry=1)
    score_batch(model, X)


def _map_tasks(tasks, fn, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    ctx = get_context("fork")
    with ctx.Pool(processes=min(jobs, len(tasks))) as pool:
        return list(pool.imap(fn, tasks, chunksize=max(1, len(tasks) // (jobs * 4))))


def _build_splits(spec: ProtocolSpec, windows: Sequence[GestureWindow],
                  users: Sequence[str], skipped: list[str], cell_tag: str) -> list[dict]:
    """Split descriptors for one cell: indices, labels, per-trial groups."""
    out = []

    def push(split: Split, target: str, groups_from: str):
        groups = []
        for i in split.test_idx:
            label = windows[i].label
            groups.append(label.terminal_id if groups_from == "terminal"
                          else ("" if windows[i].is_tap else label.activity))
        out.append({"split_id": split.split_id, "target": target,
                    "train_idx": split.train_idx, "test_idx": split.test_idx,
                    "y_train": split.y_train, "y_test": split.y_test,
                    "groups": tuple(groups)})

    if spec.kind == AUTH_TERMINAL_AGNOSTIC:
        for user in users:
            for terminal in FIXED_TERMINALS:
                try:
                    push(split_auth_terminal_agnostic(windows, user, terminal,
                                                      spec.enrollment_size), user, "terminal")
                except EmptySplit as e:
                    skipped.append(f"{cell_tag} {user}|x{terminal}: {e}")
    elif spec.kind == AUTH_TERMINAL_SPECIFIC:
        for user in users:
            for terminal in TERMINALS:
                try:
                    push(split_auth_terminal_specific(windows, user, terminal,
                                                      spec.enrollment_size), user, "terminal")
                except EmptySplit as e:
                    skipped.append(f"{cell_tag} {user}|t{terminal}: {e}")
    elif spec.kind == INTENT_USER_AGNOSTIC:
        for user in users:
            try:
                folds = split_intent_user_agnostic(windows, user, spec.fold_count)
            except EmptySplit as e:
                skipped.append(f"{cell_tag} {user}: {e}")
                continue
            # one classifier per user: the training side is identical across
            # folds, so the folds' test sides are scored together
            test_idx = np.sort(np.concatenate([f.test_idx for f in folds]))
            y_test = np.array([windows[i].is_tap for i in test_idx])
            pooled = Split(user, folds[0].train_idx, test_idx,
                           folds[0].y_train, y_test)
            push(pooled, user, "activity")
    else:
        raise WristtapError(f"unknown protocol kind {spec.kind!r}")
    return out


def run_protocol(dataset: Dataset, spec: ProtocolSpec, jobs: int | None = 1) -> EvaluationReport:
    """Evaluate a protocol over its window grid; see the module docstring."""
    jobs = os.cpu_count() or 1 if jobs is None else max(1, jobs)
    cells = spec.grid.cells()
    if not cells:
        raise WristtapError("window grid has no feasible cells")
    users = dataset.users()
    skipped: list[str] = []

    # Phase 1: cut windows per cell (plus shared non-tap windows for intent).
    cell_windows: dict[int, list[GestureWindow]] = {}
    nontap_by_size: dict[float, list[GestureWindow]] = {}
    if spec.kind == INTENT_USER_AGNOSTIC:
        nontap4, _ = extract_activity_windows(dataset, required=spec.subset)
        for params in cells:
            if params.size_s not in nontap_by_size:
                nontap_by_size[params.size_s] = [truncate_trailing(w, params.size_s)
                                                 for w in nontap4]
    for ci, params in enumerate(cells):
        taps, excluded = extract_tap_windows(dataset, params, required=spec.subset)
        if excluded:
            skipped.append(f"cell {params.size_s}/{params.offset_o}: "
                           f"{len(excluded)} tap windows excluded by coverage")
        rows = list(taps)
        if spec.kind == INTENT_USER_AGNOSTIC:
            rows.extend(nontap_by_size[params.size_s])
        cell_windows[ci] = rows

    # Phase 2: feature matrices (parallel over window chunks).
    schema = feature_names(spec.subset)
    _CTX.clear()
    _CTX.update({"windows": cell_windows, "spec": spec})
    chunk = 512
    tasks = [(ci, lo, min(lo + chunk, len(ws)))
             for ci, ws in cell_windows.items() for lo in range(0, len(ws), chunk)]
    X_parts: dict[int, dict[int, np.ndarray]] = {ci: {} for ci in cell_windows}
    for ci, lo, arr in _map_tasks(tasks, _featurize_task, jobs):
        X_parts[ci][lo] = arr
    X: dict[int, np.ndarray] = {}
    for ci, ws in cell_windows.items():
        parts = [X_parts[ci][lo] for lo in sorted(X_parts[ci])]
        X[ci] = np.vstack(parts) if parts else np.empty((0, len(schema)))

    # Phase 3: work items = cells x splits x seeds.
    items = []
    for ci, params in enumerate(cells):
        tag = f"cell {params.size_s}/{params.offset_o}"
        for desc in _build_splits(spec, cell_windows[ci], users, skipped, tag):
            for seed in spec.seeds:
                items.append(dict(desc, cell_idx=ci, seed=seed))

    _warm_kernels()
    _CTX.update({"X": X, "schema": schema, "items": items,
                 "with_activity_far": spec.kind == INTENT_USER_AGNOSTIC})
    results = _map_tasks(list(range(len(items))), _forest_task, jobs)
    _CTX.clear()

    # Phase 4: deterministic reduction.
    detail: list[DetailRow] = []
    per_cell: dict[int, list[MetricSet]] = {ci: [] for ci in range(len(cells))}
    top_counts: dict[int, dict[str, int]] = {ci: {} for ci in range(len(cells))}
    act_acc: dict[int, dict[str, list]] = {ci: {} for ci in range(len(cells))}
    for res in sorted(results, key=lambda r: (r["cell_idx"], r["split_id"], r["seed"])):
        ci = res["cell_idx"]
        params = cells[ci]
        if "skip" in res:
            skipped.append(f"cell {params.size_s}/{params.offset_o} "
                           f"{res['split_id']} seed {res['seed']}: {res['skip']}")
            continue
        detail.append(DetailRow(params.size_s, params.offset_o, res["seed"],
                                res["split_id"], res["metrics"]))
        per_cell[ci].append(res["metrics"])
        for name in res["top"]:
            top_counts[ci][name] = top_counts[ci].get(name, 0) + 1
        for activity, count, far in res.get("activity_far", ()):
            act_acc[ci].setdefault(activity, []).append((count, far))

    cell_rows = []
    for ci, params in enumerate(cells):
        bucket = per_cell[ci]
        if not bucket:
            continue
        mean = MetricSet(**{f: float(np.mean([getattr(m, f) for m in bucket]))
                            for f in MetricSet.__dataclass_fields__})
        cell_rows.append(CellAggregate(params.size_s, params.offset_o, len(bucket), mean))

    schema_rank = {name: i for i, name in enumerate(schema)}
    top_rows = []
    for ci, params in enumerate(cells):
        ranked = sorted(top_counts[ci].items(), key=lambda kv: (-kv[1], schema_rank[kv[0]]))
        for rank, (name, count) in enumerate(ranked[:TOP_FEATURE_ROWS], start=1):
            top_rows.append(TopFeatureRow(params.size_s, params.offset_o, rank, name, count))

    act_rows = []
    n_seeds = len(spec.seeds)
    for ci, params in enumerate(cells):
        groups = act_acc[ci]
        if not groups:
            continue
        total_per_seed = sum(c for c, _ in groups.get("all", [])) / n_seeds
        for activity in ("walking", "bus_or_train", "in_store", "all"):
            if activity not in groups:
                continue
            counts = [c for c, _ in groups[activity]]
            fars = [f for _, f in groups[activity]]
            mean_count = sum(counts) / n_seeds
            pct = 100.0 * mean_count / total_per_seed if total_per_seed else 0.0
            act_rows.append(ActivityFarRow(params.size_s, params.offset_o, activity,
                                           mean_count, pct, float(np.mean(fars))))

    return EvaluationReport(
        protocol=spec.kind, detail=tuple(detail), cells=tuple(cell_rows),
        top_features=tuple(top_rows), activity_far=tuple(act_rows),
        skipped=tuple(skipped))


def enrollment_sweep(dataset: Dataset, sizes: Sequence[int],
                     cell: WindowParams = WindowParams(2.5, 0.0),
                     spec: ProtocolSpec | None = None,
                     jobs: int | None = 1) -> list[tuple[int, float]]:
    """Mean authentication EER for each enrollment size.

    The positive training class of every terminal-agnostic split is
    subsampled to `size` gestures spread round-robin over the training
    terminals; negatives are untouched.
    """
    base = spec or ProtocolSpec(kind=AUTH_TERMINAL_AGNOSTIC)
    out = []
    for size in sizes:
        run = replace(base, kind=AUTH_TERMINAL_AGNOSTIC, enrollment_size=int(size),
                      grid=WindowGrid.single(cell.size_s, cell.offset_o))
        report = run_protocol(dataset, run, jobs=jobs)
        if not report.cells:
            raise EmptySplit(f"enrollment size {size}: no classifier produced metrics")
        out.append((int(size), report.cells[0].metrics.eer))
    return out


_METRIC_COLUMNS = ("precision", "recall", "f", "eer", "theta_eer",
                   "far_opt", "theta_opt", "far_delta")


def _metric_values(m: MetricSet) -> tuple[float, ...]:
    return (m.precision, m.recall, m.f_measure, m.eer, m.theta_eer,
            m.far_at_min_frr, m.theta_opt, m.far_delta)


def render_heatmap(report: EvaluationReport, metric: str) -> str:
    """Plain-text grid of one cell metric: offsets down, sizes across."""
    idx = _METRIC_COLUMNS.index(metric)
    sizes = sorted({c.s for c in report.cells})
    offsets = sorted({c.o for c in report.cells}, reverse=True)
    lookup = {(c.s, c.o): _metric_values(c.metrics)[idx] for c in report.cells}
    width = 7
    lines = [f"{report.protocol}: {metric} by window size (columns) and offset (rows)"]
    lines.append("o\\s".rjust(6) + "".join(f"{s:>{width}.1f}" for s in sizes))
    for o in offsets:
        row = [f"{o:>6.1f}"]
        for s in sizes:
            v = lookup.get((s, o))
            row.append(" " * (width - 1) + "-" if v is None else f"{v:>{width}.3f}")
        lines.append("".join(row))
    return "\n".join(lines) + "\n"


def best_cells(report: EvaluationReport) -> dict[str, CellAggregate]:
    """Highest-F cells overall and within the real-time region (o >= 0)."""
    if not report.cells:
        raise WristtapError("report has no cells")
    ranked = sorted(report.cells, key=lambda c: (-c.metrics.f_measure, c.s, c.o))
    out = {"all": ranked[0]}
    in_store = [c for c in ranked if c.o >= 0]
    if in_store:
        out["in_store"] = in_store[0]
    return out


def write_report(report: EvaluationReport, out_dir, prefix: str | None = None) -> list[Path]:
    """Write the detail/aggregate/top-feature CSVs and text heatmaps."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = prefix or report.protocol
    paths = []

    def emit(name: str, text: str):
        path = out_dir / name
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        paths.append(path)

    lines = ["s,o,seed,split_id," + ",".join(_METRIC_COLUMNS)]
    for row in report.detail:
        vals = ",".join(repr(v) for v in _metric_values(row.metrics))
        lines.append(f"{row.s!r},{row.o!r},{row.seed},{row.split_id},{vals}")
    emit(f"{prefix}_detail.csv", "\n".join(lines) + "\n")

    lines = ["s,o,n_classifiers," + ",".join(_METRIC_COLUMNS)]
    for cell in report.cells:
        vals = ",".join(repr(v) for v in _metric_values(cell.metrics))
        lines.append(f"{cell.s!r},{cell.o!r},{cell.n_classifiers},{vals}")
    emit(f"{prefix}_cells.csv", "\n".join(lines) + "\n")

    lines = ["s,o,rank,feature,count"]
    for row in report.top_features:
        lines.append(f"{row.s!r},{row.o!r},{row.rank},{row.feature},{row.count}")
    emit(f"{prefix}_top_features.csv", "\n".join(lines) + "\n")

    if report.activity_far:
        lines = ["s,o,activity,count,proportion_pct,far"]
        for row in report.activity_far:
            lines.append(f"{row.s!r},{row.o!r},{row.activity},{row.count!r},"
                         f"{row.proportion_pct!r},{row.far!r}")
        emit(f"{prefix}_activity_far.csv", "\n".join(lines) + "\n")

    for metric in ("f", "eer", "far_opt", "far_delta"):
        emit(f"{prefix}_heatmap_{metric}.txt", render_heatmap(report, metric))

    if report.skipped:
        emit(f"{prefix}_skipped.txt", "\n".join(report.skipped) + "\n")
    return paths
