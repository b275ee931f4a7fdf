"""Command-line front end.

Commands: validate, synth, sweep, train, eval, bench, report. Global
flags --config/--seed/--jobs/--out apply to every command; any flag
overrides its config-file counterpart.

Exit codes: 0 success, 2 configuration or validation error, 3 data or
processing error. Malformed input is reported, never a traceback.
"""

from __future__ import annotations

import argparse
import statistics
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, apply_overrides, load_config, write_run_manifest
from .core import SensorKind, WindowParams
from .errors import ConfigError, WristtapError
from .evaluation import (EvaluationReport, best_cells, render_heatmap,
                         run_protocol, write_report)
from .features import featurize
from .forest import load_model, save_model, score, train_forest_xy
from .ingest import load_dataset, validate_sampling
from .metrics import MetricSet, ScoredTrial, evaluate_trials
from .protocols import (AUTH_TERMINAL_AGNOSTIC, AUTH_TERMINAL_SPECIFIC,
                        INTENT_USER_AGNOSTIC, PROTOCOL_KINDS,
                        split_auth_terminal_agnostic, split_auth_terminal_specific,
                        split_intent_user_agnostic)
from .synth import generate_population
from .windows import extract_activity_windows, extract_tap_windows, truncate_trailing

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3

_KIND_BY_NAME = {k.value: k for k in SensorKind}


def _parse_cell(text: str) -> WindowParams:
    try:
        s, o = (float(v) for v in text.split(","))
        return WindowParams(s, o)
    except (ValueError, WristtapError) as e:
        raise ConfigError(f"--cell: {e}") from None


def _print_metrics(m: MetricSet):
    print(f"  precision {m.precision:.4f}  recall {m.recall:.4f}  f {m.f_measure:.4f}")
    print(f"  eer {m.eer:.4f} (theta {m.theta_eer:.4f})")
    print(f"  far at min-FRR {m.far_at_min_frr:.4f} (theta {m.theta_opt:.4f})"
          f"  far_delta {m.far_delta:.4f}")


def cmd_validate(args, config: RunConfig) -> int:
    root = Path(args.data or config.dataset_path or ".")
    if not root.exists():
        print(f"error: dataset path {root} does not exist")
        return EXIT_CONFIG
    try:
        dataset = load_dataset(root)
    except WristtapError as e:
        print(f"error: {e}")
        return EXIT_CONFIG
    for line in dataset.summary().lines():
        print(line)
    clean = True
    for stream in dataset.streams:
        counts = {k.value: len(stream.series(k)) for k in SensorKind}
        print(f"stream {stream.user_id}/{stream.session_id}: "
              + ", ".join(f"{k}={v}" for k, v in counts.items()))
        gaps = validate_sampling(stream)
        for gap in gaps:
            print(f"  gap: {gap.sensor.value} [{gap.start_ms}, {gap.end_ms}] "
                  f"({gap.duration_ms} ms)")
        clean = clean and not gaps
    wants_auth = any(k.startswith("auth") for k in config.protocol_kinds)
    wants_intent = INTENT_USER_AGNOSTIC in config.protocol_kinds
    if wants_auth and not dataset.nfc_events:
        print("error: configured authentication protocol needs an NFC events file")
        return EXIT_CONFIG
    if wants_intent and not dataset.activity_spans:
        print("error: configured intent protocol needs an activity spans file")
        return EXIT_CONFIG
    if not clean:
        print("validation found sampling gaps")
        return EXIT_CONFIG
    print("dataset is clean")
    return EXIT_OK


def cmd_synth(args, config: RunConfig) -> int:
    users = args.users if args.users is not None else config.synth.users
    gestures = args.gestures if args.gestures is not None else config.synth.gestures_per_user
    minutes = args.minutes if args.minutes is not None else config.synth.activity_minutes
    if users < 1 or gestures < 1 or minutes < 0:
        print("error: synth parameters must be positive")
        return EXIT_CONFIG
    out = Path(config.out_dir)
    dataset = generate_population(users, gestures, minutes, config.seed, out_dir=out)
    print(f"wrote dataset to {out}")
    for line in dataset.summary().lines():
        print(line)
    return EXIT_OK


def _load_for_run(config: RunConfig, data_arg: str | None):
    root = data_arg or config.dataset_path
    if not root:
        raise ConfigError("no dataset: pass --data or set [dataset] path")
    if not Path(root).exists():
        raise ConfigError(f"dataset path {root} does not exist")
    return load_dataset(root)


def cmd_sweep(args, config: RunConfig) -> int:
    dataset = _load_for_run(config, args.data)
    kinds = [args.protocol] if args.protocol else list(config.protocol_kinds)
    out = Path(config.out_dir)
    write_run_manifest(config, out)
    for kind in kinds:
        spec = config.protocol_spec(kind)
        report = run_protocol(dataset, spec, jobs=config.jobs)
        write_report(report, out)
        print(f"[{kind}] {len(report.detail)} classifier evaluations over "
              f"{len(report.cells)} cells")
        for region, cell in best_cells(report).items():
            m = cell.metrics
            print(f"  best ({region}): s={cell.s}, o={cell.o}  "
                  f"f={m.f_measure:.4f} eer={m.eer:.4f} far_opt={m.far_at_min_frr:.4f}")
    print(f"reports written to {out}")
    return EXIT_OK


def _cell_windows(dataset, spec_kind: str, params: WindowParams, config: RunConfig):
    taps, _ = extract_tap_windows(dataset, params, required=config.sensors)
    rows = list(taps)
    if spec_kind == INTENT_USER_AGNOSTIC:
        nontaps, _ = extract_activity_windows(dataset, required=config.sensors)
        rows.extend(truncate_trailing(w, params.size_s) for w in nontaps)
    return rows


def _split_for(kind: str, windows, user: str, terminal: str | None, fold_count: int):
    if kind == AUTH_TERMINAL_AGNOSTIC:
        if terminal is None:
            raise ConfigError("--terminal is required for terminal-agnostic training")
        return split_auth_terminal_agnostic(windows, user, terminal)
    if kind == AUTH_TERMINAL_SPECIFIC:
        if terminal is None:
            raise ConfigError("--terminal is required for terminal-specific training")
        return split_auth_terminal_specific(windows, user, terminal)
    folds = split_intent_user_agnostic(windows, user, fold_count)
    test_idx = np.sort(np.concatenate([f.test_idx for f in folds]))
    y_test = np.array([windows[i].is_tap for i in test_idx])
    from .protocols import Split
    return Split(user, folds[0].train_idx, test_idx, folds[0].y_train, y_test)


def _featurize_rows(windows, config: RunConfig) -> np.ndarray:
    return np.array([featurize(w, config.sensors, config.cutoff_hz, config.peak_gate).values
                     for w in windows])


def cmd_train(args, config: RunConfig) -> int:
    dataset = _load_for_run(config, args.data)
    params = _parse_cell(args.cell)
    windows = _cell_windows(dataset, args.protocol, params, config)
    split = _split_for(args.protocol, windows, args.user, args.terminal, config.fold_count)
    from .features import feature_names
    X = _featurize_rows(windows, config)
    model = train_forest_xy(
        X[split.train_idx], split.y_train, feature_names(config.sensors),
        n_trees=config.forest.n_trees, seed=config.seed, mtry=config.forest.mtry,
        max_depth=config.forest.max_depth, min_split=config.forest.min_split,
        bootstrap=config.forest.bootstrap,
        meta=(("protocol", args.protocol), ("s", repr(params.size_s)),
              ("o", repr(params.offset_o)), ("user", args.user),
              ("terminal", args.terminal or ""),
              ("sensors", ",".join(k.value for k in config.sensors)),
              ("cutoff_hz", repr(config.cutoff_hz)), ("peak_gate", repr(config.peak_gate)),
              ("theta", repr(config.theta))))
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = Path(args.model_out) if args.model_out else out / "model.txt"
    save_model(model, path)
    from .forest import top_features
    print(f"trained on {len(split.train_idx)} windows "
          f"({int(split.y_train.sum())} positive), model at {path}")
    for name, imp in top_features(model, 5):
        print(f"  {name}  {imp:.4f}")
    return EXIT_OK


def _model_run_context(model, config: RunConfig):
    meta = dict(model.meta)
    for key in ("protocol", "s", "o", "user", "sensors"):
        if key not in meta:
            raise WristtapError(f"model file lacks run metadata {key!r}; retrain with cmd train")
    params = WindowParams(float(meta["s"]), float(meta["o"]))
    run_config = replace(
        config,
        sensors=tuple(_KIND_BY_NAME[t] for t in meta["sensors"].split(",")),
        cutoff_hz=float(meta["cutoff_hz"]),
        peak_gate=float(meta["peak_gate"]))
    return meta, params, run_config


def cmd_eval(args, config: RunConfig) -> int:
    model = load_model(args.model)
    dataset = _load_for_run(config, args.data)
    meta, params, run_config = _model_run_context(model, config)
    windows = _cell_windows(dataset, meta["protocol"], params, run_config)
    split = _split_for(meta["protocol"], windows, meta["user"],
                       meta.get("terminal") or None, config.fold_count)
    from .forest import score_batch
    X = _featurize_rows([windows[i] for i in split.test_idx], run_config)
    scores = np.clip(score_batch(model, X), 0.0, 1.0)
    trials = []
    for sc, pos, idx in zip(scores, split.y_test, split.test_idx):
        label = windows[idx].label
        group = label.terminal_id if windows[idx].is_tap else label.activity
        trials.append(ScoredTrial(float(sc), bool(pos), meta["user"], group))
    metrics = evaluate_trials(trials, float(meta.get("theta", config.theta)))
    print(f"evaluated {len(trials)} windows for {meta['user']} "
          f"({meta['protocol']}, s={params.size_s}, o={params.offset_o})")
    _print_metrics(metrics)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trials_path = out / "eval_trials.csv"
    with open(trials_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("score,positive,user,group\n")
        for t in trials:
            fh.write(f"{t.score!r},{int(t.positive)},{t.user_id},{t.group}\n")
    print(f"trials written to {trials_path}")
    return EXIT_OK


def cmd_bench(args, config: RunConfig) -> int:
    model = load_model(args.model)
    dataset = _load_for_run(config, args.data)
    meta, params, run_config = _model_run_context(model, config)
    taps, _ = extract_tap_windows(dataset, params, required=run_config.sensors)
    if not taps:
        raise WristtapError("no tap window available to benchmark")
    window = taps[0]
    featurize(window, run_config.sensors, run_config.cutoff_hz, run_config.peak_gate)
    reps = args.reps
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fv = featurize(window, run_config.sensors, run_config.cutoff_hz,
                       run_config.peak_gate)
        score(model, fv)
        samples.append((time.perf_counter() - t0) * 1000.0)
    samples.sort()
    median = statistics.median(samples)
    p95 = samples[min(len(samples) - 1, int(0.95 * len(samples)))]
    print(f"featurize+score over {reps} repetitions: "
          f"median {median:.3f} ms, p95 {p95:.3f} ms")
    return EXIT_OK


_METRIC_FIELDS = ("precision", "recall", "f_measure", "eer", "theta_eer",
                  "far_at_min_frr", "theta_opt", "far_delta")


def cmd_report(args, config: RunConfig) -> int:
    from .evaluation import CellAggregate, DetailRow
    run_dir = Path(args.run_dir)
    detail_files = sorted(run_dir.glob("*_detail.csv"))
    if not detail_files:
        print(f"error: no *_detail.csv under {run_dir}")
        return EXIT_DATA
    for path in detail_files:
        prefix = path.name[: -len("_detail.csv")]
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline()
            for line in fh:
                parts = line.rstrip("\n").split(",")
                s, o, seed, split_id = float(parts[0]), float(parts[1]), int(parts[2]), parts[3]
                metrics = MetricSet(**dict(zip(_METRIC_FIELDS, map(float, parts[4:]))))
                rows.append(DetailRow(s, o, seed, split_id, metrics))
        cells = {}
        for row in rows:
            cells.setdefault((row.s, row.o), []).append(row.metrics)
        aggregates = []
        for (s, o), bucket in sorted(cells.items()):
            mean = MetricSet(**{f: float(np.mean([getattr(m, f) for m in bucket]))
                                for f in _METRIC_FIELDS})
            aggregates.append(CellAggregate(s, o, len(bucket), mean))
        report = EvaluationReport(protocol=prefix, detail=tuple(rows),
                                  cells=tuple(aggregates), top_features=(),
                                  activity_far=(), skipped=())
        lines = ["s,o,n_classifiers,precision,recall,f,eer,theta_eer,far_opt,"
                 "theta_opt,far_delta"]
        for cell in aggregates:
            m = cell.metrics
            vals = ",".join(repr(v) for v in (m.precision, m.recall, m.f_measure, m.eer,
                                              m.theta_eer, m.far_at_min_frr, m.theta_opt,
                                              m.far_delta))
            lines.append(f"{cell.s!r},{cell.o!r},{cell.n_classifiers},{vals}")
        with open(run_dir / f"{prefix}_cells.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        for metric in ("f", "eer", "far_opt", "far_delta"):
            with open(run_dir / f"{prefix}_heatmap_{metric}.txt", "w",
                      encoding="utf-8", newline="\n") as fh:
                fh.write(render_heatmap(report, metric))
        print(f"[{prefix}] re-aggregated {len(rows)} rows into {len(aggregates)} cells")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wristtap",
        description="Tap-gesture biometrics: synthesis, validation, sweeps, "
                    "training, evaluation, benchmarks.")
    parser.add_argument("--config", help="INI run configuration file")
    parser.add_argument("--seed", type=int, help="root seed (protocol seeds count up from it)")
    parser.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
    parser.add_argument("--out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a dataset directory")
    p.add_argument("data", nargs="?", help="dataset root (default: config dataset path)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synth", help="generate a synthetic dataset into --out")
    p.add_argument("--users", type=int)
    p.add_argument("--gestures", type=int)
    p.add_argument("--minutes", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sweep", help="run protocols over the window grid")
    p.add_argument("--data", help="dataset root")
    p.add_argument("--protocol", choices=PROTOCOL_KINDS)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="train one classifier and save the model")
    p.add_argument("--data", help="dataset root")
    p.add_argument("--protocol", choices=PROTOCOL_KINDS, default=AUTH_TERMINAL_AGNOSTIC)
    p.add_argument("--cell", required=True, help="window cell as size,offset (e.g. 2.5,0)")
    p.add_argument("--user", required=True, help="target user id")
    p.add_argument("--terminal", help="excluded (agnostic) or fixed (specific) terminal")
    p.add_argument("--model-out", help="model file path (default: OUT/model.txt)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model on its test split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", help="dataset root")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="latency of featurize+score on one gesture")
    p.add_argument("--model", required=True)
    p.add_argument("--data", help="dataset root")
    p.add_argument("--reps", type=int, default=10000)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="re-aggregate CSV reports in a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        config = apply_overrides(config, args.seed, args.jobs, args.out,
                                 getattr(args, "data", None))
    except ConfigError as e:
        print(f"config error: {e}")
        return EXIT_CONFIG
    try:
        return args.func(args, config)
    except ConfigError as e:
        print(f"config error: {e}")
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"error: {e}")
        return EXIT_DATA
    except WristtapError as e:
        print(f"error: {e}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
