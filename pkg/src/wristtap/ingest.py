"""Dataset ingestion: sensor streams, contact-point events, activity spans.

On-disk layout (all CSV, UTF-8, LF, header row, `.` decimal point):

- one sensor file per user-session with columns `t_ms,sensor,x,y,z,w`,
  where `sensor` is one of Acc/Gyr/LAc/GRV and `w` is empty for the
  triaxial sensors;
- an events file `t_ms,user_id,session_id,terminal_id` with terminals
  drawn from {1,2,3,4,5,6,F};
- an activity file `user_id,activity,start_ms,end_ms` with activities in
  {walking,bus_or_train,in_store,combined};
- a `manifest.ini` naming those files and the nominal sampling rate.

Gyroscope values are stored and consumed as deg/s; every feature is
unit-consistent within its dimension, so the convention only scales
features uniformly.

Loading sorts each per-sensor list by timestamp (keeping the last-received
sample on duplicate timestamps), normalizes rotation-vector quaternions to
unit norm, and verifies referential integrity. Loading is deterministic
and independent of file-listing order.
"""

from __future__ import annotations

import configparser
import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd

from .core import (ACTIVITIES, ALL_KINDS, QuaternionSeries, SensorKind,
                   SensorStream, TriaxialSeries)
from .errors import DanglingReference, MalformedRecord, MissingSensor, WristtapError

log = logging.getLogger(__name__)

TERMINALS = ("1", "2", "3", "4", "5", "6", "F")
FIXED_TERMINALS = ("1", "2", "3", "4", "5", "6")

MANIFEST_NAME = "manifest.ini"
SENSOR_HEADER = ["t_ms", "sensor", "x", "y", "z", "w"]
EVENTS_HEADER = ["t_ms", "user_id", "session_id", "terminal_id"]
ACTIVITY_HEADER = ["user_id", "activity", "start_ms", "end_ms"]

DEFAULT_GAP_TOLERANCE = 0.5


@dataclass(frozen=True)
class NfcEvent:
    """A contact-point timestamp anchoring one tap gesture."""

    t0_ms: int
    user_id: str
    session_id: str
    terminal_id: str

    def __post_init__(self):
        if self.terminal_id not in TERMINALS:
            raise WristtapError(f"terminal_id must be one of {TERMINALS}, got {self.terminal_id!r}")


@dataclass(frozen=True)
class ActivitySpan:
    """A labelled out-of-lab activity interval in a user's stream timebase."""

    user_id: str
    activity: str
    start_ms: int
    end_ms: int

    def __post_init__(self):
        if self.activity not in ACTIVITIES:
            raise WristtapError(f"unknown activity {self.activity!r}")
        if self.end_ms <= self.start_ms:
            raise WristtapError("activity span must have end_ms > start_ms")


@dataclass(frozen=True)
class Dataset:
    """A validated, in-memory corpus: streams plus their event annotations."""

    streams: tuple[SensorStream, ...]
    nfc_events: tuple[NfcEvent, ...]
    activity_spans: tuple[ActivitySpan, ...]

    def __post_init__(self):
        keys = {(s.user_id, s.session_id) for s in self.streams}
        users = {s.user_id for s in self.streams}
        for ev in self.nfc_events:
            if (ev.user_id, ev.session_id) not in keys:
                raise DanglingReference(
                    f"event cites stream {ev.user_id}/{ev.session_id} which does not exist")
        for span in self.activity_spans:
            if span.user_id not in users:
                raise DanglingReference(f"activity span cites unknown user {span.user_id}")

    def stream(self, user_id: str, session_id: str) -> SensorStream:
        for s in self.streams:
            if s.user_id == user_id and s.session_id == session_id:
                return s
        raise KeyError(f"no stream {user_id}/{session_id}")

    def users(self) -> tuple[str, ...]:
        return tuple(sorted({s.user_id for s in self.streams}))

    def events_for(self, user_id: str, session_id: str) -> tuple[NfcEvent, ...]:
        return tuple(e for e in self.nfc_events
                     if e.user_id == user_id and e.session_id == session_id)

    def stream_for_span(self, span: ActivitySpan) -> SensorStream | None:
        """The user's stream with the largest time overlap with the span."""
        best, best_overlap = None, 0
        for s in sorted((s for s in self.streams if s.user_id == span.user_id),
                        key=lambda s: s.session_id):
            lo, hi = s.extent_ms()
            overlap = min(hi, span.end_ms) - max(lo, span.start_ms)
            if overlap > best_overlap:
                best, best_overlap = s, overlap
        return best

    def summary(self) -> "LoadSummary":
        samples = {k.value: 0 for k in ALL_KINDS}
        per_user: dict[str, int] = {}
        for s in self.streams:
            for kind in ALL_KINDS:
                samples[kind.value] += len(s.series(kind))
            per_user[s.user_id] = per_user.get(s.user_id, 0) + s.sample_count()
        events_by_terminal: dict[str, int] = {}
        for ev in self.nfc_events:
            events_by_terminal[ev.terminal_id] = events_by_terminal.get(ev.terminal_id, 0) + 1
        spans_by_activity: dict[str, int] = {}
        for span in self.activity_spans:
            spans_by_activity[span.activity] = spans_by_activity.get(span.activity, 0) + 1
        return LoadSummary(
            n_streams=len(self.streams), n_events=len(self.nfc_events),
            n_spans=len(self.activity_spans), samples_by_sensor=samples,
            samples_by_user=dict(sorted(per_user.items())),
            events_by_terminal=dict(sorted(events_by_terminal.items())),
            spans_by_activity=dict(sorted(spans_by_activity.items())),
        )


@dataclass(frozen=True)
class LoadSummary:
    n_streams: int
    n_events: int
    n_spans: int
    samples_by_sensor: dict[str, int]
    samples_by_user: dict[str, int]
    events_by_terminal: dict[str, int]
    spans_by_activity: dict[str, int]

    def lines(self) -> list[str]:
        out = [f"streams: {self.n_streams}, nfc events: {self.n_events}, "
               f"activity spans: {self.n_spans}"]
        out.append("samples by sensor: "
                   + ", ".join(f"{k}={v}" for k, v in self.samples_by_sensor.items()))
        if self.events_by_terminal:
            out.append("events by terminal: "
                       + ", ".join(f"{k}={v}" for k, v in self.events_by_terminal.items()))
        if self.spans_by_activity:
            out.append("spans by activity: "
                       + ", ".join(f"{k}={v}" for k, v in self.spans_by_activity.items()))
        return out


@dataclass(frozen=True)
class GapInterval:
    sensor: SensorKind
    start_ms: int
    end_ms: int

    @property
    def duration_ms(self) -> int:
        return self.end_ms - self.start_ms


def validate_sampling(stream: SensorStream, nominal_hz: float | None = None,
                      tolerance: float = DEFAULT_GAP_TOLERANCE) -> list[GapInterval]:
    """Maximal intervals where inter-sample spacing exceeds the tolerated period.

    A gap is a run of consecutive sample pairs spaced more than
    (1/nominal_hz) * (1 + tolerance) apart; adjacent oversized spacings
    merge into one interval. The stream is never mutated.
    """
    hz = stream.nominal_rate_hz if nominal_hz is None else nominal_hz
    limit = (1000.0 / hz) * (1.0 + tolerance)
    gaps: list[GapInterval] = []
    for kind in ALL_KINDS:
        t = stream.series(kind).t_ms
        if len(t) < 2:
            continue
        big = np.diff(t) > limit
        if not big.any():
            continue
        idx = np.flatnonzero(big)
        run_start = idx[0]
        prev = idx[0]
        for i in idx[1:]:
            if i != prev + 1:
                gaps.append(GapInterval(kind, int(t[run_start]), int(t[prev + 1])))
                run_start = i
            prev = i
        gaps.append(GapInterval(kind, int(t[run_start]), int(t[prev + 1])))
    return gaps


def _scan_sensor_file(path: Path):
    """Line-by-line fallback parser; pinpoints the first malformed record."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SENSOR_HEADER:
            raise MalformedRecord(path, 1, f"expected header {','.join(SENSOR_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 6:
                raise MalformedRecord(path, line_no, f"expected 6 fields, got {len(row)}")
            t_ms, sensor, x, y, z, w = row
            try:
                t = int(t_ms)
            except ValueError:
                raise MalformedRecord(path, line_no, f"bad timestamp {t_ms!r}") from None
            if t < 0:
                raise MalformedRecord(path, line_no, "negative timestamp")
            if sensor not in ("Acc", "Gyr", "LAc", "GRV"):
                raise MalformedRecord(path, line_no, f"unknown sensor {sensor!r}")
            vals = []
            for field_name, field in (("x", x), ("y", y), ("z", z)):
                try:
                    v = float(field)
                except ValueError:
                    raise MalformedRecord(path, line_no,
                                          f"non-numeric {field_name} field {field!r}") from None
                if not math.isfinite(v):
                    raise MalformedRecord(path, line_no, f"non-finite {field_name} value")
                vals.append(v)
            if sensor == "GRV":
                try:
                    wv = float(w)
                except ValueError:
                    raise MalformedRecord(path, line_no, f"non-numeric w field {w!r}") from None
                if not math.isfinite(wv):
                    raise MalformedRecord(path, line_no, "non-finite w value")
            elif w != "":
                raise MalformedRecord(path, line_no, f"triaxial record must leave w empty, got {w!r}")


def _load_sensor_file(path: Path, user_id: str, session_id: str,
                      nominal_rate_hz: float) -> SensorStream:
    try:
        df = pd.read_csv(path, dtype={"t_ms": "int64", "sensor": "string", "x": "float64",
                                      "y": "float64", "z": "float64", "w": "float64"})
    except (ValueError, pd.errors.ParserError):
        _scan_sensor_file(path)  # raises MalformedRecord with the line number
        raise  # unreachable unless the failure was pandas-only
    if list(df.columns) != SENSOR_HEADER:
        raise MalformedRecord(path, 1, f"expected header {','.join(SENSOR_HEADER)}")

    known = df["sensor"].isin(["Acc", "Gyr", "LAc", "GRV"])
    if not known.all():
        _scan_sensor_file(path)
    finite = np.isfinite(df[["x", "y", "z"]].to_numpy()).all(axis=1) & (df["t_ms"].to_numpy() >= 0)
    if not finite.all():
        _scan_sensor_file(path)
        raise MalformedRecord(path, int(np.flatnonzero(~finite)[0]) + 2, "non-finite value")

    def pick(name: str, quaternion: bool):
        sub = df[df["sensor"] == name]
        t = sub["t_ms"].to_numpy()
        cols = ["x", "y", "z", "w"] if quaternion else ["x", "y", "z"]
        vals = sub[cols].to_numpy()
        if quaternion:
            bad = ~np.isfinite(vals[:, 3])
            if bad.any():
                line = int(sub.index[np.flatnonzero(bad)[0]]) + 2
                raise MalformedRecord(path, line, "GRV record needs a numeric w field")
        elif len(sub) and np.isfinite(sub["w"].to_numpy()).any():
            line = int(sub.index[np.flatnonzero(np.isfinite(sub['w'].to_numpy()))[0]]) + 2
            raise MalformedRecord(path, line, "triaxial record must leave w empty")
        # sort by timestamp; on duplicates keep the last-received sample
        rows = sub.index.to_numpy()
        order = np.argsort(t, kind="stable")
        t, vals, rows = t[order], vals[order], rows[order]
        if len(t) > 1:
            keep = np.append(t[:-1] != t[1:], True)
            dropped = len(t) - int(keep.sum())
            if dropped:
                log.warning("%s: dropped %d duplicate %s timestamps (kept last received)",
                            path, dropped, name)
            t, vals, rows = t[keep], vals[keep], rows[keep]
        if quaternion:
            norms = np.sqrt((vals * vals).sum(axis=1))
            zero = norms <= 1e-12
            if zero.any():
                line = int(rows[np.flatnonzero(zero)[0]]) + 2
                raise MalformedRecord(path, line, "zero-norm quaternion")
            vals = vals / norms[:, None]
            return QuaternionSeries(t, vals)
        return TriaxialSeries(t, vals)

    return SensorStream(
        user_id=user_id, session_id=session_id, nominal_rate_hz=nominal_rate_hz,
        acc=pick("Acc", False), gyr=pick("Gyr", False),
        lac=pick("LAc", False), grv=pick("GRV", True),
    )


def _load_events_file(path: Path) -> list[NfcEvent]:
    events = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != EVENTS_HEADER:
            raise MalformedRecord(path, 1, f"expected header {','.join(EVENTS_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise MalformedRecord(path, line_no, f"expected 4 fields, got {len(row)}")
            t_ms, user_id, session_id, terminal_id = row
            try:
                t0 = int(t_ms)
            except ValueError:
                raise MalformedRecord(path, line_no, f"bad timestamp {t_ms!r}") from None
            if terminal_id not in TERMINALS:
                raise MalformedRecord(path, line_no, f"unknown terminal {terminal_id!r}")
            events.append(NfcEvent(t0, user_id, session_id, terminal_id))
    return events


def _load_activity_file(path: Path) -> list[ActivitySpan]:
    spans = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ACTIVITY_HEADER:
            raise MalformedRecord(path, 1, f"expected header {','.join(ACTIVITY_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise MalformedRecord(path, line_no, f"expected 4 fields, got {len(row)}")
            user_id, activity, start_ms, end_ms = row
            if activity not in ACTIVITIES:
                raise MalformedRecord(path, line_no, f"unknown activity {activity!r}")
            try:
                start, end = int(start_ms), int(end_ms)
            except ValueError:
                raise MalformedRecord(path, line_no, "bad span timestamps") from None
            if end <= start:
                raise MalformedRecord(path, line_no, "span must have end_ms > start_ms")
            spans.append(ActivitySpan(user_id, activity, start, end))
    return spans


def load_dataset(root, manifest: Path | str | None = None,
                 required_sensors: Iterable[SensorKind] = ()) -> Dataset:
    """Load and validate a dataset directory.

    An absent manifest yields an empty dataset. `required_sensors` rejects
    streams that lack data for any listed sensor (MissingSensor).
    """
    root = Path(root)
    manifest_path = Path(manifest) if manifest else root / MANIFEST_NAME
    if not manifest_path.exists():
        return Dataset(streams=(), nfc_events=(), activity_spans=())

    cfg = configparser.ConfigParser(interpolation=None)
    cfg.optionxform = str  # stream keys are case-sensitive
    with open(manifest_path, "r", encoding="utf-8") as fh:
        cfg.read_file(fh)
    rate = cfg.getfloat("dataset", "nominal_rate_hz", fallback=50.0)

    streams = []
    if cfg.has_section("streams"):
        for key in sorted(cfg["streams"]):
            user_id, sep, session_id = key.partition("/")
            if not sep:
                raise WristtapError(f"manifest stream key {key!r} must be user_id/session_id")
            stream = _load_sensor_file(root / cfg["streams"][key], user_id, session_id, rate)
            for kind in required_sensors:
                if len(stream.series(kind)) == 0:
                    raise MissingSensor(f"stream {user_id}/{session_id} has no {kind.value} data")
            streams.append(stream)
    streams.sort(key=lambda s: (s.user_id, s.session_id))

    events: list[NfcEvent] = []
    spans: list[ActivitySpan] = []
    if cfg.has_option("files", "nfc_events"):
        events = _load_events_file(root / cfg.get("files", "nfc_events"))
    if cfg.has_option("files", "activity_spans"):
        spans = _load_activity_file(root / cfg.get("files", "activity_spans"))
    events.sort(key=lambda e: (e.user_id, e.session_id, e.t0_ms, e.terminal_id))
    spans.sort(key=lambda s: (s.user_id, s.start_ms, s.end_ms, s.activity))

    return Dataset(streams=tuple(streams), nfc_events=tuple(events),
                   activity_spans=tuple(spans))


def _stream_frame(stream: SensorStream) -> pd.DataFrame:
    frames = []
    for kind in ALL_KINDS:
        series = stream.series(kind)
        if len(series) == 0:
            continue
        frame = pd.DataFrame({
            "t_ms": series.t_ms,
            "sensor": kind.value,
            "x": series.values[:, 0],
            "y": series.values[:, 1],
            "z": series.values[:, 2],
            "w": series.values[:, 3] if kind is SensorKind.GRV else "",
        })
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=SENSOR_HEADER)
    return pd.concat(frames, ignore_index=True)


def save_dataset(dataset: Dataset, root) -> Path:
    """Write a dataset in the canonical on-disk format; returns the manifest path.

    save/load round-trips are lossless: timestamps are bit-exact and float
    values use shortest round-trip formatting.
    """
    root = Path(root)
    (root / "streams").mkdir(parents=True, exist_ok=True)
    cfg = configparser.ConfigParser(interpolation=None)
    cfg.optionxform = str
    cfg["dataset"] = {}
    rates = {s.nominal_rate_hz for s in dataset.streams}
    if len(rates) > 1:
        raise WristtapError("cannot save streams with mixed nominal rates")
    cfg["dataset"]["nominal_rate_hz"] = repr(rates.pop()) if rates else "50.0"
    cfg["files"] = {}
    cfg["streams"] = {}

    for stream in sorted(dataset.streams, key=lambda s: (s.user_id, s.session_id)):
        rel = f"streams/{stream.user_id}_{stream.session_id}.csv"
        if "/" in stream.user_id or "/" in stream.session_id:
            raise WristtapError("user and session ids must not contain '/'")
        cfg["streams"][f"{stream.user_id}/{stream.session_id}"] = rel
        _stream_frame(stream).to_csv(root / rel, index=False, lineterminator="\n")

    if dataset.nfc_events:
        with open(root / "nfc_events.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(EVENTS_HEADER) + "\n")
            for e in sorted(dataset.nfc_events,
                            key=lambda e: (e.user_id, e.session_id, e.t0_ms, e.terminal_id)):
                fh.write(f"{e.t0_ms},{e.user_id},{e.session_id},{e.terminal_id}\n")
        cfg["files"]["nfc_events"] = "nfc_events.csv"

    if dataset.activity_spans:
        with open(root / "activity_spans.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(ACTIVITY_HEADER) + "\n")
            for s in sorted(dataset.activity_spans,
                            key=lambda s: (s.user_id, s.start_ms, s.end_ms, s.activity)):
                fh.write(f"{s.user_id},{s.activity},{s.start_ms},{s.end_ms}\n")
        cfg["files"]["activity_spans"] = "activity_spans.csv"

    manifest_path = root / MANIFEST_NAME
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        cfg.write(fh)
    return manifest_path
