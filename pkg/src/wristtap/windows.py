"""Gesture windowing: tap windows around contact points, overlapping
non-tap windows from activity spans.

A tap window for contact point T0 with parameters (s, o) covers source
time [T0 - (o + s) * 1000, T0 - o * 1000) ms; boundaries are half-open so
exact tilings never share a sample. Non-tap windows are cut at a fixed
size (4 s) every stride (2 s, a 50% overlap) from each activity span.

Windows whose span is not fully backed by sensor data are excluded rather
than raising: every required sensor must hold at least 90% of its expected
sample count and must have no internal gap above 200 ms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import (ALL_KINDS, GestureWindow, NonTapLabel, QuaternionSeries,
                   SensorKind, SensorStream, TapLabel, TriaxialSeries, WindowParams)
from .errors import WristtapError
from .ingest import ActivitySpan, Dataset, NfcEvent

DEFAULT_MAX_GAP_MS = 200
DEFAULT_MIN_COVERAGE = 0.9
NONTAP_SIZE_S = 4.0
NONTAP_STRIDE_S = 2.0


@dataclass(frozen=True)
class Excluded:
    """A window skipped on data-quality grounds; not an error."""

    reason: str
    user_id: str = ""
    source: str = ""


def _slice_series(series, lo_ms: int, hi_ms: int):
    t = series.t_ms
    lo = int(np.searchsorted(t, lo_ms, side="left"))
    hi = int(np.searchsorted(t, hi_ms, side="left"))
    cls = TriaxialSeries if isinstance(series, TriaxialSeries) else QuaternionSeries
    return cls(t[lo:hi] - lo_ms, series.values[lo:hi])


def _coverage_failure(stream: SensorStream, lo_ms: int, hi_ms: int,
                      required: Iterable[SensorKind], rate_hz: float,
                      min_coverage: float, max_gap_ms: int) -> str | None:
    expected = (hi_ms - lo_ms) / 1000.0 * rate_hz
    for kind in required:
        t = stream.series(kind).t_ms
        lo = np.searchsorted(t, lo_ms, side="left")
        hi = np.searchsorted(t, hi_ms, side="left")
        if hi - lo < min_coverage * expected:
            return f"{kind.value}: {hi - lo} of {expected:.0f} expected samples"
        gaps = np.diff(t[lo:hi])
        if len(gaps) and gaps.max() > max_gap_ms:
            return f"{kind.value}: internal gap of {int(gaps.max())} ms"
    return None


def extract_tap_window(stream: SensorStream, event: NfcEvent, params: WindowParams,
                       required: Iterable[SensorKind] = ALL_KINDS,
                       min_coverage: float = DEFAULT_MIN_COVERAGE,
                       max_gap_ms: int = DEFAULT_MAX_GAP_MS) -> GestureWindow | Excluded:
    """Cut the tap window anchored at the event's contact point.

    Samples with source time in [T_E - size, T_E), T_E = T0 - offset, are
    re-timestamped relative to the window start and labelled with the
    event's user/session/terminal. Returns Excluded when the coverage
    check fails. Pure: identical inputs give identical outputs.
    """
    t_end = event.t0_ms - params.offset_ms
    t_start = t_end - params.size_ms
    src = f"{event.user_id}/{event.session_id}@{event.t0_ms}"
    failure = _coverage_failure(stream, t_start, t_end, required, stream.nominal_rate_hz,
                                min_coverage, max_gap_ms)
    if failure is not None:
        return Excluded(failure, event.user_id, src)
    return GestureWindow(
        duration_ms=params.size_ms,
        label=TapLabel(event.user_id, event.session_id, event.terminal_id),
        acc=_slice_series(stream.acc, t_start, t_end),
        gyr=_slice_series(stream.gyr, t_start, t_end),
        lac=_slice_series(stream.lac, t_start, t_end),
        grv=_slice_series(stream.grv, t_start, t_end),
        params=params,
    )


def segment_activity_windows(stream: SensorStream, span: ActivitySpan,
                             size_s: float = NONTAP_SIZE_S,
                             stride_s: float = NONTAP_STRIDE_S,
                             required: Iterable[SensorKind] = ALL_KINDS,
                             min_coverage: float = DEFAULT_MIN_COVERAGE,
                             max_gap_ms: int = DEFAULT_MAX_GAP_MS,
                             exclusions: list[Excluded] | None = None) -> list[GestureWindow]:
    """Fixed-size windows tiling an activity span with the given stride.

    Window k starts at span.start + k * stride while start + size stays
    within the span; each window is labelled with the span's activity.
    Windows failing coverage are appended to `exclusions` when given.
    """
    if size_s <= 0 or not (0 < stride_s <= size_s):
        raise WristtapError("need size_s > 0 and 0 < stride_s <= size_s")
    size_ms = round(size_s * 1000)
    stride_ms = round(stride_s * 1000)
    label = NonTapLabel(span.user_id, span.activity)
    out = []
    start = span.start_ms
    while start + size_ms <= span.end_ms:
        failure = _coverage_failure(stream, start, start + size_ms, required,
                                    stream.nominal_rate_hz, min_coverage, max_gap_ms)
        if failure is None:
            out.append(GestureWindow(
                duration_ms=size_ms, label=label,
                acc=_slice_series(stream.acc, start, start + size_ms),
                gyr=_slice_series(stream.gyr, start, start + size_ms),
                lac=_slice_series(stream.lac, start, start + size_ms),
                grv=_slice_series(stream.grv, start, start + size_ms),
            ))
        elif exclusions is not None:
            exclusions.append(Excluded(failure, span.user_id,
                                       f"{span.activity}@{start}"))
        start += stride_ms
    return out


def count_activity_windows(span: ActivitySpan, size_s: float = NONTAP_SIZE_S,
                           stride_s: float = NONTAP_STRIDE_S) -> int:
    """Closed-form window count for a gap-free span: floor((span-size)/stride)+1."""
    span_ms = span.end_ms - span.start_ms
    size_ms = round(size_s * 1000)
    stride_ms = round(stride_s * 1000)
    if span_ms < size_ms:
        return 0
    return (span_ms - size_ms) // stride_ms + 1


def truncate_trailing(window: GestureWindow, size_s: float) -> GestureWindow:
    """Keep only the trailing size_s seconds of a window.

    Used to give non-tap windows the same duration as the tap windows they
    are classified against; trailing alignment mirrors the contact-point-
    anchored end of a tap window. Windows already at or below the target
    duration are returned unchanged.
    """
    size_ms = round(size_s * 1000)
    if size_ms >= window.duration_ms:
        return window
    cut = window.duration_ms - size_ms

    def trim(series):
        lo = int(np.searchsorted(series.t_ms, cut, side="left"))
        cls = TriaxialSeries if isinstance(series, TriaxialSeries) else QuaternionSeries
        return cls(series.t_ms[lo:] - cut, series.values[lo:])

    return GestureWindow(
        duration_ms=size_ms, label=window.label,
        acc=trim(window.acc), gyr=trim(window.gyr),
        lac=trim(window.lac), grv=trim(window.grv),
        params=window.params,
    )


def extract_tap_windows(dataset: Dataset, params: WindowParams,
                        required: Iterable[SensorKind] = ALL_KINDS,
                        min_coverage: float = DEFAULT_MIN_COVERAGE,
                        max_gap_ms: int = DEFAULT_MAX_GAP_MS,
                        ) -> tuple[list[GestureWindow], list[Excluded]]:
    """All tap windows for a dataset's events, plus the exclusion records."""
    windows, excluded = [], []
    for event in dataset.nfc_events:
        stream = dataset.stream(event.user_id, event.session_id)
        res = extract_tap_window(stream, event, params, required, min_coverage, max_gap_ms)
        if isinstance(res, Excluded):
            excluded.append(res)
        else:
            windows.append(res)
    return windows, excluded


def extract_activity_windows(dataset: Dataset, size_s: float = NONTAP_SIZE_S,
                             stride_s: float = NONTAP_STRIDE_S,
                             required: Iterable[SensorKind] = ALL_KINDS,
                             ) -> tuple[list[GestureWindow], list[Excluded]]:
    """All non-tap windows across a dataset's activity spans."""
    windows: list[GestureWindow] = []
    excluded: list[Excluded] = []
    for span in dataset.activity_spans:
        stream = dataset.stream_for_span(span)
        if stream is None:
            excluded.append(Excluded("no stream covers the span", span.user_id,
                                     f"{span.activity}@{span.start_ms}"))
            continue
        windows.extend(segment_activity_windows(
            stream, span, size_s, stride_s, required, exclusions=excluded))
    return windows, excluded
