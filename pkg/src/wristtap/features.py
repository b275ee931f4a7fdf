"""Feature extraction: 220-member statistical/kinematic summaries of a window.

Each triaxial sensor contributes five dimensions (filtered x, y, z, the
energy of the filtered triple, and the energy of the raw triple); the
rotation vector contributes its four filtered components only, since its
norm is always 1. Ten statistics are taken per dimension, and each triaxial
sensor additionally yields ten kinematic features from integrating its
filtered axes. With all four sensors that is 19 * 10 + 3 * 10 = 220 values.

Feature names follow the `<Sensor>-<dim>-<stat>` grammar, e.g. `Acc-x-min`,
`LAc-unf-pkcount`, `Gyr-y-velomean`, `Acc-disptotal`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from ._kernels import lowpass_columns
from .core import (ALL_KINDS, TRIAXIAL_KINDS, GestureWindow, QuaternionSeries,
                   SensorKind, TriaxialSeries, energy_rows)
from .errors import EmptySeries, InsufficientSamples, MissingSensor, WristtapError

STAT_NAMES = ("min", "max", "mean", "med", "stdev", "var", "iqr", "kurt", "skew", "pkcount")
AXES = ("x", "y", "z")

DEFAULT_CUTOFF_HZ = 10.0
DEFAULT_PEAK_GATE = 0.25

# Sample variance below this is treated as degenerate: kurtosis, skewness,
# and peak count are defined as 0 there.
_VAR_EPS = 1e-12


def subset_tuple(subset: Iterable[SensorKind]) -> tuple[SensorKind, ...]:
    """Validate and canonically order a sensor subset."""
    kinds = set(subset)
    if not kinds:
        raise WristtapError("sensor subset must be non-empty")
    if not kinds.issubset(ALL_KINDS):
        raise WristtapError(f"unknown sensor kinds: {kinds - set(ALL_KINDS)}")
    return tuple(k for k in ALL_KINDS if k in kinds)


def _dims_for(kind: SensorKind) -> tuple[str, ...]:
    if kind.is_triaxial:
        return ("x", "y", "z", "ene", "unf")
    return ("x", "y", "z", "w")


@lru_cache(maxsize=None)
def _names_for(subset: tuple[SensorKind, ...]) -> tuple[str, ...]:
    names = []
    for kind in subset:
        for dim in _dims_for(kind):
            for stat in STAT_NAMES:
                names.append(f"{kind.value}-{dim}-{stat}")
    for kind in subset:
        if not kind.is_triaxial:
            continue
        for feat in ("velomean", "velomax", "disp"):
            for axis in AXES:
                names.append(f"{kind.value}-{axis}-{feat}")
        names.append(f"{kind.value}-disptotal")
    return tuple(names)


def feature_names(subset: Iterable[SensorKind] = ALL_KINDS) -> tuple[str, ...]:
    """The fixed, ordered feature-name list for a sensor subset."""
    return _names_for(subset_tuple(subset))


@dataclass(frozen=True)
class FeatureVector:
    """Named feature values for one window; names are shared per subset."""

    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (len(self.names),):
            raise WristtapError(f"expected {len(self.names)} values, got {v.shape}")
        if not np.isfinite(v).all():
            raise WristtapError("feature values must be finite")
        v = np.ascontiguousarray(v)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.names)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


def low_pass_filter(series, cutoff_hz: float, rate_hz: float):
    """Smooth a sample series with a causal single-pole IIR filter.

    Timestamps are preserved; each value column is filtered independently
    with y[i] = y[i-1] + a*(x[i] - y[i-1]), a = dt/(RC + dt),
    RC = 1/(2*pi*cutoff_hz), y[0] = x[0].
    """
    if not (0 < cutoff_hz < rate_hz / 2):
        raise WristtapError(f"cutoff {cutoff_hz} Hz must lie in (0, rate/2)")
    if len(series) == 0:
        raise EmptySeries("cannot filter an empty series")
    filtered = _lowpass(series.t_ms, series.values, cutoff_hz)
    if isinstance(series, TriaxialSeries):
        return TriaxialSeries(series.t_ms, filtered)
    return QuaternionSeries(series.t_ms, filtered)


def _lowpass(t_ms: np.ndarray, values: np.ndarray, cutoff_hz: float) -> np.ndarray:
    rc = 1.0 / (2.0 * np.pi * cutoff_hz)
    return lowpass_columns(t_ms.astype(np.float64) / 1000.0, np.ascontiguousarray(values), rc)


def stat_features(series: Sequence[float] | np.ndarray,
                  peak_gate: float = DEFAULT_PEAK_GATE) -> np.ndarray:
    """The ten per-dimension statistics, in STAT_NAMES order.

    Median is the midpoint of the central two values for even lengths;
    stdev/var use the n-1 denominator (0 for a single sample); quartiles
    interpolate linearly at positions (n-1)*p; kurtosis is the excess
    population moment ratio and skewness its third-moment analogue, both 0
    for degenerate variance. A peak is an interior sample strictly greater
    than both neighbours and greater than mean + peak_gate * stdev.
    """
    arr = np.asarray(series, dtype=np.float64).reshape(1, -1)
    if arr.shape[1] == 0:
        raise EmptySeries("stat_features needs at least one sample")
    return _stat_block(arr, peak_gate)[0]


def _stat_block(mat: np.ndarray, peak_gate: float) -> np.ndarray:
    """Vectorized stats for a (d, n) matrix; returns (d, 10)."""
    d, n = mat.shape
    means = mat.mean(axis=1)
    if n > 1:
        var_s = mat.var(axis=1, ddof=1)
    else:
        var_s = np.zeros(d)
    stdev = np.sqrt(var_s)
    q1, q3 = np.percentile(mat, [25.0, 75.0], axis=1)

    ok = var_s >= _VAR_EPS
    skew = np.zeros(d)
    kurt = np.zeros(d)
    if ok.any():
        centered = mat[ok] - means[ok, None]
        m2 = np.mean(centered**2, axis=1)
        m3 = np.mean(centered**3, axis=1)
        m4 = np.mean(centered**4, axis=1)
        skew[ok] = m3 / m2**1.5
        kurt[ok] = m4 / m2**2 - 3.0

    pk = np.zeros(d)
    if n >= 3:
        inner = mat[:, 1:-1]
        gate = (means + peak_gate * stdev)[:, None]
        is_peak = (inner > mat[:, :-2]) & (inner > mat[:, 2:]) & (inner > gate)
        pk = np.where(ok, is_peak.sum(axis=1), 0).astype(np.float64)

    return np.column_stack([
        mat.min(axis=1), mat.max(axis=1), means, np.median(mat, axis=1),
        stdev, var_s, q3 - q1, kurt, skew, pk,
    ])


def _cumtrapz(rows: np.ndarray, t_s: np.ndarray) -> np.ndarray:
    """Cumulative trapezoidal integral per column, starting at 0."""
    dt = np.diff(t_s)[:, None]
    steps = (rows[1:] + rows[:-1]) * 0.5 * dt
    out = np.zeros_like(rows)
    np.cumsum(steps, axis=0, out=out[1:])
    return out


def _kinematics_from_filtered(filtered: np.ndarray, t_ms: np.ndarray) -> np.ndarray:
    t_s = t_ms.astype(np.float64) / 1000.0
    v = _cumtrapz(filtered, t_s)
    disp = np.trapezoid(v, t_s, axis=0)
    total = float(np.sqrt((disp**2).sum()))
    return np.concatenate([v.mean(axis=0), v.max(axis=0), disp, [total]])


def kinematic_features(window: GestureWindow, sensor: SensorKind,
                       cutoff_hz: float = DEFAULT_CUTOFF_HZ) -> np.ndarray:
    """Velocity and displacement features from one triaxial sensor.

    The filtered axis series are integrated over window-relative time
    (trapezoidal, v(0) = 0) to velocities, and those again to per-axis
    displacements. Returns [velomean x y z, velomax x y z, disp x y z,
    disptotal].
    """
    if sensor not in TRIAXIAL_KINDS:
        raise WristtapError(f"kinematic features need a triaxial sensor, got {sensor}")
    series = window.series(sensor)
    if len(series) < 2:
        raise InsufficientSamples(f"{sensor.value} has {len(series)} samples; need >= 2")
    filtered = _lowpass(series.t_ms, series.values, cutoff_hz)
    return _kinematics_from_filtered(filtered, series.t_ms)


def expand_dimensions(window: GestureWindow,
                      subset: Iterable[SensorKind] = ALL_KINDS,
                      cutoff_hz: float = DEFAULT_CUTOFF_HZ) -> dict[str, np.ndarray]:
    """Per-dimension series for a window, keyed `<Sensor>-<dim>`.

    Triaxial sensors expand to filtered x/y/z plus filtered and raw energy;
    the rotation vector expands to its four filtered components. The full
    four-sensor subset yields 19 dimensions.
    """
    kinds = subset_tuple(subset)
    out: dict[str, np.ndarray] = {}
    for kind in kinds:
        series = window.series(kind)
        if len(series) == 0:
            raise MissingSensor(f"window has no {kind.value} samples")
        filtered = _lowpass(series.t_ms, series.values, cutoff_hz)
        if kind.is_triaxial:
            for j, axis in enumerate(AXES):
                out[f"{kind.value}-{axis}"] = filtered[:, j]
            out[f"{kind.value}-ene"] = energy_rows(filtered)
            out[f"{kind.value}-unf"] = energy_rows(series.values)
        else:
            for j, axis in enumerate(("x", "y", "z", "w")):
                out[f"{kind.value}-{axis}"] = filtered[:, j]
    return out


def featurize(window: GestureWindow,
              subset: Iterable[SensorKind] = ALL_KINDS,
              cutoff_hz: float = DEFAULT_CUTOFF_HZ,
              peak_gate: float = DEFAULT_PEAK_GATE) -> FeatureVector:
    """Reduce a gesture window to its fixed-order feature vector.

    The full sensor set gives 220 features; subsets give proportionally
    fewer (e.g. {Acc, Gyr} -> 120, {Acc} -> 60). Deterministic and pure.
    """
    kinds = subset_tuple(subset)
    names = _names_for(kinds)
    stat_parts = []
    kin_parts = []
    for kind in kinds:
        series = window.series(kind)
        if len(series) == 0:
            raise MissingSensor(f"window has no {kind.value} samples")
        filtered = _lowpass(series.t_ms, series.values, cutoff_hz)
        if kind.is_triaxial:
            dims = np.empty((5, len(series)))
            dims[0:3] = filtered.T
            dims[3] = energy_rows(filtered)
            dims[4] = energy_rows(series.values)
            if len(series) < 2:
                raise InsufficientSamples(
                    f"{kind.value} has {len(series)} samples; need >= 2 for kinematics")
            kin_parts.append(_kinematics_from_filtered(filtered, series.t_ms))
        else:
            dims = filtered.T
        stat_parts.append(_stat_block(dims, peak_gate).ravel())
    values = np.concatenate(stat_parts + kin_parts)
    return FeatureVector(names, values)


def export_feature_matrix(path, windows: Sequence[GestureWindow],
                          vectors: Sequence[FeatureVector]) -> None:
    """Write windows' features as CSV: id/label columns then one per feature."""
    if len(windows) != len(vectors):
        raise WristtapError("windows and vectors must align")
    names = vectors[0].names if vectors else feature_names()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("window_id,label_class,user_id,terminal_or_activity,"
                 + ",".join(names) + "\n")
        for i, (win, vec) in enumerate(zip(windows, vectors)):
            if vec.names != names:
                raise WristtapError("mixed feature schemas in export")
            if win.is_tap:
                cls, extra = "tap", win.label.terminal_id
            else:
                cls, extra = "nontap", win.label.activity
            row = ",".join(repr(v) for v in vec.values.tolist())
            fh.write(f"{i},{cls},{win.label.user_id},{extra},{row}\n")
