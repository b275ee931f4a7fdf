"""Core sensor types: samples, streams, window parameters, and gesture windows.

Conventions used throughout the package:

- Timestamps are integer milliseconds since the stream epoch and are
  converted to seconds only inside numeric routines.
- Accelerometer and linear accelerometer values are m/s^2, gyroscope values
  are deg/s as delivered by the device (no radian conversion), orientation
  is a unit quaternion (x, y, z, w).
- Each per-sensor sample list is strictly increasing in time.

All types are immutable after construction (numpy buffers are marked
read-only) and safe to share across concurrent readers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import WristtapError, ZeroNormQuaternion


class SensorKind(Enum):
    """The four inertial sensors, directly measured or derived."""

    ACC = "Acc"   # accelerometer, gravity included
    GYR = "Gyr"   # gyroscope, angular velocity
    LAC = "LAc"   # linear accelerometer, gravity removed
    GRV = "GRV"   # rotation vector, sensor-fused orientation quaternion

    @property
    def is_triaxial(self) -> bool:
        return self is not SensorKind.GRV


TRIAXIAL_KINDS = (SensorKind.ACC, SensorKind.GYR, SensorKind.LAC)
ALL_KINDS = (SensorKind.ACC, SensorKind.GYR, SensorKind.LAC, SensorKind.GRV)


def energy(x: float, y: float, z: float) -> float:
    """Euclidean magnitude sqrt(x^2 + y^2 + z^2) of a triaxial reading."""
    return math.sqrt(x * x + y * y + z * z)


def energy_rows(values: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean magnitude of an (n, k) array."""
    return np.sqrt(np.einsum("ij,ij->i", values, values))


@dataclass(frozen=True)
class TriaxialSample:
    """One (t, x, y, z) reading; t in ms since stream epoch."""

    t: int
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not (math.isfinite(self.t) and self.t >= 0):
            raise WristtapError(f"timestamp must be finite and non-negative, got {self.t}")
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise WristtapError("sample values must be finite")


@dataclass(frozen=True)
class QuaternionSample:
    """One (t, x, y, z, w) orientation reading; t in ms since stream epoch."""

    t: int
    x: float
    y: float
    z: float
    w: float

    def __post_init__(self):
        if not (math.isfinite(self.t) and self.t >= 0):
            raise WristtapError(f"timestamp must be finite and non-negative, got {self.t}")
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z, self.w)):
            raise WristtapError("sample values must be finite")

    @property
    def norm(self) -> float:
        return math.sqrt(self.x**2 + self.y**2 + self.z**2 + self.w**2)


def normalize_quaternion(q: QuaternionSample) -> QuaternionSample:
    """Scale a quaternion sample to unit Euclidean norm, preserving direction.

    Raises ZeroNormQuaternion if the norm is <= 1e-12.
    """
    n = q.norm
    if n <= 1e-12:
        raise ZeroNormQuaternion(f"cannot normalize quaternion with norm {n}")
    return QuaternionSample(q.t, q.x / n, q.y / n, q.z / n, q.w / n)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def _check_times(t_ms: np.ndarray, n_rows: int):
    if t_ms.ndim != 1:
        raise WristtapError("timestamps must be one-dimensional")
    if len(t_ms) != n_rows:
        raise WristtapError("timestamp and value lengths differ")
    if len(t_ms) and t_ms[0] < 0:
        raise WristtapError("timestamps must be non-negative")
    if len(t_ms) > 1 and not (np.diff(t_ms) > 0).all():
        raise WristtapError("timestamps must be strictly increasing")


@dataclass(frozen=True, eq=False)
class TriaxialSeries:
    """Time-ordered triaxial samples as parallel arrays.

    t_ms: (n,) int64, strictly increasing. values: (n, 3) float64 (x, y, z).
    """

    t_ms: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t_ms, dtype=np.int64)
        v = np.asarray(self.values, dtype=np.float64).reshape(-1, 3)
        _check_times(t, v.shape[0])
        if v.size and not np.isfinite(v).all():
            raise WristtapError("sample values must be finite")
        object.__setattr__(self, "t_ms", _freeze(t))
        object.__setattr__(self, "values", _freeze(v))

    def __len__(self) -> int:
        return len(self.t_ms)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TriaxialSeries):
            return NotImplemented
        return np.array_equal(self.t_ms, other.t_ms) and np.array_equal(self.values, other.values)

    def __getitem__(self, i: int) -> TriaxialSample:
        return TriaxialSample(int(self.t_ms[i]), *self.values[i])

    @classmethod
    def empty(cls) -> "TriaxialSeries":
        return cls(np.empty(0, dtype=np.int64), np.empty((0, 3)))


@dataclass(frozen=True, eq=False)
class QuaternionSeries:
    """Time-ordered quaternion samples; values columns are (x, y, z, w)."""

    t_ms: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t_ms, dtype=np.int64)
        v = np.asarray(self.values, dtype=np.float64).reshape(-1, 4)
        _check_times(t, v.shape[0])
        if v.size and not np.isfinite(v).all():
            raise WristtapError("sample values must be finite")
        object.__setattr__(self, "t_ms", _freeze(t))
        object.__setattr__(self, "values", _freeze(v))

    def __len__(self) -> int:
        return len(self.t_ms)

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuaternionSeries):
            return NotImplemented
        return np.array_equal(self.t_ms, other.t_ms) and np.array_equal(self.values, other.values)

    def __getitem__(self, i: int) -> QuaternionSample:
        return QuaternionSample(int(self.t_ms[i]), *self.values[i])

    def norms(self) -> np.ndarray:
        return energy_rows(self.values)

    @classmethod
    def empty(cls) -> "QuaternionSeries":
        return cls(np.empty(0, dtype=np.int64), np.empty((0, 4)))


@dataclass(frozen=True)
class SensorStream:
    """All sensor data for one user-session.

    Every stream carries all four sensor series; a series may be empty for
    datasets recorded with a sensor subset.
    """

    user_id: str
    session_id: str
    nominal_rate_hz: float
    acc: TriaxialSeries
    gyr: TriaxialSeries
    lac: TriaxialSeries
    grv: QuaternionSeries

    def __post_init__(self):
        if self.nominal_rate_hz <= 0:
            raise WristtapError("nominal_rate_hz must be positive")

    def series(self, kind: SensorKind):
        return {
            SensorKind.ACC: self.acc,
            SensorKind.GYR: self.gyr,
            SensorKind.LAC: self.lac,
            SensorKind.GRV: self.grv,
        }[kind]

    def extent_ms(self) -> tuple[int, int]:
        """(min, max) timestamp over all non-empty sensor series; (0, 0) if empty."""
        lows = [int(s.t_ms[0]) for s in (self.acc, self.gyr, self.lac, self.grv) if len(s)]
        highs = [int(s.t_ms[-1]) for s in (self.acc, self.gyr, self.lac, self.grv) if len(s)]
        if not lows:
            return (0, 0)
        return (min(lows), max(highs))

    def sample_count(self) -> int:
        return len(self.acc) + len(self.gyr) + len(self.lac) + len(self.grv)


# Tap windows may start up to 4 s before the NFC contact point and end up to
# 2 s after it; feasible (size, offset) pairs must stay inside that envelope.
PRE_CONTACT_S = 4.0
POST_CONTACT_S = 2.0


@dataclass(frozen=True)
class WindowParams:
    """Tap-window geometry: size in seconds and offset from the contact point.

    The window ends `offset_o` seconds before the contact point (negative
    offsets reach past it) and spans `size_s` seconds.
    """

    size_s: float
    offset_o: float

    def __post_init__(self):
        if not (self.size_s > 0):
            raise WristtapError(f"window size must be positive, got {self.size_s}")
        if self.offset_o < -POST_CONTACT_S or self.size_s + self.offset_o > PRE_CONTACT_S:
            raise WristtapError(
                f"infeasible window (s={self.size_s}, o={self.offset_o}): "
                f"requires o >= {-POST_CONTACT_S} and s + o <= {PRE_CONTACT_S}"
            )

    @property
    def size_ms(self) -> int:
        return round(self.size_s * 1000)

    @property
    def offset_ms(self) -> int:
        return round(self.offset_o * 1000)


@dataclass(frozen=True)
class TapLabel:
    """Positive-class label: who tapped, in which session, on which terminal."""

    user_id: str
    session_id: str
    terminal_id: str


ACTIVITIES = ("walking", "bus_or_train", "in_store", "combined")


@dataclass(frozen=True)
class NonTapLabel:
    """Negative-class label: who wore the watch and what they were doing."""

    user_id: str
    activity: str

    def __post_init__(self):
        if self.activity not in ACTIVITIES:
            raise WristtapError(f"unknown activity {self.activity!r}")


@dataclass(frozen=True)
class GestureWindow:
    """A fixed-duration slice of a stream, re-timestamped to start at 0.

    Tap windows carry the WindowParams they were cut with; non-tap windows
    are cut at a fixed size (4 s by default) and carry params=None.
    """

    duration_ms: int
    label: TapLabel | NonTapLabel
    acc: TriaxialSeries
    gyr: TriaxialSeries
    lac: TriaxialSeries
    grv: QuaternionSeries
    params: WindowParams | None = None

    def __post_init__(self):
        if self.duration_ms <= 0:
            raise WristtapError("window duration must be positive")
        for s in (self.acc, self.gyr, self.lac, self.grv):
            if len(s) and (s.t_ms[0] < 0 or s.t_ms[-1] > self.duration_ms):
                raise WristtapError("window samples outside [0, duration]")

    def series(self, kind: SensorKind):
        return {
            SensorKind.ACC: self.acc,
            SensorKind.GYR: self.gyr,
            SensorKind.LAC: self.lac,
            SensorKind.GRV: self.grv,
        }[kind]

    @property
    def is_tap(self) -> bool:
        return isinstance(self.label, TapLabel)
