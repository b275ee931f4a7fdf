"""Synthetic multi-user tap-gesture and activity stream generation.

Each synthetic tap gesture is triphasic: a reaching pulse (minimum-jerk
acceleration along the arm axis plus a forward wrist roll), an alignment
segment of 0.5 to 1.5 s of high-frequency, low-amplitude jitter ending at
the contact point, and a withdrawal that reverses the reach. Streams are
gap-free 50 Hz with gravity embedded in the accelerometer but absent from
the linear accelerometer, and the rotation vector is obtained by
integrating the synthetic angular rates from a seeded initial orientation.

Per-user motion styles are drawn from a seeded population whose
inter-user variance deliberately exceeds the per-gesture noise, so the
generated corpus is separable end to end. This module exists to exercise
the pipeline, not to model real wrists.

All randomness derives from one master seed through numpy SeedSequence
spawn keys: (user_index, stream_index) selects the per-stream generator.
"""

from __future__ import annotations

import math
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ._kernels import integrate_orientation
from .core import QuaternionSeries, SensorStream, TriaxialSeries
from .errors import WristtapError
from .ingest import (ActivitySpan, Dataset, NfcEvent, load_dataset, save_dataset)

RATE_HZ = 50
DT_MS = 1000 // RATE_HZ
DT_S = DT_MS / 1000.0
GRAVITY = 9.81

ACC_NOISE_BASE = 0.6     # m/s^2, scaled by the per-user noise parameter
GYR_NOISE_BASE = 6.0     # deg/s


@dataclass(frozen=True)
class UserStyle:
    """Per-user motion parameters; the biometric signal of the generator."""

    reach_amp: float         # peak reach acceleration, m/s^2
    reach_s: float           # reach duration, s
    dir_y: float             # secondary-axis fractions of the reach pulse
    dir_z: float
    roll_deg: float          # wrist roll across the reach
    rot_mix_x: float         # off-axis rotation fractions
    rot_mix_z: float
    align_s: float           # mean alignment duration, s (0.5 .. 1.5)
    align_jitter_amp: float  # m/s^2
    align_jitter_hz: float
    jitter_phase: float      # fixed per user so zero-noise gestures repeat
    withdraw_speed: float    # relative speed of the withdrawal pulse
    idle_s: float            # rest time between gestures
    noise_scale: float       # per-gesture variation and sensor noise factor

    def __post_init__(self):
        if self.reach_s <= 0 or self.align_s <= 0 or self.idle_s <= 0:
            raise WristtapError("style durations must be positive")
        if self.reach_s + 1.5 > 4.0:
            raise WristtapError("gesture would not fit the 4 s pre-contact envelope")


@dataclass(frozen=True)
class TerminalProfile:
    """How a terminal's position reshapes the gesture, as mild multipliers."""

    terminal_id: str
    reach_scale: float = 1.0
    roll_scale: float = 1.0
    align_scale: float = 1.0


# Fixed terminals 1..6 echo distinct mounting positions; F is hand-held.
TERMINAL_PROFILES = {
    "1": TerminalProfile("1", 1.00, 1.15, 1.00),
    "2": TerminalProfile("2", 1.15, 1.00, 1.05),
    "3": TerminalProfile("3", 0.95, 0.90, 0.90),
    "4": TerminalProfile("4", 1.05, 1.00, 1.00),
    "5": TerminalProfile("5", 1.00, 0.95, 1.00),
    "6": TerminalProfile("6", 1.10, 1.05, 0.95),
    "F": TerminalProfile("F", 0.90, 0.90, 0.85),
}


@dataclass(frozen=True)
class ActivityModel:
    """Spectral sketch of one non-tap activity."""

    kind: str                   # walking | bus_or_train | in_store
    cadence_hz: float = 1.9     # walking arm swing
    swing_amp: float = 2.0      # m/s^2
    swing_rot: float = 25.0     # deg/s
    noise_sigma: float = 0.15   # m/s^2 background
    jolt_rate_hz: float = 0.08  # bus/train jolts per second
    jolt_amp: float = 2.0       # m/s^2
    episode_gap_s: float = 6.0  # in-store reach episodes
    episode_amp: float = 1.8    # m/s^2
    episode_rot_deg: float = 45.0


def draw_user_style(rng: np.random.Generator) -> UserStyle:
    """Draw one user's style; population spread dominates per-gesture noise."""
    return UserStyle(
        reach_amp=rng.uniform(2.0, 6.0),
        reach_s=rng.uniform(0.7, 1.4),
        dir_y=rng.uniform(-0.45, 0.45),
        dir_z=rng.uniform(-0.35, 0.35),
        roll_deg=rng.uniform(40.0, 120.0) * rng.choice([-1.0, 1.0]),
        rot_mix_x=rng.uniform(-0.35, 0.35),
        rot_mix_z=rng.uniform(-0.3, 0.3),
        align_s=rng.uniform(0.6, 1.4),
        align_jitter_amp=rng.uniform(0.4, 1.4),
        align_jitter_hz=rng.uniform(4.0, 9.0),
        jitter_phase=rng.uniform(0.0, 2.0 * math.pi),
        withdraw_speed=rng.uniform(0.7, 1.3),
        idle_s=rng.uniform(1.8, 3.2),
        noise_scale=rng.uniform(0.05, 0.12),
    )


def draw_activity_model(kind: str, rng: np.random.Generator) -> ActivityModel:
    return ActivityModel(
        kind=kind,
        cadence_hz=rng.uniform(1.7, 2.2),
        swing_amp=rng.uniform(1.4, 2.8),
        swing_rot=rng.uniform(15.0, 40.0),
        noise_sigma=rng.uniform(0.1, 0.2),
        jolt_rate_hz=rng.uniform(0.05, 0.12),
        jolt_amp=rng.uniform(1.5, 3.0),
        episode_gap_s=rng.uniform(4.0, 8.0),
        episode_amp=rng.uniform(1.2, 2.4),
        episode_rot_deg=rng.uniform(25.0, 60.0),
    )


def _minjerk_accel(n: int) -> np.ndarray:
    """Minimum-jerk acceleration profile over n samples, peak magnitude 1."""
    tau = np.linspace(0.0, 1.0, n, endpoint=False) + 0.5 / n
    prof = 60 * tau - 180 * tau**2 + 120 * tau**3
    return prof / (10 / math.sqrt(3))  # analytic peak of the cubic


def _minjerk_rate(n: int) -> np.ndarray:
    """Minimum-jerk velocity profile over n samples; integrates to ~1."""
    tau = np.linspace(0.0, 1.0, n, endpoint=False) + 0.5 / n
    return 30 * tau**2 * (1 - tau) ** 2


def _quat_conj(q):
    return np.array([-q[0], -q[1], -q[2], q[3]])


def _quat_mul(a, b):
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array([
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    ])


def _steering_rate_deg(q_cur, q_target, duration_s: float) -> np.ndarray:
    """Constant body rate that rotates q_cur onto q_target over duration_s."""
    err = _quat_mul(_quat_conj(q_cur), q_target)
    if err[3] < 0:
        err = -err
    v = err[:3]
    s = np.linalg.norm(v)
    angle = 2.0 * math.atan2(s, min(err[3], 1.0))
    if s < 1e-15 or angle < 1e-12:
        return np.zeros(3)
    axis = v / s
    return axis * math.degrees(angle) / duration_s


def _gravity_in_device(quats: np.ndarray) -> np.ndarray:
    """Rotate the world up-vector reaction (0, 0, g) into the device frame."""
    x, y, z, w = quats[:, 0], quats[:, 1], quats[:, 2], quats[:, 3]
    gx = 2.0 * (x * z - w * y)
    gy = 2.0 * (y * z + w * x)
    gz = 1.0 - 2.0 * (x * x + y * y)
    return GRAVITY * np.column_stack([gx, gy, gz])


class _StreamBuilder:
    """Accumulates linear-acceleration / angular-rate segments, integrating
    orientation as it goes so idle segments can steer back to the rest pose."""

    def __init__(self, rng: np.random.Generator, noise_scale: float):
        self.rng = rng
        self.noise = noise_scale
        self.lac: list[np.ndarray] = []
        self.gyr: list[np.ndarray] = []
        self.quats: list[np.ndarray] = []
        v = rng.normal(size=4)
        self.q0 = v / np.linalg.norm(v)
        self.q_cur = self.q0.copy()
        self.n = 0

    def _push(self, lac: np.ndarray, gyr: np.ndarray):
        if self.noise > 0:
            lac = lac + self.rng.normal(0.0, ACC_NOISE_BASE * self.noise, lac.shape)
            gyr = gyr + self.rng.normal(0.0, GYR_NOISE_BASE * self.noise, gyr.shape)
        quats = integrate_orientation(np.ascontiguousarray(gyr), DT_S, self.q_cur)
        self.q_cur = quats[-1].copy() if len(quats) else self.q_cur
        self.lac.append(lac)
        self.gyr.append(gyr)
        self.quats.append(quats)
        self.n += len(lac)

    def idle(self, duration_s: float, steer_home: bool = True):
        n = max(1, round(duration_s * RATE_HZ))
        lac = np.zeros((n, 3))
        gyr = np.zeros((n, 3))
        if steer_home:
            gyr[:] = _steering_rate_deg(self.q_cur, self.q0, n * DT_S)
        self._push(lac, gyr)

    def segment(self, lac: np.ndarray, gyr: np.ndarray):
        self._push(lac, gyr)

    def finish(self, user_id: str, session_id: str, epoch_ms: int) -> SensorStream:
        lac = np.vstack(self.lac) if self.lac else np.zeros((0, 3))
        gyr = np.vstack(self.gyr) if self.gyr else np.zeros((0, 3))
        quats = np.vstack(self.quats) if self.quats else np.zeros((0, 4))
        norms = np.linalg.norm(quats, axis=1, keepdims=True)
        quats = quats / norms
        t = epoch_ms + np.arange(len(lac), dtype=np.int64) * DT_MS
        acc = lac + _gravity_in_device(quats)
        return SensorStream(
            user_id=user_id, session_id=session_id, nominal_rate_hz=float(RATE_HZ),
            acc=TriaxialSeries(t, acc), gyr=TriaxialSeries(t, gyr),
            lac=TriaxialSeries(t, lac), grv=QuaternionSeries(t, quats),
        )


def _wobble(base: float, rng: np.random.Generator, noise: float,
            lo: float | None = None, hi: float | None = None) -> float:
    value = base * (1.0 + noise * rng.normal())
    if lo is not None:
        value = max(lo, value)
    if hi is not None:
        value = min(hi, value)
    return value


def generate_tap_stream(style: UserStyle, n_gestures: int,
                        terminal_profile: TerminalProfile | Sequence[TerminalProfile],
                        seed, user_id: str = "u00", session_id: str = "1",
                        epoch_ms: int = 0) -> tuple[SensorStream, list[NfcEvent]]:
    """One continuous session stream containing n_gestures tap gestures.

    `terminal_profile` may be a single profile or a per-gesture schedule
    (cycled when shorter than n_gestures). Returns the stream and one
    contact-point event per gesture.
    """
    if n_gestures < 1:
        raise WristtapError("n_gestures must be >= 1")
    profiles = ([terminal_profile] if isinstance(terminal_profile, TerminalProfile)
                else list(terminal_profile))
    rng = np.random.default_rng(seed)
    b = _StreamBuilder(rng, style.noise_scale)
    events = []

    for g in range(n_gestures):
        prof = profiles[g % len(profiles)]
        b.idle(_wobble(style.idle_s, rng, style.noise_scale, lo=0.8))

        reach_s = _wobble(style.reach_s, rng, style.noise_scale, lo=0.3, hi=1.8)
        amp = _wobble(style.reach_amp * prof.reach_scale, rng, style.noise_scale)
        roll = _wobble(style.roll_deg * prof.roll_scale, rng, style.noise_scale)
        n_reach = max(5, round(reach_s * RATE_HZ))
        pulse = _minjerk_accel(n_reach) * amp
        lac = np.column_stack([pulse, pulse * style.dir_y, pulse * style.dir_z])
        rate = _minjerk_rate(n_reach) * (roll / (n_reach * DT_S))
        gyr = np.column_stack([rate * style.rot_mix_x, rate, rate * style.rot_mix_z])
        b.segment(lac, gyr)

        align_s = _wobble(style.align_s * prof.align_scale, rng,
                          style.noise_scale, lo=0.5, hi=1.5)
        n_align = max(3, round(align_s * RATE_HZ))
        tau = np.arange(n_align) * DT_S
        jamp = _wobble(style.align_jitter_amp, rng, style.noise_scale, lo=0.05)
        wave = (np.sin(2 * math.pi * style.align_jitter_hz * tau + style.jitter_phase)
                + 0.5 * np.sin(2 * math.pi * 1.9 * style.align_jitter_hz * tau
                               + 2.3 * style.jitter_phase))
        lac = jamp * np.column_stack([0.7 * wave, 0.4 * wave, wave])
        micro = jamp * 12.0 * np.column_stack([wave, 0.3 * wave, 0.6 * wave])
        b.segment(lac, micro)

        contact_idx = b.n - 1
        events.append(NfcEvent(epoch_ms + contact_idx * DT_MS, user_id, session_id,
                               prof.terminal_id))

        wd_s = max(0.3, 0.6 / _wobble(style.withdraw_speed, rng, style.noise_scale, lo=0.2))
        n_wd = max(4, round(wd_s * RATE_HZ))
        pulse = -_minjerk_accel(n_wd) * amp * 0.8
        lac = np.column_stack([pulse, pulse * style.dir_y, pulse * style.dir_z])
        rate = -_minjerk_rate(n_wd) * (roll * 0.8 / (n_wd * DT_S))
        gyr = np.column_stack([rate * style.rot_mix_x, rate, rate * style.rot_mix_z])
        b.segment(lac, gyr)

    b.idle(1.0)
    return b.finish(user_id, session_id, epoch_ms), events


def _activity_segment(model: ActivityModel, n: int, rng: np.random.Generator,
                      builder: _StreamBuilder):
    """Append n samples of the modelled activity to the builder."""
    t = np.arange(n) * DT_S
    lac = rng.normal(0.0, model.noise_sigma, (n, 3))
    gyr = rng.normal(0.0, model.noise_sigma * 20.0, (n, 3))
    if model.kind == "walking":
        phase = rng.uniform(0, 2 * math.pi)
        swing = np.sin(2 * math.pi * model.cadence_hz * t + phase)
        step = 0.35 * np.sin(4 * math.pi * model.cadence_hz * t + 2.1 * phase)
        lac[:, 0] += model.swing_amp * swing
        lac[:, 1] += 0.4 * model.swing_amp * swing
        lac[:, 2] += model.swing_amp * step
        gyr[:, 1] += model.swing_rot * swing
        gyr[:, 0] += 0.3 * model.swing_rot * np.sin(2 * math.pi * model.cadence_hz * t
                                                    + phase + 0.7)
    elif model.kind == "bus_or_train":
        n_jolts = rng.poisson(model.jolt_rate_hz * n * DT_S)
        for _ in range(n_jolts):
            at = rng.integers(0, max(1, n - 10))
            width = rng.integers(4, 14)
            end = min(n, at + width)
            pulse = _minjerk_accel(end - at) * rng.uniform(0.5, 1.0) * model.jolt_amp
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            lac[at:end] += pulse[:, None] * axis
    elif model.kind == "in_store":
        pos = 0
        while pos + RATE_HZ < n:
            gap = round(rng.uniform(0.6, 1.6) * model.episode_gap_s * RATE_HZ)
            dur = round(rng.uniform(0.8, 1.6) * RATE_HZ)
            start = pos + gap
            end = min(n, start + dur)
            if end - start > 5:
                pulse = _minjerk_accel(end - start) * rng.uniform(0.6, 1.2) * model.episode_amp
                rot = _minjerk_rate(end - start)
                rot = rot * (rng.uniform(0.5, 1.1) * model.episode_rot_deg
                             / ((end - start) * DT_S))
                sign = rng.choice([-1.0, 1.0])
                lac[start:end, 0] += pulse
                lac[start:end, 2] += 0.5 * pulse
                gyr[start:end, 1] += sign * rot
                gyr[start:end, 0] += 0.4 * sign * rot
            pos = start + dur
    else:
        raise WristtapError(f"unknown activity kind {model.kind!r}")
    builder.segment(lac, gyr)


def generate_activity_stream(model: ActivityModel, duration_s: float, seed,
                             user_id: str = "u00", session_id: str = "act",
                             epoch_ms: int = 0) -> tuple[SensorStream, ActivitySpan]:
    """A 50 Hz stream of one activity plus its labelled span."""
    if duration_s < 4:
        raise WristtapError("activity duration must be at least 4 s")
    rng = np.random.default_rng(seed)
    b = _StreamBuilder(rng, noise_scale=0.0)  # model noise is explicit
    n = round(duration_s * RATE_HZ)
    _activity_segment(model, n, rng, b)
    stream = b.finish(user_id, session_id, epoch_ms)
    span = ActivitySpan(user_id, model.kind, epoch_ms, epoch_ms + n * DT_MS)
    return stream, span


# share of out-of-lab minutes per activity, echoing the corpus proportions
ACTIVITY_SHARES = (("walking", 0.55), ("bus_or_train", 0.29),
                   ("in_store", 0.14), ("combined", 0.02))

_SESSION_EPOCHS = {"1": 1_000_000, "2": 11_000_000, "3": 21_000_000, "act": 41_000_000}


def generate_population(n_users: int, gestures_per_user: int,
                        activity_minutes_per_user: float, master_seed: int,
                        out_dir=None, sessions: int = 3) -> Dataset:
    """Generate a full corpus, write it in the canonical dataset format, and
    load it back through the parser.

    Gestures are split over `sessions` lab sessions cycling the seven
    terminals; activity minutes are split over walking / bus_or_train /
    in_store plus a small combined share, all in one out-of-lab stream per
    user. Fixed seeds give byte-identical directories.
    """
    if n_users < 1 or gestures_per_user < 1:
        raise WristtapError("population counts must be positive")
    streams: list[SensorStream] = []
    events: list[NfcEvent] = []
    spans: list[ActivitySpan] = []
    profiles = [TERMINAL_PROFILES[t] for t in ("1", "2", "3", "4", "5", "6", "F")]

    for u in range(n_users):
        user_id = f"u{u:02d}"
        style = draw_user_style(np.random.default_rng(
            np.random.SeedSequence(entropy=master_seed, spawn_key=(u, 0))))

        per_session = [gestures_per_user // sessions] * sessions
        for i in range(gestures_per_user % sessions):
            per_session[i] += 1
        offset = 0
        for s in range(sessions):
            if per_session[s] == 0:
                continue
            session_id = str(s + 1)
            sched = [profiles[(offset + g) % len(profiles)] for g in range(per_session[s])]
            stream, evs = generate_tap_stream(
                style, per_session[s], sched,
                np.random.SeedSequence(entropy=master_seed, spawn_key=(u, 1 + s)),
                user_id=user_id, session_id=session_id,
                epoch_ms=_SESSION_EPOCHS.get(session_id, 1_000_000 * (31 + s)))
            streams.append(stream)
            events.extend(evs)
            offset += per_session[s]

        if activity_minutes_per_user > 0:
            total_s = activity_minutes_per_user * 60.0
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=master_seed, spawn_key=(u, 99)))
            b = _StreamBuilder(rng, noise_scale=0.0)
            epoch = _SESSION_EPOCHS["act"]
            cursor = epoch
            for kind, share in ACTIVITY_SHARES:
                dur_s = total_s * share
                n = round(dur_s * RATE_HZ)
                if n * DT_S < 8.0:
                    continue
                start = cursor
                if kind == "combined":
                    thirds = [n // 3, n // 3, n - 2 * (n // 3)]
                    for sub_kind, sub_n in zip(("walking", "in_store", "bus_or_train"), thirds):
                        if sub_n > 0:
                            _activity_segment(draw_activity_model(sub_kind, rng),
                                              sub_n, rng, b)
                else:
                    _activity_segment(draw_activity_model(kind, rng), n, rng, b)
                cursor += n * DT_MS
                spans.append(ActivitySpan(user_id, kind, start, cursor))
            streams.append(b.finish(user_id, "act", epoch))

    dataset = Dataset(streams=tuple(streams), nfc_events=tuple(events),
                      activity_spans=tuple(spans))

    if out_dir is None:
        with tempfile.TemporaryDirectory(prefix="wristtap-synth-") as tmp:
            save_dataset(dataset, tmp)
            return load_dataset(tmp)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, out_dir)
    return load_dataset(out_dir)
