"""Evaluation protocol splits.

Three split families, all enforcing the temporal rule that enrollment-side
windows come from sessions 1-2 and test-side windows from session 3:

- terminal-agnostic authentication: train on every terminal except one
  fixed terminal, test only on the excluded one (the target user's windows
  are positive, every other user's negative);
- terminal-specific authentication: train and test on a single terminal;
- user-agnostic intent recognition: train exclusively on other users'
  windows (taps positive, non-taps negative); the target user's windows
  form the test side, partitioned into class-stratified folds.

Splits are index-based over a window sequence so the same object drives
both window-level tests and feature-matrix evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import GestureWindow, SensorKind, TapLabel, WindowParams
from .core import ALL_KINDS
from .errors import EmptySplit, InsufficientEnrollment, WristtapError
from .ingest import FIXED_TERMINALS, TERMINALS

TRAIN_SESSIONS = ("1", "2")
TEST_SESSION = "3"


@dataclass(frozen=True)
class Split:
    """Index-based train/test split over a window sequence."""

    split_id: str
    train_idx: np.ndarray
    test_idx: np.ndarray
    y_train: np.ndarray
    y_test: np.ndarray

    def __post_init__(self):
        for name in ("train_idx", "test_idx", "y_train", "y_test"):
            arr = np.ascontiguousarray(getattr(self, name))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def train(self, windows: Sequence[GestureWindow]) -> list[GestureWindow]:
        return [windows[i] for i in self.train_idx]

    def test(self, windows: Sequence[GestureWindow]) -> list[GestureWindow]:
        return [windows[i] for i in self.test_idx]


def _require_taps(windows: Sequence[GestureWindow]):
    for w in windows:
        if not isinstance(w.label, TapLabel):
            raise WristtapError("authentication splits take tap windows only")
        if w.label.session_id not in TRAIN_SESSIONS + (TEST_SESSION,):
            raise WristtapError(
                f"authentication windows need session ids 1/2/3, got {w.label.session_id!r}")


def _check_sides(split: Split, context: str) -> Split:
    if len(split.train_idx) == 0 or len(split.test_idx) == 0:
        raise EmptySplit(f"{context}: a split side is empty")
    for side, y in (("train", split.y_train), ("test", split.y_test)):
        if bool(y.all()) or not bool(y.any()):
            raise EmptySplit(f"{context}: {side} side has a single class")
    return split


def _enrollment_subsample(windows: Sequence[GestureWindow], pos_idx: list[int],
                          size: int) -> list[int]:
    """Pick `size` positive training gestures, round-robin by terminal.

    Terminals cycle in canonical order; within a terminal, gestures keep
    session order (then arrival order). Deterministic, no randomness.
    """
    if size > len(pos_idx):
        raise InsufficientEnrollment(
            f"requested {size} enrollment gestures, only {len(pos_idx)} available")
    by_terminal: dict[str, list[int]] = {}
    for i in pos_idx:
        by_terminal.setdefault(windows[i].label.terminal_id, []).append(i)
    for queue in by_terminal.values():
        queue.sort(key=lambda i: (windows[i].label.session_id, i))
    order = [t for t in TERMINALS if t in by_terminal]
    picked: list[int] = []
    cursor = 0
    while len(picked) < size:
        terminal = order[cursor % len(order)]
        queue = by_terminal[terminal]
        if queue:
            picked.append(queue.pop(0))
        elif all(not by_terminal[t] for t in order):
            break
        cursor += 1
    return sorted(picked)


def _auth_split(windows: Sequence[GestureWindow], target_user: str,
                train_keep, test_keep, split_id: str,
                enrollment_size: int | None) -> Split:
    _require_taps(windows)
    train, test = [], []
    for i, w in enumerate(windows):
        label = w.label
        if label.session_id in TRAIN_SESSIONS and train_keep(label):
            train.append(i)
        elif label.session_id == TEST_SESSION and test_keep(label):
            test.append(i)
    if enrollment_size is not None:
        pos = [i for i in train if windows[i].label.user_id == target_user]
        neg = [i for i in train if windows[i].label.user_id != target_user]
        train = sorted(_enrollment_subsample(windows, pos, enrollment_size) + neg)
    y_train = np.array([windows[i].label.user_id == target_user for i in train])
    y_test = np.array([windows[i].label.user_id == target_user for i in test])
    split = Split(split_id, np.array(train, dtype=np.int64),
                  np.array(test, dtype=np.int64), y_train, y_test)
    return _check_sides(split, split_id)


def split_auth_terminal_agnostic(windows: Sequence[GestureWindow], target_user: str,
                                 excluded_terminal: str,
                                 enrollment_size: int | None = None) -> Split:
    """Train on sessions 1-2 everywhere but the excluded fixed terminal;
    test on session 3 at the excluded terminal only."""
    if excluded_terminal not in FIXED_TERMINALS:
        raise WristtapError(f"excluded terminal must be fixed (1-6), got {excluded_terminal!r}")
    return _auth_split(
        windows, target_user,
        train_keep=lambda lb: lb.terminal_id != excluded_terminal,
        test_keep=lambda lb: lb.terminal_id == excluded_terminal,
        split_id=f"{target_user}|x{excluded_terminal}",
        enrollment_size=enrollment_size,
    )


def split_auth_terminal_specific(windows: Sequence[GestureWindow], target_user: str,
                                 terminal: str,
                                 enrollment_size: int | None = None) -> Split:
    """Train and test on tap gestures from a single terminal (F included)."""
    if terminal not in TERMINALS:
        raise WristtapError(f"unknown terminal {terminal!r}")
    return _auth_split(
        windows, target_user,
        train_keep=lambda lb: lb.terminal_id == terminal,
        test_keep=lambda lb: lb.terminal_id == terminal,
        split_id=f"{target_user}|t{terminal}",
        enrollment_size=enrollment_size,
    )


def split_intent_user_agnostic(windows: Sequence[GestureWindow], target_user: str,
                               fold_count: int = 10) -> list[Split]:
    """Leave-one-user-out intent splits with stratified test folds.

    Every fold's training side is the same: all other users' windows, taps
    positive and non-taps negative. The target user's windows are
    partitioned by class round-robin into `fold_count` test folds, keeping
    each fold's class proportions within one example of the user's own.
    """
    if fold_count < 1:
        raise WristtapError("fold_count must be >= 1")
    train, target_pos, target_neg = [], [], []
    for i, w in enumerate(windows):
        if w.label.user_id == target_user:
            (target_pos if w.is_tap else target_neg).append(i)
        else:
            train.append(i)
    y_train = np.array([windows[i].is_tap for i in train])
    if not train or not target_pos or not target_neg:
        raise EmptySplit(f"intent split for {target_user}: missing a class or side")
    if not (y_train.any() and not y_train.all()):
        raise EmptySplit(f"intent split for {target_user}: train side has a single class")

    train_idx = np.array(train, dtype=np.int64)
    folds = []
    for k in range(fold_count):
        test = sorted(target_pos[k::fold_count] + target_neg[k::fold_count])
        if not test:
            continue
        y_test = np.array([windows[i].is_tap for i in test])
        folds.append(Split(f"{target_user}#f{k}", train_idx,
                           np.array(test, dtype=np.int64), y_train, y_test))
    return folds


@dataclass(frozen=True)
class WindowGrid:
    """The (size, offset) sweep lattice, trimmed to feasible cells."""

    sizes: tuple[float, ...] = tuple(np.arange(1, 9) * 0.5)
    offsets: tuple[float, ...] = tuple((np.arange(9) - 4) * 0.5)

    def cells(self) -> list[WindowParams]:
        out = []
        for s in self.sizes:
            for o in self.offsets:
                if s > 0 and o >= -2.0 and s + o <= 4.0:
                    out.append(WindowParams(float(s), float(o)))
        return out

    @classmethod
    def single(cls, size_s: float, offset_o: float) -> "WindowGrid":
        return cls(sizes=(size_s,), offsets=(offset_o,))


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    mtry: int | None = None
    max_depth: int | None = None
    min_split: int = 2
    bootstrap: bool = True


AUTH_TERMINAL_AGNOSTIC = "auth_terminal_agnostic"
AUTH_TERMINAL_SPECIFIC = "auth_terminal_specific"
INTENT_USER_AGNOSTIC = "intent_user_agnostic"
PROTOCOL_KINDS = (AUTH_TERMINAL_AGNOSTIC, AUTH_TERMINAL_SPECIFIC, INTENT_USER_AGNOSTIC)


@dataclass(frozen=True)
class ProtocolSpec:
    """What to evaluate: protocol kind, window grid, sensors, seeds, knobs."""

    kind: str
    grid: WindowGrid = field(default_factory=WindowGrid)
    subset: tuple[SensorKind, ...] = ALL_KINDS
    seeds: tuple[int, ...] = tuple(range(10))
    enrollment_size: int | None = None
    fold_count: int = 10
    theta: float = 0.5
    cutoff_hz: float = 10.0
    peak_gate: float = 0.25
    forest: ForestParams = field(default_factory=ForestParams)

    def __post_init__(self):
        if self.kind not in PROTOCOL_KINDS:
            raise WristtapError(f"unknown protocol kind {self.kind!r}")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise WristtapError("seeds must be non-empty and distinct")
        if self.enrollment_size is not None and self.kind == INTENT_USER_AGNOSTIC:
            raise WristtapError("enrollment size applies to authentication only")
