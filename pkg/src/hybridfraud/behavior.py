"""Implicit-authentication scoring from rolling windows of daily mobile activity.

Each behavioral parameter (calls, SMS, web use, presence in the modal location
cell) keeps a window of the last W daily counts. A day is scored by comparing
the window average before and after the day's count slides in:

    score = 100 - 100 * (prev_avg - new_avg) / prev_avg

clamped to [0, 100]. Parameter scores are averaged into one aggregate.

Functions accept ints, floats or ``fractions.Fraction``; exact inputs give
exact outputs (except for the configured zero-baseline score).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence


class ParameterKind(str, Enum):
    CALLS = "calls"
    SMS = "sms"
    WEB = "web"
    LOCATION_PRESENCE = "location_presence"


KNOWN_KINDS = tuple(k.value for k in ParameterKind)


class UnwarmedWindowError(ValueError):
    """Raised when a window has no history to average."""


class UnknownParameterError(KeyError):
    pass


@dataclass(frozen=True)
class BehaviorWindow:
    kind: str
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "kind", str(getattr(self.kind, "value", self.kind)))
        object.__setattr__(self, "values", tuple(self.values))
        if any(v < 0 for v in self.values):
            raise ValueError(f"{self.kind}: daily counts must be non-negative")

    @property
    def window_len(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ParameterScore:
    kind: str
    prev_avg: float
    new_avg: float
    score: float


@dataclass(frozen=True)
class AuthScore:
    per_parameter: tuple[ParameterScore, ...]
    aggregate: float

    def by_kind(self) -> dict[str, float]:
        return {p.kind: p.score for p in self.per_parameter}


@dataclass(frozen=True)
class ScoreConfig:
    window_len: int = 7
    aggregation: str = "mean"
    # "signed" only penalises drops; "absolute" also penalises rises.
    deviation_mode: str = "signed"
    zero_baseline_score: float = 100.0
    # Optional per-kind weights for the aggregate; missing kinds weigh 1.
    weights: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.window_len < 1:
            raise ValueError("window_len must be >= 1")
        if self.aggregation != "mean":
            raise ValueError(f"unsupported aggregation {self.aggregation!r}")
        if self.deviation_mode not in ("signed", "absolute"):
            raise ValueError(f"unknown deviation_mode {self.deviation_mode!r}")
        if not 0 <= self.zero_baseline_score <= 100:
            raise ValueError("zero_baseline_score must lie in [0, 100]")
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("weights must be non-negative")


def window_average(window: BehaviorWindow):
    if not window.values:
        raise UnwarmedWindowError(f"{window.kind}: window is empty (profile not warmed up)")
    return sum(window.values) / len(window.values)


def slide(window: BehaviorWindow, new_value) -> BehaviorWindow:
    if new_value < 0:
        raise ValueError(f"{window.kind}: negative count {new_value!r}")
    if not window.values:
        raise UnwarmedWindowError(f"{window.kind}: cannot slide an empty window")
    return BehaviorWindow(window.kind, window.values[1:] + (new_value,))


def _clamp(x):
    return min(max(x, 0), 100)


def parameter_score(prev_avg, new_avg, config: ScoreConfig = ScoreConfig(), kind: str = "") -> ParameterScore:
    if prev_avg < 0 or new_avg < 0:
        raise ValueError("averages must be non-negative")
    if prev_avg == 0:
        score = config.zero_baseline_score if new_avg == 0 else 0.0
    else:
        diff = prev_avg - new_avg
        if config.deviation_mode == "absolute":
            diff = abs(diff)
        score = _clamp(100 - 100 * diff / prev_avg)
    return ParameterScore(kind=kind, prev_avg=prev_avg, new_avg=new_avg, score=score)


def aggregate_score(scores: Sequence[ParameterScore], config: ScoreConfig = ScoreConfig()) -> AuthScore:
    if not scores:
        raise ValueError("need at least one parameter score to aggregate")
    weights = [config.weights.get(s.kind, 1) for s in scores]
    total = sum(weights)
    if total == 0:
        raise ValueError("all aggregation weights are zero")
    if all(w == 1 for w in weights):
        agg = sum(s.score for s in scores) / len(scores)
    else:
        agg = sum(w * s.score for w, s in zip(weights, scores)) / total
    return AuthScore(per_parameter=tuple(scores), aggregate=agg)


def score_day(
    windows: Mapping[str, BehaviorWindow],
    today: Mapping[str, int],
    config: ScoreConfig = ScoreConfig(),
) -> tuple[AuthScore, dict[str, BehaviorWindow]]:
    """Score one day of activity against the stored windows.

    Returns the aggregate score and the windows advanced by ``today``.
    Parameters absent from ``today`` are neither scored nor advanced.
    """
    scores = []
    updated = dict(windows)
    for kind, count in today.items():
        kind = str(getattr(kind, "value", kind))
        if kind not in windows:
            raise UnknownParameterError(f"no behavior window for parameter {kind!r}")
        window = windows[kind]
        prev_avg = window_average(window)
        slid = slide(window, count)
        scores.append(parameter_score(prev_avg, window_average(slid), config, kind=kind))
        updated[kind] = slid
    return aggregate_score(scores, config), updated
