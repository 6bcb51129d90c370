"""Two-threshold decision cascade.

Scores below ``t1`` are rejected outright, scores above ``t2`` accepted
outright, and everything in between (ties included) is escalated to the
spending-profile HMM.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Callable, Optional

from .behavior import AuthScore

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class CaseLabel(str, Enum):
    DIRECT_REJECT = "direct_reject"
    ESCALATE = "escalate"
    DIRECT_ACCEPT = "direct_accept"


class Outcome(str, Enum):
    ACCEPT = "accept"
    REJECT = "reject"
    ALARM = "alarm"


POLICIES = ("hybrid", "mobile_only", "hmm_only")


@dataclass(frozen=True)
class Thresholds:
    t1: float = 25.0
    t2: float = 75.0

    def __post_init__(self):
        if not 0 <= self.t1 < self.t2 <= 100:
            raise ConfigError(f"thresholds must satisfy 0 <= t1 < t2 <= 100, got ({self.t1}, {self.t2})")


@dataclass(frozen=True)
class Verdict:
    outcome: Outcome
    case: CaseLabel
    auth_score: float
    hmm_delta: Optional[float] = None


@dataclass
class DecisionTrace:
    """Everything needed to audit and replay one payment decision."""

    trace_id: str
    txn: str
    user: str
    day: int
    timestamp: float
    scores: list[dict]
    aggregate: Optional[float]
    thresholds: tuple[float, float]
    policy: str
    case: Optional[CaseLabel]
    verdict: Optional[Outcome]
    delta: Optional[float] = None
    alpha_prev: Optional[float] = None
    alpha_new: Optional[float] = None
    annotation: str = ""
    request: dict = field(default_factory=dict)
    snapshot: Optional[dict] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["thresholds"] = list(self.thresholds)
        d["case"] = self.case.value if self.case else None
        d["verdict"] = self.verdict.value if self.verdict else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTrace":
        d = dict(d)
        d["thresholds"] = tuple(d["thresholds"])
        d["case"] = CaseLabel(d["case"]) if d.get("case") else None
        d["verdict"] = Outcome(d["verdict"]) if d.get("verdict") else None
        return cls(**d)


def classify(score: float, thresholds: Thresholds) -> CaseLabel:
    if not 0 <= score <= 100:
        raise ValueError(f"score {score!r} outside [0, 100]")
    if score < thresholds.t1:
        return CaseLabel.DIRECT_REJECT
    if score > thresholds.t2:
        return CaseLabel.DIRECT_ACCEPT
    return CaseLabel.ESCALATE


EscalationHook = Callable[[], Any]


def decide(
    score: AuthScore,
    thresholds: Thresholds,
    escalation: EscalationHook,
    policy: str = "hybrid",
) -> tuple[Verdict, dict[str, Any]]:
    """Run the cascade for one aggregate score.

    ``escalation`` is called at most once, only on the escalate path. It must
    return an object with ``delta``, ``is_fraud``, ``alpha_prev`` and
    ``alpha_new`` and is responsible for committing a cleared transaction.
    Any exception it raises turns into an Alarm.

    ``policy`` selects the comparison baselines: ``mobile_only`` accepts iff
    the score exceeds t2 and never escalates; ``hmm_only`` always escalates.

    Returns the verdict and a dict of trace details (HMM alphas, annotation).
    """
    if policy not in POLICIES:
        raise ConfigError(f"unknown policy {policy!r}")
    agg = score.aggregate
    details: dict[str, Any] = {}
    if policy == "hmm_only":
        if not 0 <= agg <= 100:
            raise ValueError(f"score {agg!r} outside [0, 100]")
        case = CaseLabel.ESCALATE
    elif policy == "mobile_only":
        case = CaseLabel.DIRECT_ACCEPT if classify(agg, thresholds) is CaseLabel.DIRECT_ACCEPT else CaseLabel.DIRECT_REJECT
    else:
        case = classify(agg, thresholds)

    if case is CaseLabel.DIRECT_REJECT:
        return Verdict(Outcome.REJECT, case, agg), details
    if case is CaseLabel.DIRECT_ACCEPT:
        return Verdict(Outcome.ACCEPT, case, agg), details

    try:
        result = escalation()
        delta = float(result.delta)
        is_fraud = bool(result.is_fraud)
        details["alpha_prev"] = float(result.alpha_prev)
        details["alpha_new"] = float(result.alpha_new)
    except Exception as exc:  # fail closed
        log.warning("escalation failed, raising alarm: %s", exc)
        details["annotation"] = f"escalation failed: {type(exc).__name__}: {exc}"
        return Verdict(Outcome.ALARM, case, agg, hmm_delta=float("nan")), details
    outcome = Outcome.ALARM if is_fraud else Outcome.ACCEPT
    return Verdict(outcome, case, agg, hmm_delta=delta), details
