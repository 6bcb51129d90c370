"""Synthetic users, fraud injection and end-to-end scenario runs.

Every run pushes mobile events through a device buffer into the gatherer and
sends each transaction through :class:`~hybridfraud.service.PaymentService`,
so simulated decisions are the decisions the service would make.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .cascade import DecisionTrace
from .config import EngineConfig
from .service import PaymentRequest, PaymentService
from .store import DeviceBuffer, MobileEvent, ProfileStore, transfer_and_erase

DEFAULT_POPULATION_SEED = 20110607
STANDARD_POPULATION_SIZE = 50


@dataclass(frozen=True)
class CountDist:
    """Daily count distribution.

    ``dispersion`` is the variance-to-mean ratio: 0 gives a constant count,
    1 a Poisson draw, above 1 a gamma-Poisson (negative binomial) draw and
    values in between a binomial draw.
    """

    mean: float
    dispersion: float = 1.0

    def __post_init__(self):
        if self.mean < 0 or self.dispersion < 0:
            raise ValueError("mean and dispersion must be non-negative")

    def draw(self, rng: np.random.Generator) -> int:
        m, d = self.mean, self.dispersion
        if d == 0 or m == 0:
            return int(round(m))
        if d == 1:
            return int(rng.poisson(m))
        if d > 1:
            return int(rng.poisson(rng.gamma(m / (d - 1), d - 1)))
        p = 1 - d
        return int(rng.binomial(max(1, int(round(m / p))), p))


@dataclass(frozen=True)
class SpendingDist:
    """Mixture over low/medium/high amount regimes with uniform relative jitter."""

    weights: tuple[float, float, float] = (0.7, 0.2, 0.1)
    means: tuple[float, float, float] = (20.0, 150.0, 800.0)
    spread: float = 0.25

    def __post_init__(self):
        if len(self.weights) != 3 or len(self.means) != 3:
            raise ValueError("need three regime weights and means")
        if any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
            raise ValueError("regime weights must be non-negative with positive sum")
        if not 0 <= self.spread < 1:
            raise ValueError("spread must lie in [0, 1)")

    def draw(self, rng: np.random.Generator) -> float:
        w = np.asarray(self.weights, dtype=float)
        regime = int(rng.choice(3, p=w / w.sum()))
        jitter = rng.uniform(-1, 1) * self.spread if self.spread else 0.0
        return round(self.means[regime] * (1 + jitter), 2)


def _default_counts() -> dict[str, CountDist]:
    return {
        "calls": CountDist(5, 1.5),
        "sms": CountDist(5, 1.5),
        "location_presence": CountDist(10, 0.5),
    }


@dataclass(frozen=True)
class UserGenerator:
    user: str = "u0"
    seed: int = 0
    counts: Mapping[str, CountDist] = field(default_factory=_default_counts)
    spending: SpendingDist = field(default_factory=SpendingDist)
    home_cell: str = "cell-0"
    txns_per_day: int = 1
    train_txns: int = 50
    warmup_days: int = 7

    def to_dict(self) -> dict:
        d = asdict(self)
        d["counts"] = {k: asdict(v) for k, v in self.counts.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UserGenerator":
        d = dict(d)
        if "counts" in d:
            d["counts"] = {k: CountDist(**v) for k, v in d["counts"].items()}
        if "spending" in d:
            s = d["spending"]
            d["spending"] = SpendingDist(**{k: tuple(v) if isinstance(v, list) else v for k, v in s.items()})
        return cls(**d)


@dataclass(frozen=True)
class Transaction:
    txn: str
    user: str
    day: int
    amount: float
    location: str
    fraud: bool = False


@dataclass
class UserStreams:
    user: str
    home_cell: str
    days: int
    events: list[MobileEvent]
    transactions: list[Transaction]


def generate_user(gen: UserGenerator, days: int) -> UserStreams:
    """Daily mobile events plus transactions for one legitimate user.

    The first ``train_txns`` transactions fall inside the warm-up days and
    train the spending model; afterwards ``txns_per_day`` transactions
    happen each day.
    """
    if days < gen.warmup_days:
        raise ValueError(f"horizon {days} shorter than warm-up ({gen.warmup_days} days)")
    count_seq, spend_seq = np.random.SeedSequence(gen.seed).spawn(2)
    rng_counts, rng_spend = np.random.default_rng(count_seq), np.random.default_rng(spend_seq)
    events = [
        MobileEvent(gen.user, day, kind, dist.draw(rng_counts))
        for day in range(days)
        for kind, dist in gen.counts.items()
    ]
    txn_days = [i * gen.warmup_days // gen.train_txns for i in range(gen.train_txns)]
    txn_days += [day for day in range(gen.warmup_days, days) for _ in range(gen.txns_per_day)]
    transactions = [
        Transaction(f"{gen.user}-{i:05d}", gen.user, day, gen.spending.draw(rng_spend), gen.home_cell)
        for i, day in enumerate(txn_days)
    ]
    return UserStreams(gen.user, gen.home_cell, days, events, transactions)


@dataclass(frozen=True)
class FraudScenario:
    kind: str = "none"
    onset_day: int = 0
    fraudster_spending: Optional[SpendingDist] = None
    fraudster_cell: str = "cell-fraud"
    seed: int = 1

    def __post_init__(self):
        if self.kind not in ("none", "mobile_theft", "card_theft"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "FraudScenario":
        d = dict(d)
        if d.get("fraudster_spending") is not None:
            s = d["fraudster_spending"]
            d["fraudster_spending"] = SpendingDist(**{k: tuple(v) if isinstance(v, list) else v for k, v in s.items()})
        return cls(**d)


HIGH_SPENDER = SpendingDist(weights=(0.0, 0.0, 1.0))


def inject_fraud(streams: UserStreams, scenario: FraudScenario) -> UserStreams:
    """Apply a theft scenario from ``scenario.onset_day`` onwards.

    Mobile theft silences every mobile parameter; transactions after onset
    belong to the thief (their amounts change only if a fraudster spending
    distribution is given). Card theft leaves the phone alone and replaces
    post-onset transactions with fraudster amounts made from the fraudster's
    cell.
    """
    if scenario.kind == "none":
        return replace(streams, events=list(streams.events), transactions=list(streams.transactions))
    if not 0 <= scenario.onset_day < streams.days:
        raise ValueError(f"onset day {scenario.onset_day} outside horizon 0..{streams.days - 1}")
    rng = np.random.default_rng(scenario.seed)
    onset = scenario.onset_day
    events = list(streams.events)
    spending = scenario.fraudster_spending
    if scenario.kind == "mobile_theft":
        events = [replace(e, count=0) if e.day >= onset else e for e in events]
        location = None
    else:
        spending = spending or HIGH_SPENDER
        location = scenario.fraudster_cell
    transactions = []
    for t in streams.transactions:
        if t.day >= onset:
            t = replace(
                t,
                fraud=True,
                amount=spending.draw(rng) if spending is not None else t.amount,
                location=location or t.location,
            )
        transactions.append(t)
    return replace(streams, events=events, transactions=transactions)


@dataclass
class ScenarioMetrics:
    false_positive_rate: float
    detection_rate: float
    first_detection_day: Optional[int]
    n_legit: int
    n_false_positive: int
    n_fraud: int
    n_detected: int
    n_warmup: int
    trajectory: list[dict]

    def to_dict(self, with_trajectory: bool = True) -> dict:
        d = asdict(self)
        if not with_trajectory:
            del d["trajectory"]
        return d

    def write_csv(self, path: Path | str) -> None:
        rows = self.trajectory
        columns: list[str] = []
        for r in rows:
            columns += [c for c in r if c not in columns]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns)
            writer.writeheader()
            writer.writerows(rows)


@dataclass
class ScenarioRun:
    metrics: ScenarioMetrics
    traces: list[DecisionTrace]
    service: PaymentService
    streams: UserStreams


def run_streams(
    streams: UserStreams,
    config: EngineConfig = EngineConfig(),
    keep_snapshots: bool = True,
) -> ScenarioRun:
    """Drive one user's streams through a fresh service, day by day.

    Each day the phone's buffered events are transferred to the gatherer
    before that day's payments are decided.
    """
    store = ProfileStore(None, config.score.window_len, config.hmm)
    clock_day = [0]
    service = PaymentService(store, config, clock=lambda: float(clock_day[0]), keep_snapshots=keep_snapshots)
    store.set_home_cell(streams.user, streams.home_cell)
    buffer = DeviceBuffer(f"{streams.user}-phone")
    events_by_day: dict[int, list[MobileEvent]] = {}
    for e in streams.events:
        events_by_day.setdefault(e.day, []).append(e)
    txns_by_day: dict[int, list[Transaction]] = {}
    for t in streams.transactions:
        txns_by_day.setdefault(t.day, []).append(t)

    rows, traces = [], []
    for day in range(streams.days):
        clock_day[0] = day
        for e in events_by_day.get(day, []):
            buffer.record(e)
        if len(buffer):
            transfer_and_erase(buffer, service.handle_event_ingest)
        for t in txns_by_day.get(day, []):
            resp = service.handle_payment(PaymentRequest(t.txn, t.user, t.amount, t.location, t.day))
            trace = service.traces[resp.trace]
            traces.append(trace)
            row = {"day": day, "txn": t.txn, "fraud": t.fraud, "amount": t.amount, "status": resp.status}
            for s in trace.scores:
                row[f"score_{s['kind']}"] = s["score"]
            row.update(aggregate=resp.score, case=resp.case, verdict=resp.verdict, delta=resp.delta)
            rows.append(row)
    return ScenarioRun(_metrics(rows), traces, service, streams)


def _metrics(rows: list[dict]) -> ScenarioMetrics:
    decided = [r for r in rows if r["status"] == "decided"]
    legit = [r for r in decided if not r["fraud"]]
    fraud = [r for r in decided if r["fraud"]]
    fp = sum(r["verdict"] != "accept" for r in legit)
    caught = [r for r in fraud if r["verdict"] in ("reject", "alarm")]
    return ScenarioMetrics(
        false_positive_rate=fp / len(legit) if legit else 0.0,
        detection_rate=len(caught) / len(fraud) if fraud else 0.0,
        first_detection_day=min((r["day"] for r in caught), default=None),
        n_legit=len(legit),
        n_false_positive=fp,
        n_fraud=len(fraud),
        n_detected=len(caught),
        n_warmup=len(rows) - len(decided),
        trajectory=rows,
    )


def run_scenario(
    gen: UserGenerator,
    scenario: FraudScenario = FraudScenario(),
    days: int = 60,
    config: EngineConfig = EngineConfig(),
    keep_snapshots: bool = True,
) -> ScenarioRun:
    return run_streams(inject_fraud(generate_user(gen, days), scenario), config, keep_snapshots)


# -- worked example ------------------------------------------------------------

WEEK_RECORD = {
    "calls": (5, 10, 15, 3, 3, 4, 5),
    "sms": (10, 15, 4, 2, 3, 2, 3),
}
WEEK_USER = "week"
THEFT_DAY = 7

# Exact scores for the two days after the phone goes silent:
# calls 45/7 -> 40/7 -> 30/7, sms 39/7 -> 29/7 -> 14/7, score = 100 * new / old.
_DAY1 = {"calls": Fraction(100 * 40, 45), "sms": Fraction(100 * 29, 39)}
_DAY2 = {"calls": Fraction(100 * 30, 40), "sms": Fraction(100 * 14, 29)}
WORKED_EXAMPLE_EXPECTED = [
    {
        "day": THEFT_DAY,
        "scores": _DAY1,
        "aggregate": sum(_DAY1.values()) / 2,
        "case": "direct_accept",
    },
    {
        "day": THEFT_DAY + 1,
        "scores": _DAY2,
        "aggregate": sum(_DAY2.values()) / 2,
        "case": "escalate",
    },
]


def week_record_streams(days_after_theft: int = 2, amount: float = 20.0, train_seed: int = 0) -> UserStreams:
    """The one-week call/SMS record, then silence from the theft day.

    Fifty warm-up transactions drawn from the default spending mixture train
    the spending model during the recorded week; one payment of ``amount`` is
    made on every day from the theft day on.
    """
    events = [
        MobileEvent(WEEK_USER, day, kind, counts[day])
        for day in range(THEFT_DAY)
        for kind, counts in WEEK_RECORD.items()
    ]
    rng = np.random.default_rng(train_seed)
    spending = SpendingDist()
    train = [
        Transaction(f"{WEEK_USER}-w{i:02d}", WEEK_USER, i * THEFT_DAY // 50, spending.draw(rng), "cell-0")
        for i in range(50)
    ]
    horizon = THEFT_DAY + days_after_theft
    post = [
        Transaction(f"{WEEK_USER}-d{day}", WEEK_USER, day, amount, "cell-0", fraud=True)
        for day in range(THEFT_DAY, horizon)
    ]
    return UserStreams(WEEK_USER, "cell-0", horizon, events, train + post)


def mobile_theft_trajectory(days_after_theft: int = 10, config: EngineConfig = EngineConfig()) -> ScenarioRun:
    return run_streams(week_record_streams(days_after_theft), config)


@dataclass
class ReplayReport:
    rows: list[dict]
    checks: list[dict]

    @property
    def ok(self) -> bool:
        return all(c["ok"] for c in self.checks)

    @property
    def failures(self) -> list[dict]:
        return [c for c in self.checks if not c["ok"]]

    def to_dict(self) -> dict:
        return {"ok": self.ok, "checks": self.checks, "rows": self.rows}


def replay_worked_example(tol: float = 1e-6, config: EngineConfig = EngineConfig()) -> ReplayReport:
    """Replay the one-week record with the phone silent from the next day.

    Checks the per-parameter scores, aggregate and cascade case on the two
    days after the theft against exact rational values.
    """
    run = run_streams(week_record_streams(2), config)
    rows = [r for r in run.metrics.trajectory if r["status"] == "decided"]
    checks = []
    for expected in WORKED_EXAMPLE_EXPECTED:
        day = expected["day"]
        row = next((r for r in rows if r["day"] == day), None)
        if row is None:
            checks.append({"quantity": f"day {day} decision", "expected": "decided", "actual": None, "ok": False})
            continue
        for kind, value in expected["scores"].items():
            actual = row.get(f"score_{kind}")
            ok = actual is not None and abs(actual - float(value)) <= tol
            checks.append({"quantity": f"day {day} {kind} score", "expected": float(value), "actual": actual, "ok": ok})
        agg = float(expected["aggregate"])
        checks.append(
            {
                "quantity": f"day {day} aggregate",
                "expected": agg,
                "actual": row["aggregate"],
                "ok": abs(row["aggregate"] - agg) <= tol,
            }
        )
        checks.append(
            {
                "quantity": f"day {day} case",
                "expected": expected["case"],
                "actual": row["case"],
                "ok": row["case"] == expected["case"],
            }
        )
    return ReplayReport(rows, checks)


# -- detector comparison ---------------------------------------------------------


def make_population(
    n: int = STANDARD_POPULATION_SIZE,
    seed: int = DEFAULT_POPULATION_SEED,
) -> list[UserGenerator]:
    """Heterogeneous legitimate users with bursty (overdispersed) phone habits."""
    rng = np.random.default_rng(seed)
    population = []
    for i in range(n):
        counts = {
            "calls": CountDist(float(rng.uniform(2, 8)), float(rng.uniform(4, 12))),
            "sms": CountDist(float(rng.uniform(2, 10)), float(rng.uniform(4, 12))),
            "location_presence": CountDist(float(rng.uniform(6, 14)), float(rng.uniform(0.5, 2))),
        }
        weights = tuple(float(w) for w in rng.dirichlet((6.0, 3.0, 1.0)))
        population.append(
            UserGenerator(
                user=f"p{i:04d}",
                seed=int(rng.integers(2**31)),
                counts=counts,
                spending=SpendingDist(weights=weights),
                home_cell=f"cell-{i % 17}",
            )
        )
    return population


@dataclass
class DetectorComparison:
    days: int
    fpr: dict[str, float]
    n_legit: dict[str, int]
    n_false_positive: dict[str, int]
    per_user_fp: dict[str, list[int]]

    def to_dict(self) -> dict:
        return asdict(self)


def compare_detectors(
    population: Sequence[UserGenerator],
    config: EngineConfig = EngineConfig(),
    days: int = 60,
    policies: Sequence[str] = ("hybrid", "mobile_only", "hmm_only"),
) -> DetectorComparison:
    """False-positive rates of each decision policy on legitimate users."""
    totals = {p: [0, 0] for p in policies}
    per_user = {p: [] for p in policies}
    for gen in population:
        streams = generate_user(gen, days)
        for policy in policies:
            m = run_streams(streams, replace(config, policy=policy), keep_snapshots=False).metrics
            totals[policy][0] += m.n_legit
            totals[policy][1] += m.n_false_positive
            per_user[policy].append(m.n_false_positive)
    return DetectorComparison(
        days=days,
        fpr={p: (fp / n if n else 0.0) for p, (n, fp) in totals.items()},
        n_legit={p: n for p, (n, _) in totals.items()},
        n_false_positive={p: fp for p, (_, fp) in totals.items()},
        per_user_fp=per_user,
    )


def load_scenario_file(path: Path | str) -> dict:
    """Read a scenario document: generator, scenario, days and engine config."""
    doc = json.loads(Path(path).read_text())
    return {
        "generator": UserGenerator.from_dict(doc.get("generator", {})),
        "scenario": FraudScenario.from_dict(doc.get("scenario", {})),
        "days": int(doc.get("days", 60)),
        "engine": EngineConfig.from_dict(doc.get("engine", {})),
    }
