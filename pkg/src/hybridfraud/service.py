"""Payment decision service.

The in-process :class:`PaymentService` plays the authentication decider and
checker; the :class:`~hybridfraud.store.ProfileStore` plays the data gatherer
and holds the spending HMM. :func:`make_server` exposes the service over HTTP:

    POST /payment        {"txn","user","amount","location","day"}
    POST /events         newline-delimited event lines
    GET  /profile/<user>
    GET  /trace/<id>
"""

from __future__ import annotations

import json
import logging
import math
import threading
import time
from dataclasses import dataclass
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Optional
from urllib.parse import unquote

from .behavior import AuthScore, ParameterKind, score_day
from .cascade import DecisionTrace, Outcome, decide
from .config import EngineConfig
from .store import (
    BatchError,
    EventBatch,
    NotFoundError,
    ProfileStore,
    UserProfile,
    parse_event_lines,
    profile_to_snapshot,
    snapshot_to_profile,
)

log = logging.getLogger(__name__)

WARMUP = "warmup_required"


class RequestError(ValueError):
    pass


@dataclass(frozen=True)
class PaymentRequest:
    txn: str
    user: str
    amount: float
    location: str
    day: int

    def __post_init__(self):
        if not self.txn or not self.user:
            raise RequestError("txn and user must be non-empty")
        if isinstance(self.amount, bool) or not isinstance(self.amount, (int, float)) or not self.amount >= 0:
            raise RequestError(f"amount must be a non-negative number, got {self.amount!r}")
        if isinstance(self.day, bool) or not isinstance(self.day, int):
            raise RequestError(f"day must be an integer, got {self.day!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "PaymentRequest":
        if not isinstance(d, dict):
            raise RequestError("payment body must be a JSON object")
        missing = {"txn", "user", "amount", "location", "day"} - d.keys()
        if missing:
            raise RequestError(f"missing field(s) {sorted(missing)}")
        return cls(str(d["txn"]), str(d["user"]), d["amount"], str(d["location"]), d["day"])

    def to_dict(self) -> dict:
        return {"txn": self.txn, "user": self.user, "amount": self.amount, "location": self.location, "day": self.day}


@dataclass(frozen=True)
class PaymentResponse:
    txn: str
    verdict: Optional[str]
    case: Optional[str]
    score: Optional[float]
    delta: Optional[float]
    trace: str
    status: str = "decided"

    def to_dict(self) -> dict:
        d = {
            "txn": self.txn,
            "verdict": self.verdict,
            "case": self.case,
            "score": self.score,
            "delta": self.delta,
            "trace": self.trace,
        }
        if self.status != "decided":
            d["status"] = self.status
        return d


def _finite_or_none(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


class PaymentService:
    def __init__(
        self,
        store: Optional[ProfileStore] = None,
        config: EngineConfig = EngineConfig(),
        clock: Callable[[], float] = time.time,
        keep_snapshots: bool = True,
        trace_path: Optional[Path | str] = None,
    ):
        self.config = config
        self.store = store if store is not None else ProfileStore(None, config.score.window_len, config.hmm)
        self.clock = clock
        self.keep_snapshots = keep_snapshots
        self.trace_path = Path(trace_path) if trace_path is not None else None
        self.traces: dict[str, DecisionTrace] = {}
        self._trace_lock = threading.Lock()

    # -- authentication checker --

    def check(self, profile: UserProfile, req: PaymentRequest) -> Optional[AuthScore]:
        """Score the user's behavior on the request day, or None before warm-up."""
        windows, today, completed = profile.view_at(req.day)
        if completed < self.config.score.window_len or not windows:
            return None
        loc = ParameterKind.LOCATION_PRESENCE.value
        if loc in today and profile.home_cell is not None and req.location != profile.home_cell:
            # the phone is not where the card is being used
            today[loc] = 0
        auth, _ = score_day(windows, today, self.config.score)
        return auth

    # -- authentication decider --

    def handle_payment(self, req: PaymentRequest) -> PaymentResponse:
        with self.store.locked(req.user):
            if f"tr-{req.txn}" in self.traces:
                raise RequestError(f"duplicate transaction id {req.txn!r}")
            profile = self.store.get(req.user)
            snapshot = profile_to_snapshot(profile) if self.keep_snapshots else None
            auth = self.check(profile, req)
            trace = DecisionTrace(
                trace_id=f"tr-{req.txn}",
                txn=req.txn,
                user=req.user,
                day=req.day,
                timestamp=self.clock(),
                scores=[],
                aggregate=None,
                thresholds=(self.config.thresholds.t1, self.config.thresholds.t2),
                policy=self.config.policy,
                case=None,
                verdict=None,
                request=req.to_dict(),
                snapshot=snapshot,
            )
            if auth is not None:
                trace.scores = [
                    {"kind": p.kind, "prev_avg": float(p.prev_avg), "new_avg": float(p.new_avg), "score": float(p.score)}
                    for p in auth.per_parameter
                ]
                trace.aggregate = float(auth.aggregate)
            if auth is None or not profile.hmm_ready:
                if not profile.hmm_ready:
                    self.store.record_training(req.user, req.txn, req.day, req.amount)
                trace.annotation = WARMUP
                self._record(trace)
                return PaymentResponse(
                    req.txn, None, None, trace.aggregate, None, trace.trace_id, status=WARMUP
                )

            def escalate():
                return self.store.check_spending(req.user, req.txn, req.day, req.amount)

            verdict, details = decide(auth, self.config.thresholds, escalate, self.config.policy)
            trace.case = verdict.case
            trace.verdict = verdict.outcome
            trace.delta = _finite_or_none(verdict.hmm_delta)
            trace.alpha_prev = details.get("alpha_prev")
            trace.alpha_new = details.get("alpha_new")
            trace.annotation = details.get("annotation", "")
            self._record(trace)
            return PaymentResponse(
                req.txn,
                verdict.outcome.value,
                verdict.case.value,
                float(auth.aggregate),
                trace.delta,
                trace.trace_id,
            )

    def _record(self, trace: DecisionTrace) -> None:
        with self._trace_lock:
            self.traces[trace.trace_id] = trace
            if self.trace_path is not None:
                with open(self.trace_path, "a") as fh:
                    fh.write(json.dumps(trace.to_dict()) + "\n")

    # -- gatherer and inspection endpoints --

    def handle_event_ingest(self, batch: EventBatch | str) -> dict:
        if isinstance(batch, str):
            batch = parse_event_lines(batch)
        accepted = self.store.ingest_batch(batch)
        return {"transfer": batch.transfer, "accepted": accepted}

    def handle_profile_query(self, user: str) -> dict:
        with self.store.locked(user):
            p = self.store.get(user)
            return {
                "user": p.user,
                "warm": p.warm,
                "windows_warm": p.windows_warm,
                "hmm_ready": p.hmm_ready,
                "windows": {k: list(v) for k, v in p.windows.items()},
                "open_day": p.open_day,
                "open_counts": dict(p.open_counts),
                "completed_days": p.completed_days,
                "home_cell": p.home_cell,
                "quantizer": list(p.quantizer.centroids) if p.quantizer else None,
                "obs_window": list(p.obs_window),
                "training_amounts": len(p.train_amounts),
            }

    def handle_trace_query(self, trace_id: str) -> DecisionTrace:
        try:
            return self.traces[trace_id]
        except KeyError:
            raise NotFoundError(f"unknown trace {trace_id!r}") from None

    def replay_trace(self, trace: DecisionTrace) -> Optional[Outcome]:
        """Re-decide a traced payment against the profile snapshot it recorded."""
        if trace.snapshot is None:
            raise ValueError(f"trace {trace.trace_id} carries no profile snapshot")
        profile = snapshot_to_profile(trace.snapshot)
        cfg = self.config.with_overrides(t1=trace.thresholds[0], t2=trace.thresholds[1], policy=trace.policy)
        store = ProfileStore(None, cfg.score.window_len, cfg.hmm)
        store.profiles[profile.user] = profile
        replay = PaymentService(store, cfg, clock=lambda: trace.timestamp, keep_snapshots=False)
        replay.handle_payment(PaymentRequest.from_dict(trace.request))
        return replay.traces[trace.trace_id].verdict


# -- HTTP transport ------------------------------------------------------------


def _handler_for(service: PaymentService):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):
            log.debug("%s - %s", self.address_string(), fmt % args)

        def _send(self, status: int, body: dict) -> None:
            data = json.dumps(body).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def _body(self) -> str:
            n = int(self.headers.get("Content-Length") or 0)
            return self.rfile.read(n).decode()

        def do_POST(self):
            try:
                if self.path == "/payment":
                    try:
                        req = PaymentRequest.from_dict(json.loads(self._body()))
                    except json.JSONDecodeError as exc:
                        raise RequestError(f"invalid JSON: {exc.msg}") from None
                    resp = service.handle_payment(req)
                    status = HTTPStatus.OK if resp.status == "decided" else HTTPStatus.CONFLICT
                    self._send(status, resp.to_dict())
                elif self.path == "/events":
                    self._send(HTTPStatus.OK, service.handle_event_ingest(self._body()))
                else:
                    self._send(HTTPStatus.NOT_FOUND, {"error": f"no route {self.path}"})
            except NotFoundError as exc:
                self._send(HTTPStatus.NOT_FOUND, {"error": str(exc.args[0])})
            except (RequestError, BatchError) as exc:
                self._send(HTTPStatus.BAD_REQUEST, {"error": str(exc)})

        def do_GET(self):
            parts = [unquote(p) for p in self.path.strip("/").split("/")]
            try:
                if len(parts) == 2 and parts[0] == "profile":
                    self._send(HTTPStatus.OK, service.handle_profile_query(parts[1]))
                elif len(parts) == 2 and parts[0] == "trace":
                    self._send(HTTPStatus.OK, service.handle_trace_query(parts[1]).to_dict())
                else:
                    self._send(HTTPStatus.NOT_FOUND, {"error": f"no route {self.path}"})
            except NotFoundError as exc:
                self._send(HTTPStatus.NOT_FOUND, {"error": str(exc.args[0])})

    return Handler


def make_server(service: PaymentService, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    return ThreadingHTTPServer((host, port), _handler_for(service))
