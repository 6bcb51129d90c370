"""Data gatherer and per-user profile persistence.

Mobile activity arrives as batches of daily counts. The store merges them into
per-user behavior windows, keeps the spending HMM state next to them, and
records every state change in two append-only logs (mobile events and
profile operations) so a profile can be rebuilt by replay.

Files under a store root::

    events.jsonl          one mobile event per line
    profile_ops.jsonl     spending-model operations (training amounts, fits,
                          window commits) and home-cell assignments
    profiles/<user>.json  snapshot documents
"""

from __future__ import annotations

import itertools
import json
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional

from .behavior import KNOWN_KINDS, BehaviorWindow
from .hmm import AmountQuantizer, HmmParams, InvalidParamsError, deviation_check, fit_spending_model, quantize


class StoreError(Exception):
    pass


class NotFoundError(StoreError, KeyError):
    pass


class IntegrityError(StoreError):
    pass


class BatchError(StoreError, ValueError):
    pass


class TransferError(StoreError):
    pass


@dataclass(frozen=True)
class MobileEvent:
    user: str
    day: int
    kind: str
    count: int

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be non-negative")

    def to_line(self, transfer: str) -> dict:
        return {"user": self.user, "day": self.day, "kind": self.kind, "count": self.count, "transfer": transfer}


@dataclass(frozen=True)
class EventBatch:
    device: str
    events: tuple[MobileEvent, ...]
    transfer: str

    def to_ndjson(self) -> str:
        return "".join(json.dumps(e.to_line(self.transfer)) + "\n" for e in self.events)


def _check_int(value, name: str, lineno: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise BatchError(f"line {lineno}: {name} must be an integer, got {value!r}")
    return value


def parse_event_line(obj, lineno: int) -> tuple[MobileEvent, str]:
    if not isinstance(obj, dict):
        raise BatchError(f"line {lineno}: expected a JSON object")
    missing = {"user", "day", "kind", "count", "transfer"} - obj.keys()
    if missing:
        raise BatchError(f"line {lineno}: missing field(s) {sorted(missing)}")
    user, kind, transfer = obj["user"], obj["kind"], obj["transfer"]
    if not isinstance(user, str) or not user:
        raise BatchError(f"line {lineno}: user must be a non-empty string")
    if kind not in KNOWN_KINDS:
        raise BatchError(f"line {lineno}: unknown kind {kind!r}")
    if not isinstance(transfer, str) or not transfer:
        raise BatchError(f"line {lineno}: transfer must be a non-empty string")
    day = _check_int(obj["day"], "day", lineno)
    count = _check_int(obj["count"], "count", lineno)
    if count < 0:
        raise BatchError(f"line {lineno}: count must be non-negative")
    return MobileEvent(user, day, kind, count), transfer


def parse_event_lines(text: str, device: str = "gatherer") -> EventBatch:
    """Parse newline-delimited event JSON into one batch (single transfer id)."""
    events, transfers = [], set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BatchError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        event, transfer = parse_event_line(obj, lineno)
        transfers.add(transfer)
        events.append(event)
    if not events:
        raise BatchError("batch contains no events")
    if len(transfers) != 1:
        raise BatchError(f"batch mixes transfer ids {sorted(transfers)}")
    return EventBatch(device, tuple(events), transfers.pop())


class DeviceBuffer:
    """Events held on the phone until the gatherer has taken all of them."""

    def __init__(self, device: str):
        self.device = device
        self.pending: list[MobileEvent] = []
        self._seq = itertools.count(1)

    def record(self, event: MobileEvent) -> None:
        self.pending.append(event)

    def __len__(self):
        return len(self.pending)


def encrypt_for_transfer(batch: EventBatch) -> EventBatch:
    # Channel protection hook; identity until a real transport cipher is wired in.
    return batch


def transfer_and_erase(buffer: DeviceBuffer, send: Callable[[EventBatch], object]) -> EventBatch:
    """Hand the whole buffer to ``send``; erase it only if ``send`` returns.

    ``send`` acknowledges by returning normally. Any exception leaves the
    buffer untouched and is re-raised as :class:`TransferError`.
    """
    if not buffer.pending:
        raise TransferError(f"device {buffer.device}: nothing to transfer")
    batch = EventBatch(buffer.device, tuple(buffer.pending), f"{buffer.device}-{next(buffer._seq)}")
    try:
        send(encrypt_for_transfer(batch))
    except Exception as exc:
        raise TransferError(f"transfer {batch.transfer} not acknowledged: {exc}") from exc
    buffer.pending.clear()
    return batch


@dataclass(frozen=True)
class HmmConfig:
    n_states: int = 3
    window_len: int = 10
    theta: float = 0.5
    train_len: int = 50
    max_iters: int = 50
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.n_states < 1 or self.window_len < 1:
            raise ValueError("n_states and window_len must be >= 1")
        if self.train_len < max(2, self.window_len):
            raise ValueError("train_len must be >= max(2, window_len)")


@dataclass
class UserProfile:
    user: str
    window_len: int = 7
    windows: dict[str, list[int]] = field(default_factory=dict)
    first_day: Optional[int] = None
    open_day: Optional[int] = None
    open_counts: dict[str, int] = field(default_factory=dict)
    completed_days: int = 0
    transfers: list[str] = field(default_factory=list)
    home_cell: Optional[str] = None
    hmm: Optional[HmmParams] = None
    quantizer: Optional[AmountQuantizer] = None
    obs_window: list[int] = field(default_factory=list)
    train_amounts: list[float] = field(default_factory=list)

    @property
    def windows_warm(self) -> bool:
        return self.completed_days >= self.window_len

    @property
    def hmm_ready(self) -> bool:
        return self.hmm is not None

    @property
    def warm(self) -> bool:
        return self.windows_warm and self.hmm_ready

    # -- mobile side --

    def _close_day(self, counts: dict[str, int]) -> None:
        for kind, window in self.windows.items():
            window.append(counts.get(kind, 0))
            del window[: max(0, len(window) - self.window_len)]
        self.completed_days += 1

    def add_event(self, event: MobileEvent) -> None:
        if self.open_day is None:
            self.first_day = self.open_day = event.day
        elif event.day < self.open_day:
            raise BatchError(f"day {event.day} is already closed for user {self.user} (open day {self.open_day})")
        elif event.day > self.open_day:
            self._close_day(self.open_counts)
            for _ in range(event.day - self.open_day - 1):
                self._close_day({})
            self.open_day, self.open_counts = event.day, {}
        if event.kind not in self.windows:
            # parameters first seen late had zero activity on earlier days
            self.windows[event.kind] = [0] * min(self.completed_days, self.window_len)
        self.open_counts[event.kind] = self.open_counts.get(event.kind, 0) + event.count

    def view_at(self, day: int) -> tuple[dict[str, BehaviorWindow], dict[str, int], int]:
        """Windows of completed days before ``day``, the counts so far for
        ``day`` and the number of completed days, without mutating the profile."""
        if self.open_day is None:
            return {}, {}, 0
        if day < self.open_day:
            raise BatchError(f"day {day} precedes the latest recorded day {self.open_day}")
        windows = {k: list(v) for k, v in self.windows.items()}
        completed = self.completed_days
        if day == self.open_day:
            today = {k: self.open_counts.get(k, 0) for k in windows}
        else:
            for closing in [self.open_counts] + [{}] * (day - self.open_day - 1):
                for kind, window in windows.items():
                    window.append(closing.get(kind, 0))
                    del window[: max(0, len(window) - self.window_len)]
                completed += 1
            today = {k: 0 for k in windows}
        return {k: BehaviorWindow(k, v) for k, v in windows.items()}, today, completed

    # -- spending side --

    def add_training_amount(self, amount: float, config: HmmConfig) -> None:
        if self.hmm is not None:
            raise StoreError(f"user {self.user} already has a trained spending model")
        self.train_amounts.append(float(amount))
        if len(self.train_amounts) >= config.train_len:
            self.train(self.train_amounts, config)

    def train(self, amounts: list[float], config: HmmConfig) -> None:
        quantizer, params, symbols = fit_spending_model(
            amounts, config.n_states, config.max_iters, config.tol, config.seed
        )
        self.hmm = params
        self.quantizer = quantizer
        self.obs_window = list(symbols[-config.window_len:])
        self.train_amounts = [float(a) for a in amounts]


def _check_stochastic_row(row, label: str) -> None:
    if abs(sum(row) - 1) > 1e-9:
        raise IntegrityError(f"snapshot field {label} sums to {sum(row)!r}, not 1")


def profile_to_snapshot(p: UserProfile) -> dict:
    return {
        "user": p.user,
        "windows": {k: list(v) for k, v in p.windows.items()},
        "hmm": p.hmm.to_dict() if p.hmm is not None else None,
        "quantizer": list(p.quantizer.centroids) if p.quantizer is not None else None,
        "obs_window": list(p.obs_window),
        "warm": p.warm,
        "window_len": p.window_len,
        "first_day": p.first_day,
        "open_day": p.open_day,
        "open_counts": dict(p.open_counts),
        "completed_days": p.completed_days,
        "transfers": list(p.transfers),
        "home_cell": p.home_cell,
        "train_amounts": list(p.train_amounts),
    }


def snapshot_to_profile(s: dict) -> UserProfile:
    try:
        hmm = None
        if s.get("hmm") is not None:
            h = s["hmm"]
            for name in ("A", "B"):
                for i, row in enumerate(h[name]):
                    _check_stochastic_row(row, f"hmm.{name}[{i}]")
            _check_stochastic_row(h["pi"], "hmm.pi")
            try:
                hmm = HmmParams.from_dict(h)
            except InvalidParamsError as exc:
                raise IntegrityError(f"snapshot field hmm: {exc}") from None
        quantizer = None
        if s.get("quantizer") is not None:
            try:
                quantizer = AmountQuantizer(tuple(s["quantizer"]))
            except ValueError as exc:
                raise IntegrityError(f"snapshot field quantizer: {exc}") from None
        windows = {k: [int(x) for x in v] for k, v in s["windows"].items()}
        for k, v in windows.items():
            if any(x < 0 for x in v):
                raise IntegrityError(f"snapshot field windows.{k} has negative counts")
        profile = UserProfile(
            user=s["user"],
            window_len=int(s.get("window_len", 7)),
            windows=windows,
            first_day=s.get("first_day"),
            open_day=s.get("open_day"),
            open_counts={k: int(v) for k, v in s.get("open_counts", {}).items()},
            completed_days=int(s.get("completed_days", 0)),
            transfers=list(s.get("transfers", [])),
            home_cell=s.get("home_cell"),
            hmm=hmm,
            quantizer=quantizer,
            obs_window=[int(x) for x in s["obs_window"]],
            train_amounts=[float(x) for x in s.get("train_amounts", [])],
        )
    except KeyError as exc:
        raise IntegrityError(f"snapshot missing field {exc.args[0]!r}") from None
    if any(not 0 <= x <= 2 for x in profile.obs_window):
        raise IntegrityError("snapshot field obs_window has symbols outside 0..2")
    if bool(s.get("warm", profile.warm)) != profile.warm:
        raise IntegrityError("snapshot field warm disagrees with the stored state")
    return profile


class ProfileStore:
    """Per-user profiles with serialized writes and replayable logs.

    With ``root=None`` everything lives in memory (logs included).
    """

    def __init__(
        self,
        root: Optional[Path | str] = None,
        window_len: int = 7,
        hmm_config: HmmConfig = HmmConfig(),
    ):
        self.root = Path(root) if root is not None else None
        self.window_len = window_len
        self.hmm_config = hmm_config
        self.profiles: dict[str, UserProfile] = {}
        self.event_log: list[dict] = []
        self.ops_log: list[dict] = []
        self._locks: dict[str, threading.RLock] = {}
        self._meta_lock = threading.Lock()
        if self.root is not None:
            (self.root / "profiles").mkdir(parents=True, exist_ok=True)

    @contextmanager
    def locked(self, user: str) -> Iterator[None]:
        with self._meta_lock:
            lock = self._locks.setdefault(user, threading.RLock())
        with lock:
            yield

    _LOG_FILES = {"event_log": "events.jsonl", "ops_log": "profile_ops.jsonl"}

    def _append(self, name: str, records: list[dict]) -> None:
        getattr(self, name).extend(records)
        if self.root is not None and records:
            with open(self.root / self._LOG_FILES[name], "a") as fh:
                for r in records:
                    fh.write(json.dumps(r) + "\n")

    def get(self, user: str) -> UserProfile:
        try:
            return self.profiles[user]
        except KeyError:
            raise NotFoundError(f"unknown user {user!r}") from None

    def ensure(self, user: str) -> UserProfile:
        with self._meta_lock:
            if user not in self.profiles:
                self.profiles[user] = UserProfile(user, window_len=self.window_len)
            return self.profiles[user]

    # -- ingest --

    def ingest_batch(self, batch: EventBatch) -> int:
        """Merge a batch; returns the number of events applied (0 for a replay).

        The batch is validated against every affected profile before anything
        is applied, so a bad event rejects the whole batch.
        """
        for i, (a, b) in enumerate(zip(batch.events, batch.events[1:]), start=2):
            if b.day < a.day:
                raise BatchError(f"line {i}: events are not day-ordered")
        by_user: dict[str, list[MobileEvent]] = {}
        for e in batch.events:
            by_user.setdefault(e.user, []).append(e)
        with self._meta_lock:
            for u in by_user:
                self._locks.setdefault(u, threading.RLock())
            locks = [self._locks[u] for u in sorted(by_user)]
        for lock in locks:
            lock.acquire()
        try:
            existing = {u: self.profiles.get(u) for u in by_user}
            if any(p is not None and batch.transfer in p.transfers for p in existing.values()):
                return 0
            for lineno, e in enumerate(batch.events, start=1):
                p = existing[e.user]
                if p is not None and p.open_day is not None and e.day < p.open_day:
                    raise BatchError(f"line {lineno}: day {e.day} already closed for user {e.user}")
            for u, events in by_user.items():
                p = self.ensure(u)
                for e in events:
                    p.add_event(e)
                p.transfers.append(batch.transfer)
            self._append("event_log", [e.to_line(batch.transfer) for e in batch.events])
            return len(batch.events)
        finally:
            for lock in reversed(locks):
                lock.release()

    # -- spending --

    def record_training(self, user: str, txn: str, day: int, amount: float) -> None:
        with self.locked(user):
            self.get(user).add_training_amount(amount, self.hmm_config)
            self._append("ops_log", [{"op": "train", "user": user, "txn": txn, "day": day, "amount": amount}])

    def check_spending(self, user: str, txn: str, day: int, amount: float):
        """HMM deviation test; a cleared transaction is committed to the window."""
        with self.locked(user):
            p = self.get(user)
            if p.hmm is None or p.quantizer is None:
                raise StoreError(f"user {user!r} has no trained spending model")
            symbol = int(quantize(amount, p.quantizer))
            verdict = deviation_check(p.hmm, p.obs_window, symbol, self.hmm_config.theta)
            if not verdict.is_fraud:
                p.obs_window = list(verdict.updated_window)
                self._append(
                    "ops_log",
                    [{"op": "commit", "user": user, "txn": txn, "day": day, "amount": amount, "symbol": symbol}],
                )
            return verdict

    def train_user(self, user: str, amounts: list[float]) -> UserProfile:
        with self.locked(user):
            p = self.ensure(user)
            p.train(list(amounts), self.hmm_config)
            self._append("ops_log", [{"op": "fit", "user": user, "amounts": [float(a) for a in amounts]}])
            return p

    def set_home_cell(self, user: str, cell: str) -> None:
        with self.locked(user):
            self.ensure(user).home_cell = cell
            self._append("ops_log", [{"op": "home", "user": user, "cell": cell}])

    # -- persistence --

    def save_profile(self, profile: UserProfile) -> dict:
        snap = profile_to_snapshot(profile)
        self.profiles[profile.user] = profile
        if self.root is not None:
            path = self.root / "profiles" / f"{profile.user}.json"
            path.write_text(json.dumps(snap, indent=1))
        return snap

    def load_profile(self, user: str) -> UserProfile:
        if self.root is not None:
            path = self.root / "profiles" / f"{user}.json"
            if path.exists():
                try:
                    snap = json.loads(path.read_text())
                except json.JSONDecodeError as exc:
                    raise IntegrityError(f"snapshot for {user!r} is not valid JSON: {exc.msg}") from None
                profile = snapshot_to_profile(snap)
                self.profiles[user] = profile
                return profile
        return self.get(user)

    def apply_op(self, rec: dict) -> None:
        p = self.ensure(rec["user"])
        op = rec["op"]
        if op == "train":
            p.add_training_amount(rec["amount"], self.hmm_config)
        elif op == "fit":
            p.train(list(rec["amounts"]), self.hmm_config)
        elif op == "commit":
            p.obs_window = p.obs_window[1:] + [int(rec["symbol"])]
        elif op == "home":
            p.home_cell = rec["cell"]
        else:
            raise IntegrityError(f"unknown profile op {op!r}")
        self.ops_log.append(rec)

    @classmethod
    def rebuild(
        cls,
        event_lines: Iterable[dict],
        op_lines: Iterable[dict] = (),
        window_len: int = 7,
        hmm_config: HmmConfig = HmmConfig(),
    ) -> "ProfileStore":
        """Replay logs into a fresh in-memory store.

        Mobile events and profile ops touch disjoint profile state, so the two
        logs are replayed one after the other.
        """
        store = cls(None, window_len, hmm_config)
        pending: list[MobileEvent] = []
        transfer = None
        for lineno, obj in enumerate(event_lines, start=1):
            event, t = parse_event_line(obj, lineno)
            if t != transfer and pending:
                store.ingest_batch(EventBatch("replay", tuple(pending), transfer))
                pending = []
            transfer = t
            pending.append(event)
        if pending:
            store.ingest_batch(EventBatch("replay", tuple(pending), transfer))
        for rec in op_lines:
            store.apply_op(rec)
        return store

    @classmethod
    def open(cls, root: Path | str, window_len: int = 7, hmm_config: HmmConfig = HmmConfig()) -> "ProfileStore":
        """Open a store directory, rebuilding state from its logs.

        Users that exist only as snapshots are loaded from their snapshot.
        """
        root = Path(root)

        def lines(name):
            path = root / name
            if not path.exists():
                return []
            return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]

        rebuilt = cls.rebuild(lines("events.jsonl"), lines("profile_ops.jsonl"), window_len, hmm_config)
        store = cls(root, window_len, hmm_config)
        store.profiles = rebuilt.profiles
        store.event_log = rebuilt.event_log
        store.ops_log = rebuilt.ops_log
        for snap_path in sorted((root / "profiles").glob("*.json")):
            if snap_path.stem not in store.profiles:
                store.load_profile(snap_path.stem)
        return store
