import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridfraud.store import (
    BatchError,
    DeviceBuffer,
    EventBatch,
    HmmConfig,
    IntegrityError,
    MobileEvent,
    NotFoundError,
    ProfileStore,
    StoreError,
    TransferError,
    parse_event_lines,
    profile_to_snapshot,
    snapshot_to_profile,
    transfer_and_erase,
)

CALLS = (5, 10, 15, 3, 3, 4, 5)
SMS = (10, 15, 4, 2, 3, 2, 3)
SMALL_HMM = HmmConfig(window_len=5, train_len=20, max_iters=20)


def week(user="alice", start=0):
    events = []
    for d in range(7):
        events += [MobileEvent(user, start + d, "calls", CALLS[d]), MobileEvent(user, start + d, "sms", SMS[d])]
    return events


def ingest(store, events, transfer):
    return store.ingest_batch(EventBatch("phone", tuple(events), transfer))


def training_amounts(n=20, seed=0):
    rng = np.random.default_rng(seed)
    return [float(x) for x in rng.choice([20.0, 22.0, 150.0, 800.0], size=n, p=[0.5, 0.3, 0.15, 0.05])]


def test_week_record_windows_after_close():
    store = ProfileStore()
    assert ingest(store, week(), "t1") == 14
    p = store.get("alice")
    # the last recorded day stays open until a later day arrives
    assert p.completed_days == 6
    windows, today, completed = p.view_at(7)
    assert completed == 7
    assert windows["calls"].values == CALLS and windows["sms"].values == SMS
    assert today == {"calls": 0, "sms": 0}
    # pure view
    assert p.completed_days == 6 and p.open_day == 6


def test_gap_days_are_zero_filled():
    store = ProfileStore(window_len=3)
    ingest(store, [MobileEvent("u", 0, "calls", 4)], "a")
    ingest(store, [MobileEvent("u", 3, "calls", 2)], "b")
    p = store.get("u")
    assert p.windows["calls"] == [4, 0, 0]
    assert p.open_counts == {"calls": 2}


def test_replayed_transfer_is_idempotent():
    store = ProfileStore()
    ingest(store, week(), "t1")
    before = profile_to_snapshot(store.get("alice"))
    assert ingest(store, week(), "t1") == 0
    assert profile_to_snapshot(store.get("alice")) == before
    assert len(store.event_log) == 14


def test_same_day_batches_add_up():
    store = ProfileStore()
    ingest(store, [MobileEvent("u", 0, "calls", 2)], "a")
    ingest(store, [MobileEvent("u", 0, "calls", 3), MobileEvent("u", 0, "sms", 1)], "b")
    assert store.get("u").open_counts == {"calls": 5, "sms": 1}


def test_late_events_reject_whole_batch():
    store = ProfileStore()
    ingest(store, week(), "t1")
    bad = [MobileEvent("bob", 0, "calls", 1), MobileEvent("alice", 2, "calls", 1)]
    with pytest.raises(BatchError, match="line 2"):
        ingest(store, bad, "t2")
    with pytest.raises(NotFoundError):
        store.get("bob")
    with pytest.raises(BatchError, match="day-ordered"):
        ingest(store, [MobileEvent("c", 3, "calls", 1), MobileEvent("c", 1, "calls", 1)], "t3")


def test_parse_event_lines():
    text = EventBatch("phone", tuple(week()), "t9").to_ndjson()
    batch = parse_event_lines(text)
    assert batch.transfer == "t9" and len(batch.events) == 14
    lines = text.splitlines()
    lines[5] = lines[5].replace('"sms"', '"fax"')
    with pytest.raises(BatchError, match="line 6"):
        parse_event_lines("\n".join(lines))
    with pytest.raises(BatchError, match="line 1"):
        parse_event_lines('{"user": "u", "day": 0}')
    with pytest.raises(BatchError, match="invalid JSON"):
        parse_event_lines("{nope")
    mixed = json.dumps(MobileEvent("u", 0, "calls", 1).to_line("a")) + "\n" + json.dumps(MobileEvent("u", 0, "sms", 1).to_line("b"))
    with pytest.raises(BatchError, match="mixes"):
        parse_event_lines(mixed)
    with pytest.raises(BatchError, match="count"):
        parse_event_lines('{"user": "u", "day": 0, "kind": "calls", "count": -1, "transfer": "x"}')


def test_transfer_and_erase():
    buf = DeviceBuffer("ph")
    for e in week():
        buf.record(e)

    def broken(batch):
        raise ConnectionError("no ack")

    with pytest.raises(TransferError):
        transfer_and_erase(buf, broken)
    assert len(buf) == 14
    store = ProfileStore()
    batch = transfer_and_erase(buf, store.ingest_batch)
    assert len(buf) == 0 and len(batch.events) == 14
    buf.record(MobileEvent("alice", 7, "calls", 1))
    batch2 = transfer_and_erase(buf, store.ingest_batch)
    assert batch2.transfer != batch.transfer
    with pytest.raises(TransferError):
        transfer_and_erase(buf, store.ingest_batch)


def test_training_and_spending_commit():
    store = ProfileStore(hmm_config=SMALL_HMM)
    ingest(store, week(), "t1")
    amounts = training_amounts()
    for i, a in enumerate(amounts[:-1]):
        store.record_training("alice", f"w{i}", 0, a)
    assert not store.get("alice").hmm_ready
    with pytest.raises(StoreError):
        store.check_spending("alice", "x", 7, 20.0)
    store.record_training("alice", "w-last", 0, amounts[-1])
    p = store.get("alice")
    assert p.hmm_ready and len(p.obs_window) == SMALL_HMM.window_len
    v = store.check_spending("alice", "p1", 7, 20.0)
    if not v.is_fraud:
        assert p.obs_window == list(v.updated_window)
        assert store.ops_log[-1]["op"] == "commit"


def test_snapshot_round_trip_and_integrity():
    store = ProfileStore(hmm_config=SMALL_HMM)
    ingest(store, week(), "t1")
    store.set_home_cell("alice", "cell-3")
    p = store.train_user("alice", training_amounts())
    snap = profile_to_snapshot(p)
    again = snapshot_to_profile(json.loads(json.dumps(snap)))
    assert profile_to_snapshot(again) == snap
    assert again.hmm == p.hmm

    broken = json.loads(json.dumps(snap))
    broken["hmm"]["B"][0] = [0.5, 0.3, 0.1]
    with pytest.raises(IntegrityError, match=r"hmm\.B\[0\]"):
        snapshot_to_profile(broken)
    broken = json.loads(json.dumps(snap))
    del broken["obs_window"]
    with pytest.raises(IntegrityError, match="obs_window"):
        snapshot_to_profile(broken)
    broken = json.loads(json.dumps(snap))
    broken["warm"] = not broken["warm"]
    with pytest.raises(IntegrityError, match="warm"):
        snapshot_to_profile(broken)


def test_unknown_user():
    with pytest.raises(NotFoundError):
        ProfileStore().get("nobody")
    with pytest.raises(KeyError):
        ProfileStore().get("nobody")


def test_disk_store_reopens_to_same_state(tmp_path):
    store = ProfileStore(tmp_path, hmm_config=SMALL_HMM)
    ingest(store, week(), "t1")
    store.set_home_cell("alice", "cell-1")
    for i, a in enumerate(training_amounts()):
        store.record_training("alice", f"w{i}", 0, a)
    store.check_spending("alice", "p1", 7, 21.0)
    store.save_profile(store.get("alice"))
    assert (tmp_path / "events.jsonl").exists() and (tmp_path / "profile_ops.jsonl").exists()
    reopened = ProfileStore.open(tmp_path, hmm_config=SMALL_HMM)
    assert profile_to_snapshot(reopened.get("alice")) == profile_to_snapshot(store.get("alice"))
    (tmp_path / "profiles" / "ghost.json").write_text("{broken")
    with pytest.raises(IntegrityError):
        ProfileStore.open(tmp_path, hmm_config=SMALL_HMM)


day_counts = st.lists(
    st.tuples(st.integers(0, 3), st.sampled_from(["calls", "sms", "web"]), st.integers(0, 20)),
    min_size=1,
    max_size=40,
)


@settings(max_examples=50, deadline=None)
@given(day_counts, st.integers(1, 6))
def test_rebuild_equals_incremental(raw, batch_size):
    # raw entries are day increments, so events arrive day-ordered
    day, events = 0, []
    for inc, kind, count in raw:
        day += inc
        events.append(MobileEvent("u", day, kind, count))
    store = ProfileStore(window_len=4)
    for i in range(0, len(events), batch_size):
        ingest(store, events[i : i + batch_size], f"t{i}")
    rebuilt = ProfileStore.rebuild(store.event_log, store.ops_log, window_len=4)
    assert profile_to_snapshot(rebuilt.get("u")) == profile_to_snapshot(store.get("u"))
