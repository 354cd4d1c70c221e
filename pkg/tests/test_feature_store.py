import itertools
import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smartroute.core import Outcome, PaymentRequest, Status, Terminal
from smartroute.errors import (
    ConfigError,
    SchemaMismatchError,
    SnapshotError,
    UnknownGatewayError,
    UnknownTerminalError,
)
from smartroute.feature_store import (
    EVENT,
    TIME,
    DecayedCounter,
    EventWindow,
    FeatureStore,
    FeatureTemplate,
    Schema,
    counter_read,
    counter_update,
    decay_value,
    default_schema,
    event_window_read,
    event_window_update,
)

# Payments 1..11 of the worked event-window example; values are read after
# each payment's own outcome has been folded in. Checked by hand.
TABLE_OUTCOMES = (1, 0, 1, 0, 1, 0, 1, 1, 1, 0, 1)
TABLE_5E = (1.000, 0.500, 0.667, 0.500, 0.600, 0.400, 0.600, 0.600, 0.800, 0.600, 0.800)
TABLE_10E = (1.000, 0.500, 0.667, 0.500, 0.600, 0.500, 0.571, 0.625, 0.667, 0.600, 0.600)


def req(pid="p", ts=100, **kw):
    base = dict(merchant_id="m1", method="card", issuer_bank="bankA", network="visa", amount=500)
    base.update(kw)
    return PaymentRequest(pid, ts, **base)


T1, T2, T3 = Terminal("t1", "g1"), Terminal("t2", "g1"), Terminal("t3", "g2")


def fresh_store(schema=None, alpha=1.0):
    return FeatureStore(schema or default_schema(), alpha, [T1, T2, T3])


def feed(store, terminal, status, ts, request=None):
    request = request or req(ts=ts)
    store.apply_feedback(request, terminal, Outcome(request.payment_id, terminal.terminal_id,
                                                    Status(status), ts), ts)


# -- decay ---------------------------------------------------------------------


@pytest.mark.parametrize("v,dt,hl,expected", [(1.0, 30, 30, 0.5), (0.8, 60, 30, 0.2), (0.37, 0, 12, 0.37)])
def test_decay_value_examples(v, dt, hl, expected):
    assert decay_value(v, dt, hl) == pytest.approx(expected, abs=1e-15)


def test_decay_value_rejects_bad_half_life():
    with pytest.raises(ConfigError):
        decay_value(1.0, 1.0, 0)


@given(st.floats(0, 1e6), st.floats(1e-3, 1e5), st.floats(0, 1e5), st.floats(0, 1e5))
def test_decay_composes(v, hl, a, b):
    assert decay_value(decay_value(v, a, hl), b, hl) == pytest.approx(
        decay_value(v, a + b, hl), rel=1e-9, abs=1e-300)


# -- decayed counter ------------------------------------------------------------


def test_counter_update_examples():
    c = DecayedCounter(30.0, 1.0, 1.0, 0.0)
    d = counter_update(c, 0, 30.0)
    assert (d.successes, d.total) == pytest.approx((0.5, 1.5))
    assert counter_read(d, 30.0, 1.0) == pytest.approx(0.6)

    first = counter_update(DecayedCounter(30.0), 1, 12345)
    assert (first.successes, first.total, first.last_update) == (1.0, 1.0, 12345)

    same_time = counter_update(c, 1, 0.0)
    assert (same_time.successes, same_time.total) == (2.0, 2.0)


def test_counter_read_prior_and_all_success():
    assert counter_read(DecayedCounter(5.0), 1e9) == 1.0
    for k in (1, 3, 17):
        c = DecayedCounter(5.0)
        for i in range(k):
            c = counter_update(c, 1, float(i))
        assert counter_read(c, float(k), 1.0) == pytest.approx(1.0)


def test_counter_clock_regression_clamped():
    c = counter_update(DecayedCounter(10.0), 1, 100.0)
    late = counter_update(c, 0, 50.0)
    assert late.last_update == 100.0
    assert (late.successes, late.total) == (1.0, 2.0)


@given(st.lists(st.tuples(st.integers(0, 1), st.floats(0, 50)), min_size=1, max_size=30),
       st.floats(0.5, 100))
def test_counter_half_life_law(events, hl):
    c, ts = DecayedCounter(hl), 0.0
    for outcome, gap in events:
        ts += gap
        c = counter_update(c, outcome, ts)
    # S and N both halve after one half-life of silence
    s_later = decay_value(c.successes, hl, hl)
    assert s_later == pytest.approx(c.successes / 2)
    # with alpha = 0 the ratio is unchanged, with alpha > 0 it drifts up toward 1
    if c.total > 0 and c.successes > 0:
        assert counter_read(c, ts + hl, 0.0) == pytest.approx(counter_read(c, ts, 0.0))
    r0, r1, r2 = (counter_read(c, ts + k * hl, 1.0) for k in (0, 1, 5))
    assert r0 <= r1 + 1e-12 <= r2 + 2e-12 <= 1.0 + 2e-12
    assert 0.0 <= r0 <= 1.0


@given(st.lists(st.integers(0, 1), min_size=1, max_size=12), st.randoms())
def test_equal_timestamp_feedback_commutes(outcomes, rnd):
    def run(order):
        c = counter_update(DecayedCounter(7.0), 1, 0.0)
        for o in order:
            c = counter_update(c, o, 3.0)
        return c.successes, c.total

    shuffled = list(outcomes)
    rnd.shuffle(shuffled)
    assert run(outcomes) == pytest.approx(run(shuffled), rel=1e-12)


# -- event windows ----------------------------------------------------------------


def test_event_window_examples():
    w = EventWindow(5)
    for o in (1, 0, 1, 0, 1, 0):
        w = event_window_update(w, o)
    assert w.buffer == (0, 1, 0, 1, 0)
    assert event_window_read(w) == pytest.approx(0.4)
    assert event_window_update(EventWindow(3), 1).buffer == (1,)
    w1 = event_window_update(event_window_update(EventWindow(1), 0), 1)
    assert w1.buffer == (1,) and w1.count == 2
    assert event_window_read(EventWindow(10)) == 1.0


def test_event_window_table():
    w5, w10 = EventWindow(5), EventWindow(10)
    for i, o in enumerate(TABLE_OUTCOMES):
        w5, w10 = event_window_update(w5, o), event_window_update(w10, o)
        assert round(event_window_read(w5), 3) == TABLE_5E[i]
        assert round(event_window_read(w10), 3) == TABLE_10E[i]


@pytest.mark.parametrize("e", [1, 5, 10])
def test_event_window_matches_brute_force(e):
    rng = np.random.default_rng(e)
    # exhaustive over short histories, seeded samples for longer ones
    histories = [h for n in range(0, 9) for h in itertools.product((0, 1), repeat=n)]
    histories += [tuple(rng.integers(0, 2, n)) for n in range(9, 51) for _ in range(20)]
    for hist in histories:
        w = EventWindow(e)
        for o in hist:
            w = event_window_update(w, o)
        kept = hist[-e:]
        expected = 1.0 if not kept else sum(kept) / len(kept)
        assert event_window_read(w) == expected
        assert w.count == len(hist) and len(w.buffer) <= e


# -- templates ----------------------------------------------------------------------


def test_template_names_round_trip():
    for tpl in default_schema():
        assert FeatureTemplate.parse(tpl.name) == tpl
    assert FeatureTemplate(("terminal_id", "method"), TIME, 5).name == "terminal_id+method@5s"
    assert FeatureTemplate((), EVENT, 10).name == "system@10e"
    assert FeatureTemplate((), EVENT, 10).level == "system"
    assert FeatureTemplate(("gateway_id",), TIME, 30).level == "gateway"


@pytest.mark.parametrize("attrs,kind,param", [
    (("colour",), TIME, 5), (("method",), TIME, 5), (("terminal_id",), TIME, 0),
    (("terminal_id",), EVENT, 0), (("terminal_id",), "hybrid", 3),
    (("terminal_id", "terminal_id"), TIME, 5),
])
def test_template_validation(attrs, kind, param):
    with pytest.raises(ConfigError):
        FeatureTemplate(attrs, kind, param)


def test_default_schema_shape():
    s = default_schema()
    assert len(s) == 36
    assert len(set(s.names)) == 36
    assert s.schema_id == Schema.from_manifest(s.to_manifest()).schema_id
    with pytest.raises(SchemaMismatchError):
        Schema.from_manifest({"templates": list(s.names), "schema_id": "0" * 16})
    assert all(set(t.attributes) <= {"gateway_id"} for t in s.gateway_only())
    assert len(s.gateway_only()) == 12


# -- store reads and feedback ---------------------------------------------------------


def test_fresh_store_reads_one():
    v = fresh_store().feature_vector(req(), T1, 100)
    assert v.values == (1.0,) * 36


def test_unknown_terminal_and_gateway():
    store = fresh_store()
    with pytest.raises(UnknownTerminalError):
        store.feature_vector(req(), Terminal("zz", "g1"), 100)
    with pytest.raises(UnknownGatewayError):
        store.gateway_vector("g9", 100, default_schema().gateway_only())


def test_failure_scopes():
    schema = default_schema()
    store = fresh_store(schema)
    feed(store, T1, "gateway_failure", 100)
    v1 = dict(zip(schema.names, store.feature_vector(req(), T1, 100).values))
    v2 = dict(zip(schema.names, store.feature_vector(req(), T2, 100).values))
    v3 = dict(zip(schema.names, store.feature_vector(req(), T3, 100).values))
    for name in schema.names:
        level = FeatureTemplate.parse(name).level
        if level == "terminal":
            assert v1[name] < 1.0 and v2[name] == 1.0 and v3[name] == 1.0
        elif level == "gateway":
            # both g1 terminals see the drop, the other gateway does not
            assert v1[name] == v2[name] < 1.0 and v3[name] == 1.0
        else:
            assert v1[name] == v3[name] < 1.0


def test_feedback_matches_primitive_replay():
    schema = default_schema()
    store = fresh_store(schema)
    outcomes = [(1, 100), (0, 104), (0, 104), (1, 130), (0, 131)]
    for i, (o, ts) in enumerate(outcomes):
        feed(store, T1, "success" if o else "gateway_failure", ts, req(f"p{i}", ts))
    ts = 140
    got = dict(zip(schema.names, store.feature_vector(req(ts=ts), T1, ts).values))
    for tpl in schema:
        state = tpl.new_state()
        for o, t in outcomes:
            state = counter_update(state, o, t) if tpl.kind == TIME else event_window_update(state, o)
        want = counter_read(state, ts, 1.0) if tpl.kind == TIME else event_window_read(state)
        assert got[tpl.name] == want, tpl.name


def test_customer_failure_leaves_store_unchanged():
    store = fresh_store()
    feed(store, T1, "success", 100)
    before = store.snapshot()
    request = req()
    changed = store.apply_feedback(request, T1, Outcome("p", "t1", Status.CUSTOMER_FAILURE, 101))
    assert not changed
    assert store.snapshot() == before


def test_success_history_softens_a_failure():
    schema = default_schema()
    good, bad = fresh_store(schema), fresh_store(schema)
    for i in range(9):
        feed(good, T1, "success", 100 + i)
        feed(bad, T1, "gateway_failure", 100 + i)
    feed(good, T1, "gateway_failure", 109)
    feed(bad, T1, "gateway_failure", 109)
    vg = good.feature_vector(req(ts=110), T1, 110).as_array()
    vb = bad.feature_vector(req(ts=110), T1, 110).as_array()
    assert (vg > vb).all()
    assert (vg < 1.0).any()


def test_success_moves_values_up():
    store = fresh_store()
    feed(store, T1, "gateway_failure", 100)
    before = store.feature_vector(req(ts=101), T1, 101).as_array()
    feed(store, T1, "success", 101)
    after = store.feature_vector(req(ts=101), T1, 101).as_array()
    assert (after >= before).all() and (after > before).any()


def test_feature_vector_is_read_only():
    store = fresh_store()
    feed(store, T1, "gateway_failure", 100)
    snap = store.snapshot()
    store.feature_vector(req(), T1, 500)
    store.gateway_vector("g1", 500, default_schema().gateway_only())
    assert store.snapshot() == snap


def test_subset_schema_reads():
    schema = default_schema()
    store = fresh_store(schema)
    feed(store, T1, "gateway_failure", 100)
    sub = schema.subset(["gateway_id@10e", "terminal_id@5s"])
    full = dict(zip(schema.names, store.feature_vector(req(), T1, 100).values))
    v = store.feature_vector(req(), T1, 100, sub)
    assert v.values == (full["gateway_id@10e"], full["terminal_id@5s"])
    assert v.schema_id == sub.schema_id
    foreign = Schema([FeatureTemplate(("merchant_id", "terminal_id"), TIME, 5)])
    with pytest.raises(SchemaMismatchError):
        store.feature_vector(req(), T1, 100, foreign)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([T1, T2, T3]),
                          st.sampled_from(["success", "gateway_failure", "customer_failure"]),
                          st.integers(0, 400)), max_size=40))
def test_reads_stay_in_unit_interval(events):
    store = fresh_store()
    for i, (t, status, dt) in enumerate(events):
        feed(store, t, status, 1000 + dt, req(f"p{i}", 1000 + dt))
    for t in (T1, T2, T3):
        v = store.feature_vector(req(ts=2000), t, 2000).as_array()
        assert ((0.0 <= v) & (v <= 1.0)).all()


def test_concurrent_feedback_same_as_serial():
    schema = default_schema()
    store = fresh_store(schema)
    # one thread per terminal, equal timestamps so counter updates commute
    events = {t: [("success" if (i * 7 + k) % 3 else "gateway_failure") for i in range(200)]
              for k, t in enumerate((T1, T2, T3))}

    def worker(target, t):
        for i, status in enumerate(events[t]):
            feed(target, t, status, 100, req(f"{t.terminal_id}-{i}", 100))

    threads = [threading.Thread(target=worker, args=(store, t)) for t in events]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    serial = fresh_store(schema)
    for t in events:
        worker(serial, t)
    for tpl in schema:
        for key in serial._state[schema.index(tpl.name)]:
            a, b = store.state(tpl.name, key), serial.state(tpl.name, key)
            if tpl.kind == TIME:
                assert (a.successes, a.total) == pytest.approx((b.successes, b.total), rel=1e-12)
            else:
                # shared windows keep the last e outcomes, which depend on interleaving;
                # the number of folded outcomes does not
                assert a.count == b.count
                if tpl.level == "terminal":
                    assert a.buffer == b.buffer


# -- snapshots ----------------------------------------------------------------------------


def random_store(n, seed=0, schema=None):
    rng = np.random.default_rng(seed)
    store = fresh_store(schema)
    terms = [T1, T2, T3]
    for i in range(n):
        ts = 1000 + int(rng.integers(0, 600))
        r = req(f"p{i}", ts, method=str(rng.choice(["card", "upi", "wallet"])),
                issuer_bank=str(rng.choice(["bankA", "bankB"])))
        status = str(rng.choice(["success", "gateway_failure", "customer_failure"]))
        feed(store, terms[int(rng.integers(0, 3))], status, ts, r)
    return store


def test_empty_snapshot_round_trip():
    store = fresh_store()
    back = FeatureStore.restore(store.snapshot())
    assert back.n_keys() == 0
    assert back.snapshot() == store.snapshot()
    assert back.terminals == store.terminals


def test_snapshot_round_trip_is_exact():
    store = random_store(1000)
    data = store.snapshot()
    back = FeatureStore.restore(data, default_schema())
    assert back.snapshot() == data
    for i, t in enumerate([T1, T2, T3] * 5):
        r = req(f"q{i}", 1500 + i, method=["card", "upi"][i % 2])
        assert back.feature_vector(r, t, r.timestamp).values == \
            store.feature_vector(r, t, r.timestamp).values


def test_snapshot_is_deterministic_and_has_magic():
    a, b = random_store(300, seed=5), random_store(300, seed=5)
    assert a.snapshot() == b.snapshot()
    assert a.snapshot().startswith(b"RFSTORE1")


def test_snapshot_rejects_bad_payloads():
    data = random_store(50).snapshot()
    for bad in (data[:-1], data[:20], b"XXXXXXXX" + data[8:], data[:30] + b"\x00" + data[31:]):
        with pytest.raises(SnapshotError):
            FeatureStore.restore(bad)
    other = Schema([FeatureTemplate(("terminal_id",), TIME, 5)])
    with pytest.raises(SnapshotError):
        FeatureStore.restore(data, other)


def test_failed_load_leaves_store_untouched():
    store = random_store(100)
    before = store.snapshot()
    with pytest.raises(SnapshotError):
        store.load(before[:-3])
    assert store.snapshot() == before


def test_nan_free_counter_fields_after_restore():
    store = random_store(200)
    back = FeatureStore.restore(store.snapshot())
    for table in back._state:
        for state in table.values():
            if isinstance(state, DecayedCounter):
                assert not math.isnan(state.successes) and state.last_update is not None


def test_long_idle_key_decays_to_prior():
    c = counter_update(DecayedCounter(5.0), 0, 0.0)
    # ten thousand half-lives of silence: weights underflow, read returns the prior
    assert decay_value(1.0, 50_000, 5.0) == 0.0
    assert counter_read(c, 50_000.0, 1.0) == 1.0
