import json

import numpy as np
import pytest

from smartroute.core import Method, PaymentRequest, Status, Terminal
from smartroute.errors import ConfigError
from smartroute.simulator import (
    ARMS,
    DowntimeWindow,
    ScenarioConfig,
    TerminalProfile,
    arm_of,
    effective_probability,
    exploration_router,
    heterogeneous_scenario,
    homogeneous_scenario,
    run_ab,
    run_scenario,
    simulate_attempt,
)


def single(p=0.5, cf=0.0, n=1000, seed=0, **kw):
    return ScenarioConfig((Terminal("t1", "g1"),), {"t1": TerminalProfile("t1", p, {}, cf)},
                          n_payments=n, seed=seed, **kw)


def req(method="card", bank="bankA", ts=100):
    return PaymentRequest("p", ts, "m1", Method(method), bank, "visa", 100)


def log_tuples(log):
    return [(r.request.payment_id, r.request.timestamp, r.request.method, r.request.amount,
             r.terminal_id, r.status, r.attempt) for r in log]


# -- determinism ----------------------------------------------------------------------------


def test_same_seed_same_log():
    cfg = heterogeneous_scenario(n_payments=3000)
    assert log_tuples(run_scenario(cfg).log) == log_tuples(run_scenario(cfg).log)


def test_different_seed_different_log():
    a = run_scenario(heterogeneous_scenario(n_payments=500, seed=1)).log
    b = run_scenario(heterogeneous_scenario(n_payments=500, seed=2)).log
    assert log_tuples(a) != log_tuples(b)


def test_payment_ids_unique_and_ordered():
    log = run_scenario(heterogeneous_scenario(n_payments=2000)).log
    first = [r.request for r in log if r.attempt == 0]
    assert [r.payment_id for r in first] == [f"pay_{i:07d}" for i in range(2000)]
    assert all(a.timestamp <= b.timestamp for a, b in zip(first, first[1:]))


# -- statistics -------------------------------------------------------------------------------


def test_attribute_distribution_matches_config():
    log = run_scenario(heterogeneous_scenario(n_payments=20_000)).log
    first = [r.request for r in log if r.attempt == 0]
    card = np.mean([r.method is Method.CARD for r in first])
    assert abs(card - 0.5) < 0.02


def test_single_terminal_success_rate():
    cfg = single(p=0.5, cf=0.1, n=20_000)
    rng = np.random.default_rng(cfg.seed)
    res = run_scenario(cfg, exploration_router(cfg, rng, max_retries=0))
    assert res.stats.attempts == 20_000
    assert abs(res.stats.sr - 0.45) < 0.01
    assert abs(res.stats.customer_failures / 20_000 - 0.1) < 0.01


def test_perfect_and_dead_terminals():
    assert run_scenario(single(p=1.0, n=300)).stats.sr == 1.0
    dead = run_scenario(single(p=0.0, n=300)).stats
    assert dead.successes == 0 and dead.attempts == 300  # one terminal: nothing to retry


def test_retries_fall_through_to_working_terminal():
    cfg = ScenarioConfig((Terminal("a", "g1"), Terminal("b", "g2")),
                         {"a": TerminalProfile("a", 0.0), "b": TerminalProfile("b", 1.0)},
                         n_payments=400)
    s = run_scenario(cfg).stats
    assert s.payment_successes == 400
    assert s.retries == s.attempts - 400


def test_poisson_arrival_rate():
    cfg = single(n=20_000, arrival_rate=4.0)
    log = run_scenario(cfg).log
    span = log[-1].request.timestamp - log[0].request.timestamp
    assert abs(20_000 / span - 4.0) < 0.15


# -- outcome model ---------------------------------------------------------------------------


def test_outage_and_pair_overrides():
    prof = TerminalProfile("t1", 0.8, {("upi", "bankB"): 0.3}, 0.0,
                           (DowntimeWindow(200, 300, 0.1),))
    assert effective_probability(prof, req(), 100) == 0.8
    assert effective_probability(prof, req("upi", "bankB"), 100) == 0.3
    assert effective_probability(prof, req("upi", "bankB"), 250) == 0.1
    assert effective_probability(prof, req(), 300) == 0.8  # windows are half-open


def test_drift_stays_in_unit_interval():
    prof = TerminalProfile("t1", 0.9, drift_amplitude=0.5, drift_period=60)
    ps = [effective_probability(prof, req(ts=t), t) for t in range(1, 121)]
    assert min(ps) >= 0 and max(ps) == 1.0 and min(ps) < 0.5


def test_attempt_consumes_two_uniforms():
    prof = TerminalProfile("t1", 0.5, customer_failure_rate=0.5)
    a, b = np.random.default_rng(3), np.random.default_rng(3)
    for _ in range(50):
        simulate_attempt(prof, req(), 100, a)
        b.random(2)
    assert a.random() == b.random()


def test_log_flags_outage_attempts():
    cfg = heterogeneous_scenario(n_payments=10_200)
    log = run_scenario(cfg).log
    inside = [r for r in log if r.outage]
    assert inside and all(r.gateway_id == "g1" for r in inside)
    assert all(r.status != Status.SUCCESS.value for r in inside)


# -- validation and structured text -----------------------------------------------------------


def test_profile_validation():
    with pytest.raises(ConfigError):
        TerminalProfile("t", 1.2)
    with pytest.raises(ConfigError):
        TerminalProfile("t", 0.5, downtime_windows=(DowntimeWindow(0, 10), DowntimeWindow(5, 20)))
    with pytest.raises(ConfigError):
        TerminalProfile("t", 0.5, drift_amplitude=0.1)


def test_scenario_validation():
    with pytest.raises(ConfigError):
        single(methods={"card": 0.7})
    with pytest.raises(ConfigError):
        single(arrival="bursty")
    with pytest.raises(ConfigError):
        ScenarioConfig((Terminal("t1", "g1"),), {})
    doc = heterogeneous_scenario(100).to_dict()
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({**doc, "bogus": 1})
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({**doc, "outages": [{"gateway_id": "g9", "start": 1, "end": 2}]})


def test_scenario_file_round_trip(tmp_path):
    cfg = heterogeneous_scenario(n_payments=1500)
    cfg.save(tmp_path / "s.json")
    back = ScenarioConfig.load(tmp_path / "s.json")
    assert back.to_dict() == cfg.to_dict()
    assert log_tuples(run_scenario(back).log) == log_tuples(run_scenario(cfg).log)


def test_outages_by_payment_index():
    doc = {
        "terminals": [{"terminal_id": "a", "gateway_id": "g1", "success_prob": 1.0}],
        "arrival": "fixed", "arrival_rate": 2.0, "n_payments": 100, "start_ts": 1000,
        "outages": [{"gateway_id": "g1", "start_payment": 20, "end_payment": 40}],
    }
    cfg = ScenarioConfig.from_dict(json.loads(json.dumps(doc)))
    assert cfg.profiles["a"].downtime_windows == (DowntimeWindow(1010, 1020, 0.0),)
    log = run_scenario(cfg).log
    failed = [int(r.request.payment_id[4:]) for r in log if r.status != "success"]
    assert failed == list(range(20, 40))


# -- A/B split ------------------------------------------------------------------------------------


def test_arm_assignment_deterministic_and_balanced():
    ids = [f"pay_{i:07d}" for i in range(20_000)]
    arms = [arm_of(p, 7) for p in ids]
    assert arms == [arm_of(p, 7) for p in ids]
    assert set(arms) == set(ARMS)
    assert abs(arms.count("smart") / len(arms) - 0.5) < 0.02
    assert arms != [arm_of(p, 8) for p in ids]


def test_ab_is_reproducible(trained, tmp_path):
    cfg = homogeneous_scenario(n_payments=3000)
    a = run_ab(cfg, trained.forest, trained.downtime)
    b = run_ab(cfg, trained.forest, trained.downtime)
    assert a.summary() == b.summary()
    a.write(tmp_path / "a.json", tmp_path / "a.csv")
    b.write(tmp_path / "b.json", tmp_path / "b.csv")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    rows = (tmp_path / "a.csv").read_text().splitlines()
    assert rows[0] == "bucket_index,arm,sr" and len(rows) == 1 + 2 * 6
    s = a.summary()
    assert s["arms"]["random"]["payments"] + s["arms"]["smart"]["payments"] == 3000


def test_random_arm_spreads_first_attempts(trained):
    rep = run_ab(homogeneous_scenario(n_payments=8000), trained.forest, trained.downtime)
    share = rep.summary()["arms"]["random"]["first_attempt_share"]
    assert all(abs(v - 0.25) < 0.02 for v in share.values())


def test_ab_needs_trained_forest(trained):
    with pytest.raises(ConfigError):
        run_ab(homogeneous_scenario(100), None, trained.downtime)
