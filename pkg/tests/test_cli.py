import io
import json
import subprocess
import sys

import pytest

from smartroute.cli import main
from smartroute.feature_store import Schema
from smartroute.ml import Dataset, vif

CONFIG = {
    "forest": {"n_trees": 15, "max_depth": 6, "min_samples_leaf": 10},
    "rfe_target": 8,
    "rfe_drop_fraction": 0.3,
    "seed": 3,
}


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "config.json").write_text(json.dumps(CONFIG))
    return d


@pytest.fixture(scope="module")
def pipeline(workdir):
    """gen-data -> build-dataset -> select-features -> train, once per module."""
    base = ["--config", str(workdir / "config.json"), "--out", str(workdir / "out")]
    results = {}
    for cmd, extra in (("gen-data", ["--payments", "6000"]), ("build-dataset", []),
                       ("select-features", []), ("train", [])):
        buf = io.StringIO()
        stdout, sys.stdout = sys.stdout, buf
        try:
            code = main([cmd, *base, *extra])
        finally:
            sys.stdout = stdout
        assert code == 0, cmd
        results[cmd] = json.loads(buf.getvalue())
    return workdir, base, results


def test_gen_data_and_dataset(pipeline):
    d, _, res = pipeline
    assert res["gen-data"]["payments"] == 6000
    assert (d / "out" / "log.jsonl").exists()
    ds = Dataset.from_csv(d / "out" / "dataset.csv")
    assert len(ds) == res["build-dataset"]["rows"] and ds.n_features == 36
    assert (d / "out" / "downtime_dataset.csv").exists()


def test_selected_features_pass_vif(pipeline):
    d, _, res = pipeline
    sel = res["select-features"]
    manifest = json.loads((d / "out" / "schema.json").read_text())
    schema = Schema.from_manifest(manifest)
    assert list(schema.names) == sel["selected"]
    assert 1 <= len(sel["selected"]) <= 8
    ds = Dataset.from_csv(d / "out" / "dataset.csv")
    cols = [ds.feature_names.index(n) for n in sel["selected"]]
    if len(cols) > 1:
        assert vif(ds.X[:, cols]).max() <= 5.0 * (1 + 1e-9)


def test_train_report(pipeline):
    d, _, res = pipeline
    rep = res["train"]
    metrics = json.loads((d / "out" / "metrics.json").read_text())
    assert metrics == rep
    assert rep["features"] == res["select-features"]["selected"]
    for key in ("forest", "logistic_baseline", "downtime"):
        m = rep[key]
        assert m["tp"] + m["fp"] + m["tn"] + m["fn"] == m["rows"]
        assert m["precision"] is None or 0 <= m["precision"] <= 1
    assert rep["forest"]["roc_auc"] > 0.5
    assert (d / "out" / "forest.json").exists() and (d / "out" / "downtime.json").exists()


def test_ab_test_is_byte_identical(pipeline, capsys):
    d, base, _ = pipeline
    outs = []
    for k in range(2):
        o = d / f"ab{k}"
        args = base[:2] + ["--out", str(o), "--forest", str(d / "out" / "forest.json"),
                           "--downtime", str(d / "out" / "downtime.json"), "--payments", "4000"]
        code, stdout, _ = run(capsys, "ab-test", *args)
        assert code == 0
        outs.append(o)
    for name in ("ab_summary.json", "ab_timeline.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    summary = json.loads((outs[0] / "ab_summary.json").read_text())
    assert summary["n_payments"] == 4000 and summary["sr_gap"] > 0


def test_simulate_replay_and_serve(pipeline, capsys, monkeypatch):
    d, base, _ = pipeline
    code, out, _ = run(capsys, "simulate", *base, "--payments", "500",
                       "--log", str(d / "sim.jsonl"))
    assert code == 0 and json.loads(out)["payments"] == 500

    snap = d / "live.bin"
    tx = d / "tx.jsonl"
    lines = []
    for i in range(20):
        lines.append({"v": 1, "type": "route", "payment_id": f"s{i}", "ts": 2000 + i,
                      "merchant_id": "m1", "method": "upi", "issuer_bank": "bankB",
                      "network": "visa", "amount": 900})
    stdin = "\n".join(json.dumps(m) for m in lines) + "\nnot json\n"
    monkeypatch.setattr(sys, "stdin", io.StringIO(stdin))
    code, out, _ = run(capsys, "serve", *base, "--snapshot", str(snap), "--log", str(tx))
    assert code == 0
    replies = [json.loads(line) for line in out.splitlines()]
    assert [r["type"] for r in replies] == ["route_result"] * 20 + ["error"]

    # feed outcomes, snapshot, then replay the transaction log offline
    msgs = []
    for i, r in enumerate(replies[:20]):
        msgs.append({"v": 1, "type": "feedback", "payment_id": f"s{i}",
                     "terminal_id": r["terminals"][0][0],
                     "status": "success" if i % 2 else "customer_failure", "ts": 2000 + i})
    # a fresh serve process has no open routes, so route and feed in one session
    session = [m for pair in zip(lines, msgs) for m in pair] + [{"v": 1, "type": "snapshot"}]
    tx.unlink(missing_ok=True)
    monkeypatch.setattr(sys, "stdin", io.StringIO("\n".join(json.dumps(m) for m in session)))
    code, out, _ = run(capsys, "serve", *base, "--snapshot", str(snap), "--log", str(tx))
    assert code == 0
    assert json.loads(out.splitlines()[-1])["type"] == "snapshot_result"
    code, out, _ = run(capsys, "replay", *base, "--log", str(tx),
                       "--snapshot", str(d / "replayed.bin"))
    assert code == 0
    assert (d / "replayed.bin").read_bytes() == snap.read_bytes()


def test_error_exit_codes(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--out", str(tmp_path / "empty"))
    assert code == 1 and "not found" in err
    (tmp_path / "bad.json").write_text("{")
    code, _, err = run(capsys, "gen-data", "--config", str(tmp_path / "bad.json"))
    assert code == 1 and "invalid JSON" in err
    with pytest.raises(SystemExit) as exc:
        main(["launch"])
    assert exc.value.code == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "smartroute", "--help"], capture_output=True,
                       text=True, timeout=60)
    assert r.returncode == 0
    for cmd in ("gen-data", "select-features", "ab-test", "serve"):
        assert cmd in r.stdout
