"""An in-process routing-service session and an offline replay.

Route a handful of payments, report outcomes, snapshot the feature store,
then rebuild the same store from the transaction log alone.
Run: python demos/service_session.py
"""

import json
import os
import tempfile

from smartroute.core import read_log
from smartroute.dynamic_router import Router
from smartroute.feature_store import FeatureStore
from smartroute.ml import ForestParams
from smartroute.service import RoutingService, replay_store
from smartroute.simulator import exploration_scenario, run_scenario, store_schema_for, train_models

cfg = exploration_scenario(n_payments=6000)
forest, downtime = train_models(run_scenario(cfg).log, forest_params=ForestParams(n_trees=20))
schema = store_schema_for(forest, downtime)

tmp = tempfile.mkdtemp()
snap_path = os.path.join(tmp, "store.bin")
log_path = os.path.join(tmp, "tx.jsonl")

log_fh = open(log_path, "w")
router = Router(FeatureStore(schema, terminals=cfg.terminals), forest, downtime,
                terminals=cfg.terminals)
svc = RoutingService(router, snap_path, log_fh)


def send(msg):
    line = svc.handle_line(json.dumps({"v": 1, **msg}))
    print(">", json.dumps(msg))
    print("<", line)
    return json.loads(line)


# %% t1 keeps failing, so it sinks in the ranking
for i in range(4):
    r = send({"type": "route", "payment_id": f"p{i}", "ts": 5000 + i, "merchant_id": "m1",
              "method": "card", "issuer_bank": "bankA", "network": "visa", "amount": 1500})
    for tid, _ in r["terminals"]:
        status = "gateway_failure" if tid == "t1" else "success"
        if send({"type": "feedback", "payment_id": f"p{i}", "terminal_id": tid,
                 "status": status, "ts": 5000 + i})["resolved"]:
            break

send({"type": "snapshot"})
send({"type": "route", "payment_id": "bad", "ts": True})
log_fh.close()

# %% the transaction log alone reproduces the live store byte for byte
replayed = replay_store(read_log(log_path), FeatureStore(schema, terminals=cfg.terminals))
with open(snap_path, "rb") as fh:
    print("\nreplay matches snapshot:", replayed.snapshot() == fh.read())
