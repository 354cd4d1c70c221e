"""``smartroute`` command line: data generation, training, simulation and serving.

Each subcommand reads an optional JSON config (``--config``), writes its
artifacts under ``--out`` and prints a short JSON summary on stdout.
Exit codes: 0 success, 1 a module error (message on stderr), 2 usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, replace

from .config import AppConfig
from .core import read_log, write_log
from .dynamic_router import Router
from .errors import SmartRouteError
from .feature_store import FeatureStore, Schema
from .ml.dataset import Dataset, build_downtime_set, build_training_set
from .ml.forest import TrainedForest, train_forest
from .ml.logistic import train_logistic
from .ml.metrics import confusion_counts, precision, roc_auc
from .ml.persistence import load_model, save_model
from .ml.selection import rfe, vif_filter
from .ml.tuning import grid_search
from .service import RoutingService, parse_listen, replay_store
from .simulator import exploration_router, run_ab, run_scenario, store_schema_for
from .static_router import DowntimeModel, train_downtime_model

log = logging.getLogger("smartroute")

LOG_FILE = "log.jsonl"
DATASET_FILE = "dataset.csv"
DOWNTIME_DATASET_FILE = "downtime_dataset.csv"
MANIFEST_FILE = "schema.json"
FOREST_FILE = "forest.json"
DOWNTIME_FILE = "downtime.json"
SNAPSHOT_FILE = "snapshot.bin"


def _out(args, name: str) -> str:
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _input(args, flag: str, default_name: str) -> str:
    path = getattr(args, flag) or os.path.join(args.out, default_name)
    if not os.path.exists(path):
        raise SmartRouteError(f"input {path} not found (pass --{flag.replace('_', '-')})")
    return path


def _log_out(args) -> str:
    if args.log:
        os.makedirs(os.path.dirname(os.path.abspath(args.log)), exist_ok=True)
        return args.log
    return _out(args, LOG_FILE)


def _write_json(path: str, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _scenario(cfg: AppConfig, args, which: str):
    scenario = cfg.load_scenario(which)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    if args.payments is not None:
        scenario = replace(scenario, n_payments=args.payments)
    return scenario


def _models(cfg: AppConfig, args) -> tuple[TrainedForest, DowntimeModel | None]:
    forest = load_model(args.forest or cfg.models.get("forest")
                        or _input(args, "forest", FOREST_FILE), kind="forest")
    path = args.downtime or cfg.models.get("downtime") or os.path.join(args.out, DOWNTIME_FILE)
    downtime = DowntimeModel.load(path) if os.path.exists(path) else None
    if downtime is None:
        log.warning("no downtime model at %s; gateway filtering disabled", path)
    else:
        downtime = replace(downtime, threshold=cfg.downtime_threshold)
    return forest, downtime


def _manifest_schema(cfg: AppConfig, args) -> Schema:
    path = args.manifest or cfg.models.get("manifest")
    if path is None and os.path.exists(os.path.join(args.out, MANIFEST_FILE)):
        path = os.path.join(args.out, MANIFEST_FILE)
    if path:
        with open(path, encoding="utf-8") as fh:
            return Schema.from_manifest(json.load(fh))
    return cfg.full_schema()


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(cfg: AppConfig, args) -> dict:
    scenario = _scenario(cfg, args, "scenario")
    result = run_scenario(scenario, exploration_router(
        scenario, None, cfg.full_schema(), cfg.alpha, cfg.max_retries))
    path = _log_out(args)
    with open(path, "w", encoding="utf-8") as fh:
        write_log(result.log, fh)
    return {"log": path, "records": len(result.log), **result.stats.summary()}


def cmd_build_dataset(cfg: AppConfig, args) -> dict:
    records = read_log(_input(args, "log", LOG_FILE))
    schema = cfg.full_schema()
    ds = build_training_set(records, schema, cfg.alpha)
    ds.to_csv(_out(args, DATASET_FILE))
    out = {"dataset": os.path.join(args.out, DATASET_FILE), "rows": len(ds),
           "features": ds.n_features, "positive_rate": float(ds.y.mean()) if len(ds) else None}
    if records and all(r.outage is not None for r in records if r.routed):
        gw = schema.gateway_only()
        dds = build_downtime_set(records, gw, cfg.alpha)
        dds.to_csv(_out(args, DOWNTIME_DATASET_FILE))
        out["downtime_dataset"] = os.path.join(args.out, DOWNTIME_DATASET_FILE)
    return out


def cmd_select_features(cfg: AppConfig, args) -> dict:
    ds = Dataset.from_csv(_input(args, "dataset", DATASET_FILE))
    target = min(cfg.rfe_target, ds.n_features)
    r = rfe(ds, target, cfg.forest, cfg.rfe_drop_fraction)
    v = vif_filter(ds.select(r.selected), cfg.vif_threshold)
    names = list(v.feature_names)
    schema = Schema.from_manifest({"templates": names})
    path = _out(args, MANIFEST_FILE)
    _write_json(path, schema.to_manifest())
    return {
        "manifest": path,
        "rfe_selected": list(r.feature_names),
        "vif_dropped": [[r.feature_names[c], vif] for c, vif in v.dropped],
        "selected": names,
        "max_vif": max(v.vifs) if v.vifs else None,
    }


def _scores(model, ds: Dataset) -> dict:
    scores = model.probabilities(ds.X)
    counts = confusion_counts(scores, ds.y)
    report = {"rows": len(ds), "positives": int(ds.y.sum()), **asdict(counts)}
    for name, fn in (("precision", lambda: precision(counts)),
                     ("roc_auc", lambda: roc_auc(scores, ds.y))):
        try:
            report[name] = fn()
        except ValueError as exc:
            report[name] = None
            report[f"{name}_note"] = str(exc)
    return report


def cmd_train(cfg: AppConfig, args) -> dict:
    records = read_log(_input(args, "log", LOG_FILE))
    schema = _manifest_schema(cfg, args)
    ds = build_training_set(records, schema, cfg.alpha)
    train, test = ds.split(cfg.test_fraction, cfg.seed)
    params = replace(cfg.forest, seed=cfg.seed)
    report: dict = {"schema_id": schema.schema_id, "features": list(schema.names)}
    if cfg.grid is not None and args.grid:
        spec = replace(cfg.grid, seed=cfg.seed, base=params)
        g = grid_search(train, spec)
        params = g.best
        report["grid"] = [[p.to_dict(), s] for p, s in g.scores]
    forest = train_forest(train, params)
    report["forest_params"] = params.to_dict()
    report["forest"] = _scores(forest, test)
    report["logistic_baseline"] = _scores(train_logistic(train, cfg.logistic), test)
    forest_path = _out(args, FOREST_FILE)
    save_model(forest, forest_path)
    report["forest_model"] = forest_path

    if all(r.outage is not None for r in records if r.routed):
        gw = cfg.full_schema().gateway_only()
        dtrain, dtest = build_downtime_set(records, gw, cfg.alpha).split(cfg.test_fraction, cfg.seed)
        downtime = train_downtime_model(dtrain, gw, cfg.logistic, cfg.downtime_threshold)
        report["downtime"] = _scores(downtime.model, dtest)
        path = _out(args, DOWNTIME_FILE)
        downtime.save(path)
        report["downtime_model"] = path
    else:
        log.warning("log has no outage labels; skipping the downtime model")
    _write_json(_out(args, "metrics.json"), report)
    return report


def cmd_simulate(cfg: AppConfig, args) -> dict:
    scenario = _scenario(cfg, args, "ab_scenario")
    forest, downtime = _models(cfg, args)
    store = FeatureStore(store_schema_for(forest, downtime), cfg.alpha)
    router = Router(store, forest, downtime, scenario.rule_set(), scenario.terminals,
                    cfg.max_retries)
    result = run_scenario(scenario, router)
    path = _log_out(args)
    with open(path, "w", encoding="utf-8") as fh:
        write_log(result.log, fh)
    summary = {"log": path, **result.stats.summary()}
    _write_json(_out(args, "simulate_summary.json"), summary)
    return summary


def cmd_ab_test(cfg: AppConfig, args) -> dict:
    scenario = _scenario(cfg, args, "ab_scenario")
    forest, downtime = _models(cfg, args)
    report = run_ab(scenario, forest, downtime, alpha=cfg.alpha, max_retries=cfg.max_retries)
    summary_path, timeline_path = _out(args, "ab_summary.json"), _out(args, "ab_timeline.csv")
    report.write(summary_path, timeline_path)
    return {"summary": summary_path, "timeline": timeline_path, "sr_gap": report.gap,
            "sr": {a: s.sr for a, s in report.arms.items()}}


def _service_store(cfg: AppConfig, forest, downtime) -> FeatureStore:
    return FeatureStore(store_schema_for(forest, downtime), cfg.alpha, cfg.terminal_list())


def cmd_replay(cfg: AppConfig, args) -> dict:
    records = read_log(_input(args, "log", LOG_FILE))
    forest, downtime = _models(cfg, args)
    store = replay_store(records, _service_store(cfg, forest, downtime))
    path = args.snapshot or _out(args, SNAPSHOT_FILE)
    data = store.snapshot()
    with open(path, "wb") as fh:
        fh.write(data)
    return {"snapshot": path, "records": len(records), "keys": store.n_keys(), "bytes": len(data)}


def cmd_serve(cfg: AppConfig, args) -> dict:
    forest, downtime = _models(cfg, args)
    store = _service_store(cfg, forest, downtime)
    if args.snapshot and os.path.exists(args.snapshot):
        with open(args.snapshot, "rb") as fh:
            store.load(fh.read())
        log.info("restored store from %s (%d keys)", args.snapshot, store.n_keys())
    router = Router(store, forest, downtime, cfg.rule_set(), cfg.terminal_list(), cfg.max_retries)
    log_fh = open(args.log, "a", encoding="utf-8") if args.log else None
    service = RoutingService(router, args.snapshot, log_fh)
    try:
        addr = parse_listen(args.listen)
        if addr is None:
            n = service.serve_stdio()
            return {"served": n}
        with service.tcp_server(*addr) as server:
            host, port = server.server_address[:2]
            print(f"listening on {host}:{port}", file=sys.stderr, flush=True)
            try:
                server.serve_forever()
            except KeyboardInterrupt:
                pass
        return {"stopped": True}
    finally:
        if log_fh is not None:
            log_fh.close()


COMMANDS = {
    "gen-data": (cmd_gen_data, "run random-exploration traffic and write a transaction log"),
    "build-dataset": (cmd_build_dataset, "replay a log into training datasets"),
    "select-features": (cmd_select_features, "RFE then VIF; write a schema manifest"),
    "train": (cmd_train, "train the forest and downtime model; write a metrics report"),
    "simulate": (cmd_simulate, "run one scenario through the trained router"),
    "ab-test": (cmd_ab_test, "random vs smart routing on one split payment stream"),
    "replay": (cmd_replay, "rebuild the feature store from a log and write a snapshot"),
    "serve": (cmd_serve, "line-protocol routing service on stdio or TCP"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="override the scenario / training seed")
    common.add_argument("--payments", type=int, help="override the scenario payment count")
    common.add_argument("--out", default="out", help="artifact directory (default: out)")
    common.add_argument("--snapshot", help="feature-store snapshot path")
    common.add_argument("--listen", default="stdio", help="stdio or HOST:PORT (serve)")
    common.add_argument("--log", help="transaction log path")
    common.add_argument("--dataset", help="dataset CSV (select-features)")
    common.add_argument("--manifest", help="schema manifest (train)")
    common.add_argument("--forest", help="forest model file")
    common.add_argument("--downtime", help="downtime model file")
    common.add_argument("--grid", action="store_true", help="grid-search forest parameters")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="smartroute", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text, description=help_text)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = AppConfig.load(args.config) if args.config else AppConfig()
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        summary = COMMANDS[args.command][0](cfg, args)
    except (SmartRouteError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"smartroute {args.command}: error: {msg}", file=sys.stderr)
        return 1
    if args.command != "serve" or args.listen != "stdio":
        print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
