"""Command-line entry points: simulate, train, tune-breach, quote, serve, evaluate.

Errors are reported as one line on stderr (``error: <kind>: <message>``)
with exit status 2. Output files are written to a temporary name and renamed
into place.
"""

from __future__ import annotations

import argparse
import json
import sys
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from . import __version__, breach, evalkit
from . import pipeline as P
from .baseline import RuleConfig
from .domain import MINUTES_PER_DAY, ConfigError, InputError, Order
from .losses import LossSpec
from .simnet import SimulationResult, default_network, generate, load_scenario, operator_rule_config

STATE_FILE = "state.json"
BREACH_FILE = "breach.json"
TRAIN_WARMUP_DAYS = 7
FEEDBACK_DAYS = 14


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _data_dir(path: str) -> Path:
    p = Path(path)
    return p if p.is_dir() else p.parent


def load_history(path: str) -> tuple[P.History, SimulationResult]:
    sim = SimulationResult.load(_data_dir(path))
    return P.History.from_simulation(sim), sim


# --- simulate ------------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    if args.scenario in (None, "default"):
        sc = {"spec": None, "events": (), "days": 70, "orders_per_day": 1000, "seed": 0, "start_day": 0}
    else:
        sc = load_scenario(args.scenario)
    days = args.days if args.days is not None else sc["days"]
    opd = args.orders_per_day if args.orders_per_day is not None else sc["orders_per_day"]
    seed = args.seed if args.seed is not None else sc["seed"]
    if days < 1 or opd < 1:
        raise ConfigError("days and orders-per-day must be >= 1")
    spec = sc["spec"] or default_network(opd, days, sc["start_day"])
    result = generate(spec, sc["events"], days=days, orders_per_day=opd, seed=seed, start_day=sc["start_day"])
    result.save(args.out)
    print(json.dumps({"orders": len(result.deliveries), "days": days, "seed": seed, "out": str(args.out)}))
    return 0


# --- train --------------------------------------------------------------------------------

def _pipeline_meta(models_dir: Path) -> dict:
    path = models_dir / "pipeline.json"
    return json.loads(path.read_text()) if path.exists() else {}


def _rule_for(args, sim: SimulationResult) -> RuleConfig:
    if getattr(args, "rule", None):
        return RuleConfig.load(args.rule)
    return RuleConfig.from_dict(operator_rule_config(sim.spec))


def cmd_train(args) -> int:
    history, sim = load_history(args.data)
    out = Path(args.out)
    models_dir = out.parent
    d = history.deliveries
    first, last = int(d["placed_day"].min()), int(d["placed_day"].max())
    split = args.split_day if args.split_day is not None else last - 6
    start = first + TRAIN_WARMUP_DAYS
    if split - 5 < start:
        raise InputError(f"not enough history before split day {split}")
    recipe = P.FeatureRecipe.load(args.recipe) if args.recipe else None
    config = P.LegConfig(kind=args.model, loss=LossSpec.parse(args.loss), iterations=args.iterations,
                         learning_rate=args.learning_rate, seed=args.seed, recipe=recipe)
    model = P.train_leg(history, args.leg, config, range(start, split - 4), split * MINUTES_PER_DAY,
                        rule=_rule_for(args, sim) if args.model == "baseline" else None,
                        half_life=args.half_life)
    if isinstance(model, P.GbdtLeg):
        for i, loss in enumerate(model.model.train_loss):
            if i % max(1, len(model.model.train_loss) // 20) == 0 or i == len(model.model.train_loss) - 1:
                print(f"iter {i:5d} train_loss {loss:.6f}")
    model.save(out)

    meta = _pipeline_meta(models_dir)
    legs = sorted(set(meta.get("legs", [])) | {args.leg})
    pipe_meta = {"format_version": P.LEG_FORMAT_VERSION, "name": meta.get("name", "model"),
                 "preship": meta.get("preship", "model"), "legs": legs,
                 "cutoffs": {k: list(v) for k, v in sim.spec.cutoffs.items()},
                 "rule": operator_rule_config(sim.spec) if args.model == "baseline" else meta.get("rule"),
                 "train_until": split}
    _write(models_dir / "pipeline.json", json.dumps(pipe_meta, sort_keys=True, indent=1))
    models = {leg: (model if leg == args.leg else P.LegModel.load(models_dir / f"{leg}.json")) for leg in legs}
    state = P.snapshot(history, P.union_recipe(models, breach.BREACH_RECIPE), last + 1)
    _write(models_dir / STATE_FILE, state.dumps())
    print(json.dumps({"leg": args.leg, "model": model.tag, "out": str(out), "train_until": split}))
    return 0


# --- model directory ------------------------------------------------------------------------

def load_models(models_dir: str | Path, with_breach: bool = True) -> tuple[P.PromisePipeline, P.FeatureState | None]:
    models_dir = Path(models_dir)
    if not models_dir.is_dir():
        raise InputError(f"models directory not found: {models_dir}")
    pipe = P.PromisePipeline.load(models_dir)
    if with_breach and (models_dir / BREACH_FILE).exists():
        pipe = breach.corrected_pipeline(pipe, breach.BreachCorrector.load(models_dir / BREACH_FILE), pipe.name)
    state_path = models_dir / STATE_FILE
    state = P.FeatureState.from_dict(json.loads(state_path.read_text())) if state_path.exists() else None
    return pipe, state


def _order_filter(pipe: P.PromisePipeline):
    if pipe.preship == "known" or pipe.is_rule:
        return None
    kinds = [k for k in ("vendor", "warehouse") if k in pipe.models]

    def keep(rows):
        return rows[rows["source_kind"].isin(kinds)]
    return keep


# --- tune-breach ----------------------------------------------------------------------------

def cmd_tune_breach(args) -> int:
    if not 0 < args.cutoff < 1:
        raise ConfigError("cutoff must be in (0, 1)")
    history, _ = load_history(args.history)
    models_dir = Path(args.models) if args.models else Path(args.out).parent
    pipe, _ = load_models(models_dir, with_breach=False)
    meta = _pipeline_meta(models_dir)
    d = history.deliveries
    end = int(meta.get("train_until", int(d["placed_day"].max()) - 6))
    days = range(end - FEEDBACK_DAYS, end - 3)
    examples = breach.collect_feedback(pipe, history, days, end * MINUTES_PER_DAY, _order_filter(pipe))
    corrector = breach.fit_breach_control(examples, args.cutoff, params=breach.corrector_params(seed=args.seed))
    corrector.save(Path(args.out))
    print(json.dumps({"examples": len(examples), "weights": corrector.weights.to_dict(),
                      "base_breach": breach.breach_rate(examples), "out": str(args.out)}))
    return 0


# --- quote / serve --------------------------------------------------------------------------

def _parse_order(text: str) -> Order:
    path = Path(text)
    if not text.lstrip().startswith("{") and path.exists():
        text = path.read_text()
    try:
        return Order.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise InputError(f"order is not valid JSON: {exc.msg}") from exc
    except ValueError as exc:
        raise InputError(f"malformed order: {exc}") from exc


def quote_json(pipe: P.PromisePipeline, state: P.FeatureState | None, order: Order) -> dict:
    if pipe.is_rule:
        from .baseline import rule_promise
        ts = rule_promise(order, pipe.rule, pipe.calendar)
        return {"order_id": order.order_id, "leg_predictions": {}, "promise_at": ts.minutes_since_epoch,
                "promise_time": str(ts), "promise_date": ts.date.isoformat(), "model_tags": {"rule": "baseline"}}
    if pipe.needs_state and state is None:
        raise InputError(f"models need {STATE_FILE}; retrain to produce it")
    return P.quote(order, pipe.models, pipe.cutoffs, state).to_dict()


def cmd_quote(args) -> int:
    pipe, state = load_models(args.models)
    print(json.dumps(quote_json(pipe, state, _parse_order(args.order)), sort_keys=True))
    return 0


def make_server(models_dir: str | Path, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    pipe, state = load_models(models_dir)
    health = {"status": "ok", "version": __version__, "format_version": P.LEG_FORMAT_VERSION,
              "models": {leg: m.tag for leg, m in sorted(pipe.models.items())},
              "state_as_of": None if state is None else state.as_of}

    class Handler(BaseHTTPRequestHandler):
        def _send(self, code: int, body: dict) -> None:
            data = json.dumps(body, sort_keys=True).encode()
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self):
            if self.path == "/health":
                self._send(200, health)
            else:
                self._send(404, {"error": "not found"})

        def do_POST(self):
            if self.path != "/quote":
                self._send(404, {"error": "not found"})
                return
            length = int(self.headers.get("Content-Length", 0))
            try:
                order = _parse_order(self.rfile.read(length).decode())
                self._send(200, quote_json(pipe, state, order))
            except (InputError, ConfigError) as exc:
                self._send(400, {"error": str(exc)})

        def log_message(self, format, *args):
            pass

    return ThreadingHTTPServer((host, port), Handler)


def cmd_serve(args) -> int:
    server = make_server(args.models, args.host, args.port)
    print(json.dumps({"listening": f"http://{args.host}:{server.server_address[1]}"}), flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


# --- evaluate -------------------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    history, sim = load_history(args.data)
    pipe, _ = load_models(args.models)
    meta = _pipeline_meta(Path(args.models))
    d = history.deliveries
    start = args.from_day if args.from_day is not None else int(meta.get("train_until", d["placed_day"].max() - 6))
    end = args.to_day if args.to_day is not None else start + 7
    pipes = {pipe.name: pipe}
    if args.baseline:
        pipes["rule_baseline"] = P.PromisePipeline("rule_baseline", {}, {}, rule=_rule_for(args, sim),
                                                   calendar=history.calendar)
    report, details = evalkit.evaluate_pipelines(pipes, history, range(start, end), args.window,
                                                 _order_filter(pipe))
    out = Path(args.out)
    stem = out.with_suffix("") if out.suffix in (".csv", ".md", ".json") else out
    _write(stem.with_suffix(".csv"), evalkit.to_csv(report))
    _write(stem.with_suffix(".md"), evalkit.to_markdown(report))
    _write(stem.with_suffix(".json"), evalkit.to_json(report, details))
    print(evalkit.to_markdown(report), end="")
    return 0


# --- entry point ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="promisedate", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic delivery history")
    s.add_argument("--scenario", default="default", help="scenario TOML/JSON file or 'default'")
    s.add_argument("--days", type=int)
    s.add_argument("--orders-per-day", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="train one leg model")
    s.add_argument("--leg", choices=P.LEGS, required=True)
    s.add_argument("--model", choices=("gbdt", "stsf", "baseline"), default="gbdt")
    s.add_argument("--loss", default="quantile:0.9", help="mse | asymmetric:ALPHA | quantile:TAU")
    s.add_argument("--data", required=True, help="deliveries.csv from simulate (or its directory)")
    s.add_argument("--out", required=True, help="model file; siblings hold the pipeline metadata")
    s.add_argument("--recipe")
    s.add_argument("--rule", help="rule configuration for --model baseline")
    s.add_argument("--split-day", type=int, help="first day whose outcomes are withheld")
    s.add_argument("--iterations", type=int, default=150)
    s.add_argument("--learning-rate", type=float, default=0.1)
    s.add_argument("--half-life", type=float, default=14.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("tune-breach", help="tune breach-control weights and fit the corrector")
    s.add_argument("--history", required=True)
    s.add_argument("--cutoff", type=float, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--models", help="models directory (default: directory of --out)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_tune_breach)

    s = sub.add_parser("quote", help="promise for one order")
    s.add_argument("--order", required=True, help="order JSON or a path to it")
    s.add_argument("--models", required=True)
    s.set_defaults(func=cmd_quote)

    s = sub.add_parser("serve", help="HTTP quote endpoint")
    s.add_argument("--models", required=True)
    s.add_argument("--port", type=int, default=8080)
    s.add_argument("--host", default="127.0.0.1")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("evaluate", help="accuracy and breach report")
    s.add_argument("--models", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--window", type=int, choices=(1, 2), default=1)
    s.add_argument("--out", required=True, help="report path stem; .csv, .md and .json are written")
    s.add_argument("--from-day", type=int)
    s.add_argument("--to-day", type=int)
    s.add_argument("--baseline", action="store_true", help="add the rule baseline as a second row")
    s.add_argument("--rule")
    s.set_defaults(func=cmd_evaluate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        kind, msg = "config", str(exc)
    except FileNotFoundError as exc:
        kind, msg = "input", f"file not found: {exc.filename}"
    except (InputError, json.JSONDecodeError, KeyError, ValueError) as exc:
        kind, msg = "input", str(exc)
    print(f"error: {kind}: {' '.join(msg.split())}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
