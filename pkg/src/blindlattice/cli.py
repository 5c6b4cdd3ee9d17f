"""Command line front end: ``blindlattice <subcommand> [--flags]``."""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import adversary, analysis, mbqc
from .protocol import ProtocolConfig, run_protocol

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

CONFIG_KEYS = {"m1": int, "q": float, "seed": int, "trials": int, "circuit": str, "strategy": str}


class UsageError(Exception):
    pass


class ReportWriteError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def read_config(path: str) -> dict:
    """Parse a ``key = value`` file; ``#`` starts a comment, quotes are optional."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        key, eq, value = line.partition("=")
        key, value = key.strip(), value.strip().strip("\"'")
        if not eq or key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{n}: expected one of {sorted(CONFIG_KEYS)} as key = value")
        try:
            out[key] = CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise UsageError(f"{path}:{n}: bad value for {key}: {value!r}") from exc
    return out


def parse_circuit(text: str) -> list:
    gates = [g.strip().upper() for g in text.split(",") if g.strip()]
    if not gates:
        raise UsageError("circuit must list at least one gate")
    bad = [g for g in gates if g not in mbqc.GATE_LABELS]
    if bad:
        raise UsageError(f"unknown gates {bad}; allowed: {', '.join(mbqc.GATE_LABELS)}")
    return gates


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="blindlattice", description="Blind measurement-based computation on latticed cluster units.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, trials=True):
        p.add_argument("--config", help="key = value file; flags override it")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="write the report here")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        if trials:
            p.add_argument("--trials", type=int)

    p = sub.add_parser("run", help="run protocol instances and report acceptance")
    common(p)
    p.add_argument("--circuit")
    p.add_argument("--q", type=float)
    p.add_argument("--m1", type=int)
    p.add_argument("--strategy")
    p.add_argument("--transcript", help="write the first run's transcript as JSON lines")

    p = sub.add_parser("verify-gates", help="check every unit pattern on all outcome branches")
    common(p, trials=False)

    p = sub.add_parser("blindness", help="average of the 18-state input ensemble")
    common(p, trials=False)

    p = sub.add_parser("bounds", help="feasible epsilon range, bound values and consistency report")
    common(p, trials=False)
    p.add_argument("--q", type=float)
    p.add_argument("--epsilon", type=float, default=0.2)
    p.add_argument("--grid", type=int, default=50, help="points per axis for the CSV sweep")

    p = sub.add_parser("attack", help="acceptance table for honest and adversarial servers")
    common(p)
    p.add_argument("--circuit")
    p.add_argument("--q", type=float)
    p.add_argument("--strategy", action="append", help="repeatable, e.g. flip:p=0.5")

    p = sub.add_parser("lattice", help="edges of an m x n lattice")
    common(p, trials=False)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--circuit")
    return parser


def resolve(args) -> dict:
    cfg = read_config(args.config) if getattr(args, "config", None) else {}
    for key in CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if "seed" not in cfg:
        env = os.environ.get("BLINDLATTICE_SEED")
        try:
            cfg["seed"] = int(env) if env is not None else 0
        except ValueError as exc:
            raise UsageError(f"BLINDLATTICE_SEED must be an integer, got {env!r}") from exc
    cfg.setdefault("trials", 200)
    cfg.setdefault("m1", 1)
    if cfg["trials"] < 1:
        raise UsageError("trials must be at least 1")
    if "q" in cfg and not 0 <= cfg["q"] <= 1:
        raise UsageError("q must lie in [0, 1]")
    return cfg


def cmd_run(args, cfg):
    circuit = parse_circuit(cfg.get("circuit", "I"))
    q = cfg.get("q", 0.5)
    spec = cfg.get("strategy", "honest")
    adversary.parse_strategy(spec)
    if cfg["m1"] != 1:
        raise UsageError("two logical wires allow only m1 = 1")
    if args.transcript:
        tr = run_protocol(circuit, ProtocolConfig(q=q, seed=cfg["seed"]), adversary.parse_strategy(spec))
        _write(args.transcript, tr.to_jsonl())
    est = analysis.estimate_acceptance(circuit, lambda: adversary.parse_strategy(spec), q, cfg["trials"], cfg["seed"])
    row = {"strategy": spec, "q": q, **est.to_dict()}
    summary = f"{spec}: accepted {est.accepted}/{est.trials} (rate {est.rate:.4f}, 95% CI {est.ci95[0]:.4f}-{est.ci95[1]:.4f})"
    return {"config": cfg, "result": row}, [row], summary, True


def cmd_verify(args, cfg):
    rows, ok = [], True
    for gate in mbqc.GATE_LABELS:
        try:
            rep = mbqc.verify_unit_implements_gate(gate)
            rows.append({"gate": gate, "branches": rep.branches_checked, "inputs": rep.inputs_checked,
                         "max_infidelity": rep.max_infidelity, "passed": True})
        except mbqc.UnitVerificationFailed as exc:
            ok = False
            rows.append({"gate": gate, "branches": None, "inputs": None, "max_infidelity": exc.infidelity, "passed": False})
    framed = [mbqc.verify_unit_implements_gate(p.gate, pattern=p).max_infidelity for p in mbqc.all_framed_patterns()]
    summary = "\n".join(f"{r['gate']:>4}: {'ok' if r['passed'] else 'FAILED'} (max infidelity {r['max_infidelity']:.2e})" for r in rows)
    return {"config": cfg, "gates": rows, "framed_patterns": len(framed), "framed_max_infidelity": max(framed)}, rows, summary, ok


def cmd_blindness(args, cfg):
    dev = analysis.max_deviation_from_mixed(analysis.average_input_density())
    ok = dev <= 1e-12
    row = {"states": len(analysis.input_ensemble()), "max_abs_deviation": dev, "passed": ok}
    return {"config": cfg, **row}, [row], f"18-state average deviates from I/2 by {dev:.3e}", ok


def cmd_bounds(args, cfg):
    rng = analysis.epsilon_feasible_range()
    q = cfg.get("q", 0.5)
    report = analysis.bound_report(q, args.epsilon)
    consistency = analysis.consistency_report()
    ok = abs(rng.low - 0.035) <= 1e-3 and abs(rng.high - 0.384) <= 1e-3
    data = {
        "config": {**cfg, "epsilon": args.epsilon},
        "feasible_epsilon": list(rng.interval),
        "stationary_point": rng.stationary,
        "f_at_stationary": rng.f_at_stationary,
        "g_one_ninth": analysis.g(1 / 9),
        "bounds": json.loads(report.to_json()),
        "consistency_report": consistency,
    }
    summary = f"feasible epsilon [{rng.low:.4f}, {rng.high:.4f}], f({rng.stationary:.3f}) = {rng.f_at_stationary:.4f}"
    return data, analysis.grid_sweep(args.grid, args.grid), summary, ok


def cmd_attack(args, cfg):
    circuit = parse_circuit(cfg.get("circuit", "I"))
    q = cfg.get("q", 0.5)
    specs = cfg.get("strategy") or ["fake_graph", "flip:p=0.5", "skip_entangle"]
    if isinstance(specs, str):
        specs = [s.strip() for s in specs.split(";")]
    specs = ["honest"] + [s for s in specs if s != "honest"]
    rows = []
    for spec in specs:
        strat = adversary.parse_strategy(spec)
        est = analysis.estimate_acceptance(circuit, lambda spec=spec: adversary.parse_strategy(spec), q, cfg["trials"], cfg["seed"])
        rows.append({"strategy": strat.name, "params": json.dumps(strat.params, sort_keys=True), "q": q,
                     "rate": est.rate, "ci95_low": est.ci95[0], "ci95_high": est.ci95[1]})
    summary = "\n".join(f"{r['strategy']:>14} {r['params']:>14} q={r['q']:.2f} rate={r['rate']:.4f}" for r in rows)
    return {"config": {**cfg, "strategies": specs}, "rows": rows}, rows, summary, True


def cmd_lattice(args, cfg):
    if args.m < 1 or args.n < 1:
        raise UsageError("m and n must be positive")
    circuit = parse_circuit(args.circuit) if args.circuit else ()
    data = mbqc.export_json(args.m, args.n, circuit)
    rows = [{"a": list(e[0]), "b": list(e[1]), "rule": mbqc.edge_rule(e)} for e in mbqc.build_lattice(args.m, args.n).sorted_edges()]
    return {"config": {**cfg, "m": args.m, "n": args.n}, **data}, rows, f"{len(rows)} edges on a {args.m}x{args.n} lattice", True


COMMANDS = {"run": cmd_run, "verify-gates": cmd_verify, "blindness": cmd_blindness, "bounds": cmd_bounds,
            "attack": cmd_attack, "lattice": cmd_lattice}


def _write(path, text):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise ReportWriteError(f"cannot write {path}: {exc}") from exc


def _csv(rows) -> str:
    import csv
    import io

    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: json.dumps(v) if isinstance(v, (list, dict)) else v for k, v in row.items()})
    return buf.getvalue()


def dispatch(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve(args)
        data, rows, summary, ok = COMMANDS[args.command](args, cfg)
        payload = json.dumps(data, sort_keys=True, indent=2) + "\n"
        if args.command == "bounds" and args.format == "csv":
            body = analysis.rows_to_csv(rows)
        else:
            body = _csv(rows) if args.format == "csv" else payload
        if args.out:
            _write(args.out, body)
        print(summary)
        if not args.out:
            print(body, end="")
        return EXIT_OK if ok else EXIT_FAIL
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ReportWriteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ValueError, analysis.DomainError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
