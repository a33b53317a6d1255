"""Command-line entry point.

Exit codes: 0 success, 2 usage or validation error, 3 infeasible design
target, 4 numerical failure, 5 I/O failure. Failures print one JSON line
``{"error": ..., "exit": ..., "message": ...}`` on stderr.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, experiments
from .channel import load_network, network_from_dict
from .errors import (
    CoGCError,
    InfeasibleTargetError,
    NumericalError,
    RetryExhaustedError,
    NoSampleError,
)
from .gc_code import CodeParams, generate_code
from .training import ModelSpec, Strategy, TrainConfig, train

OUTPUT_DIR_ENV = "COGC_OUTPUT_DIR"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4
EXIT_IO = 5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text):
    try:
        vals = [float(x) for x in str(text).split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a number or comma list, got {text!r}") from exc
    return vals[0] if len(vals) == 1 else vals


def _add_network(p, need_M=True):
    g = p.add_argument_group("network")
    g.add_argument("--network", help="JSON network file (overrides the shorthands)")
    if need_M:
        g.add_argument("--M", type=int, help="number of clients")
    g.add_argument("--p-c2c", type=_floats, default=0.0, help="client-to-client outage (scalar or per-client list)")
    g.add_argument("--p-up", type=_floats, default=0.0, help="uplink outage (scalar or per-client list)")


def _add_output(p):
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--out", help="also write the printed result to this file")


def build_parser():
    p = _Parser(prog="cogc", description="Cooperative gradient coding laboratory.")
    p.add_argument("--config", help="JSON file whose keys override command-line flags")
    p.add_argument("--out-dir", help=f"output directory (default ${OUTPUT_DIR_ENV} or ./results)")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen-code", help="generate a cyclic gradient code")
    g.add_argument("--M", type=int, required=True)
    g.add_argument("--s", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="write the code JSON to this file")

    o = sub.add_parser("outage", help="closed-form outage probability")
    _add_network(o)
    o.add_argument("--s", type=int, required=True)
    o.add_argument("--formula", choices=("semantic", "printed"), default="semantic")
    _add_output(o)

    d = sub.add_parser("design", help="cost-efficient straggler tolerance")
    _add_network(d)
    d.add_argument("--target", type=float, required=True, help="outage target in (0, 1]")
    _add_output(d)

    mc = sub.add_parser("mc", help="Monte Carlo validation")
    mcs = mc.add_subparsers(dest="mc_command", parser_class=_Parser)
    mcs.required = True
    for name, helptext in (
        ("outage", "standard-decoder outage frequency"),
        ("recovery", "GC+ outcome histogram"),
        ("kbar", "conditional mean of 1/|K4|"),
        ("retries", "Design-1 attempts per round"),
    ):
        q = mcs.add_parser(name, help=helptext)
        _add_network(q)
        q.add_argument("--s", type=int, required=True)
        q.add_argument("--trials", type=int, default=10_000)
        q.add_argument("--seed", type=int, default=0)
        if name in ("recovery", "kbar"):
            q.add_argument("--t-r", type=int, default=2)
        if name == "recovery":
            q.add_argument("--mode", choices=("exact", "paper_approx"), default="exact")
        if name == "outage":
            q.add_argument("--engine", choices=("batch", "protocol"), default="batch")
        _add_output(q)

    b = sub.add_parser("bound", help="evaluate closed-form bounds")
    bs = b.add_subparsers(dest="bound_command", parser_class=_Parser)
    bs.required = True
    t1 = bs.add_parser("theorem1", help="three-sigma convergence bound")
    for flag, typ, default in (
        ("--M", int, 10), ("--I", int, 1), ("--T", int, 1000), ("--L", float, 1.0),
        ("--sigma2", float, 1.0), ("--D2", _floats, 1.0), ("--p-up", _floats, 0.0),
        ("--P-O", float, 0.1), ("--F-gap", float, 1.0),
    ):
        t1.add_argument(flag, type=typ, default=default)
    t1.add_argument("--printed-j3", action="store_true", help="use the typeset second moment of J3")
    _add_output(t1)
    ks = bs.add_parser("kstar", help="averaging-size bound K*")
    pm = bs.add_parser("pmin", help="binomial full-recovery lower bound")
    for q in (ks, pm):
        q.add_argument("--M", type=int, required=True)
        q.add_argument("--s", type=int, required=True)
        q.add_argument("--t-r", type=int, required=True)
        q.add_argument("--p", type=float, required=True)
    ks.add_argument("--P-O", type=float, required=True)
    _add_output(ks)
    _add_output(pm)
    lm = bs.add_parser("lmip", help="leakage of one partial sum in bits")
    lm.add_argument("--b", type=_floats, required=True, help="comma list of coefficients")
    lm.add_argument("--sigmas", type=_floats, required=True, help="comma list of per-client variances")
    lm.add_argument("--m", type=int, required=True)
    lm.add_argument("--d", type=int, default=1)
    _add_output(lm)

    tr = sub.add_parser("train", help="run one training strategy")
    _add_network(tr, need_M=False)
    tr.add_argument("--strategy", choices=[s.value for s in Strategy], required=True)
    tr.add_argument("--M", type=int, default=10)
    tr.add_argument("--s", type=int, default=1)
    tr.add_argument("--I", type=int, default=1)
    tr.add_argument("--T", type=int, default=100)
    tr.add_argument("--eta", type=float, default=0.1)
    tr.add_argument("--t-r", type=int, default=2)
    tr.add_argument("--family", choices=("quadratic", "softmax"), default="quadratic")
    tr.add_argument("--D", type=int, default=5)
    tr.add_argument("--skew", type=float, default=1.0)
    tr.add_argument("--batch", type=int, default=None)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--retry-cap", type=int, default=10_000)

    su = sub.add_parser("suite", help="run an experiment sweep file")
    su.add_argument("suite_config", help="JSON sweep description")
    return p


def _apply_config(parser, args):
    if not args.config:
        return args
    try:
        overrides = json.loads(Path(args.config).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.config}: malformed JSON ({exc})") from exc
    if not isinstance(overrides, dict):
        raise UsageError(f"{args.config}: expected a JSON object")
    for key, value in overrides.items():
        attr = key.lstrip("-").replace("-", "_")
        if not hasattr(args, attr):
            raise UsageError(f"{args.config}: unknown option {key!r}")
        setattr(args, attr, value)
    return args


def _network(args):
    if getattr(args, "network", None):
        return load_network(args.network)
    if args.M is None:
        raise UsageError("give --M or --network")
    return network_from_dict({"M": args.M, "p_c2c": args.p_c2c, "p_up": args.p_up})


def _out_dir(args):
    return Path(args.out_dir or os.environ.get(OUTPUT_DIR_ENV) or "results")


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def _emit(args, payload, text):
    out = json.dumps(payload, sort_keys=True, indent=2) if args.format == "json" else text
    print(out)
    if getattr(args, "out", None):
        Path(args.out).write_text(out + "\n")


def _kv_text(payload):
    width = max(len(k) for k in payload)
    return "\n".join(f"{k:<{width}}  {_fmt(v)}" for k, v in payload.items())


def _table_text(rows, cols):
    cells = [[_fmt(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


REPORT_COLUMNS = ("s", "P1", "P2", "P3", "P_O", "E_retries", "tx_max")


def cmd_gen_code(args):
    code = generate_code(CodeParams(args.M, args.s, args.seed))
    text = code.to_json()
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")


def cmd_outage(args):
    net = _network(args)
    br = analysis.outage_probability(net, args.s, formula=args.formula)
    row = analysis.design_row(net, args.s).as_dict()
    payload = {k: row[k] for k in REPORT_COLUMNS}
    payload.update({"P21": br.P21, "P22": br.P22, "prod_P11": float(np.prod(br.P11))})
    _emit(args, payload, _kv_text(payload))


def cmd_design(args):
    net = _network(args)
    s_star = analysis.cost_efficient_s(net, args.target)
    rows = [r.as_dict() for r in analysis.design_table(net)]
    chosen = rows[s_star]
    payload = {
        "target": args.target,
        "s_star": s_star,
        "tx_max": chosen["tx_max"],
        "tx_expected": chosen["tx_expected"],
        "table": [{k: r[k] for k in REPORT_COLUMNS} for r in rows],
    }
    text = _table_text(payload["table"], REPORT_COLUMNS)
    text += f"\ns* = {s_star}  (P_O = {_fmt(chosen['P_O'])}, tx_max = {chosen['tx_max']}, tx_expected = {_fmt(chosen['tx_expected'])})"
    _emit(args, payload, text)


def cmd_mc(args):
    net = _network(args)
    c = args.mc_command
    if c == "outage":
        rep = experiments.mc_outage(net, args.s, args.trials, args.seed, engine=args.engine)
        payload = rep.as_dict()
    elif c == "retries":
        payload = experiments.mc_retries(net, args.s, args.trials, args.seed).as_dict()
    elif c == "kbar":
        payload = experiments.mc_kbar(net, args.s, args.t_r, args.trials, args.seed).as_dict()
    else:
        prof = experiments.mc_recovery_profile(net, args.s, args.t_r, args.trials, args.seed, mode=args.mode)
        payload = prof.as_dict()
        payload["modal"] = prof.modal_bin()
        p = net.homogeneous_value()
        if p is not None:
            payload["full_recovery"] = experiments.full_recovery_report(prof, p).as_dict()
        text = _kv_text({k: v for k, v in payload.items() if k not in ("counts", "full_recovery")})
        text += "\n" + "\n".join(f"  {k:<14} {v}" for k, v in payload["counts"].items())
        _emit(args, payload, text)
        return
    _emit(args, payload, _kv_text(payload))


def cmd_bound(args):
    c = args.bound_command
    if c == "theorem1":
        params = analysis.Theorem1Params(
            M=args.M, I=args.I, T=args.T, L=args.L, sigma2=args.sigma2,
            D2=args.D2, p_up=args.p_up, P_O=args.P_O, F_gap=args.F_gap,
        )
        b = analysis.theorem1_bound(params, printed_j3=args.printed_j3)
        payload = {
            "mu_J1": b.mu_J1, "mu_J2": b.mu_J2, "sigma_J1": b.sigma_J1,
            "sigma_J2": b.sigma_J2, "epsilon": b.epsilon,
        }
    elif c == "kstar":
        inv = analysis.k_star_inverse(args.M, args.s, args.t_r, args.p, args.P_O)
        payload = {
            "P_M_lower": analysis.full_recovery_lower_bound(args.M, args.s, args.t_r, args.p),
            "inv_K_star": inv,
            "K_star": 1.0 / inv,
        }
    elif c == "pmin":
        payload = {"P_M_lower": analysis.full_recovery_lower_bound(args.M, args.s, args.t_r, args.p)}
    else:
        b = np.atleast_1d(np.asarray(args.b, dtype=float))
        sig = np.atleast_1d(np.asarray(args.sigmas, dtype=float))
        if sig.size == 1:
            sig = np.full(b.size, float(sig[0]))
        payload = {"mu_bits": analysis.lmip_bits(b, sig, args.m, args.d)}
    _emit(args, payload, _kv_text(payload))


def cmd_train(args):
    if getattr(args, "network", None):
        net = load_network(args.network)
    else:
        net = network_from_dict({"M": args.M, "p_c2c": args.p_c2c, "p_up": args.p_up})
    cfg = TrainConfig(
        M=net.M, I=args.I, T=args.T, eta=args.eta, strategy=args.strategy, t_r=args.t_r,
        model=ModelSpec(family=args.family, D=args.D, skew=args.skew),
        batch=args.batch, seed=args.seed, retry_cap=args.retry_cap,
    )
    strategy = Strategy(args.strategy)
    code = CodeParams(net.M, args.s, args.seed) if strategy.coded else None
    trace = train(cfg, net, code)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    path = trace.write(out / f"train__{strategy.value}__s{args.seed}.csv")
    fin = trace.final
    print(f"strategy={strategy.value} rounds={fin.round} loss={fin.loss:.6g} "
          f"grad_norm={fin.grad_norm:.6g} tx={fin.tx_cumulative} trace={path}")


def cmd_suite(args):
    summary = experiments.run_experiment_suite(args.suite_config, _out_dir(args))
    print(f"runs={len(summary['runs'])} config_hash={summary['config_hash']} out={_out_dir(args)}")


COMMANDS = {
    "gen-code": cmd_gen_code,
    "outage": cmd_outage,
    "design": cmd_design,
    "mc": cmd_mc,
    "bound": cmd_bound,
    "train": cmd_train,
    "suite": cmd_suite,
}


def _fail(kind, code, message):
    print(json.dumps({"error": kind, "exit": code, "message": str(message).splitlines()[0] if str(message) else ""}),
          file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config(parser, args)
        COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        return _fail("UsageError", EXIT_USAGE, exc)
    except InfeasibleTargetError as exc:
        return _fail(type(exc).__name__, EXIT_INFEASIBLE, exc)
    except (NumericalError, RetryExhaustedError, NoSampleError) as exc:
        return _fail(type(exc).__name__, EXIT_NUMERICAL, exc)
    except CoGCError as exc:
        return _fail(type(exc).__name__, EXIT_USAGE, exc)
    except OSError as exc:
        return _fail(type(exc).__name__, EXIT_IO, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
