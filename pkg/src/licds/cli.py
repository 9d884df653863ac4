"""Command-line front end: ``licds {simulate,learn,encode,select,check}``.

Every output file embeds the resolved configuration: CSV files start with a
``# config {...}`` line and JSON files carry a ``"config"`` key. Errors are
reported as one JSON line on stderr with exit code 2 (configuration),
3 (numerical failure) or 4 (I/O).
"""

import argparse
import json
import os
import sys

import numpy as np

from . import codec, experiments
from .core import LicdsError, LicdsParams, calibrate_lambda, licds, rank_models
from .integrate import BlowUpError, Trajectory, integrate, sample_em
from .learn import (
    TrainingError,
    fit_gp,
    l2_distance,
    load_model,
    make_dataset,
    train_mlp,
)
from .localmodel import COMPLEXITY_MODES, TaylorFitError
from .systems import SYSTEM_NAMES, get_system

EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 2, 3, 4


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")


def _lambda(text):
    if text in ("auto", "balance"):
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("--lambda takes a number, 'auto' or 'balance'")


def _box(text):
    vals = _floats(text)
    if len(vals) != 2 or not vals[1] > vals[0]:
        raise argparse.ArgumentTypeError("box must be 'lo,hi' with hi > lo")
    return vals


def _add_field(p, required=True):
    src = p.add_mutually_exclusive_group(required=required)
    src.add_argument("--system", choices=SYSTEM_NAMES)
    src.add_argument("--model", help="learned model JSON file")


def _add_horizon(p, T=4.0, dt=0.01):
    p.add_argument("--x0", type=_floats)
    p.add_argument("--T", type=float, default=T)
    p.add_argument("--dt", type=float, default=dt)


def _add_search(p):
    p.add_argument("--lambda", dest="lam", type=_lambda, default="auto")
    p.add_argument("--k-max", type=int, default=8)
    p.add_argument("--m-max", type=int, default=5)
    p.add_argument("--complexity", choices=COMPLEXITY_MODES, default="order")


def build_parser():
    parser = _Parser(prog="licds", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="RK4 or Euler-Maruyama trajectory as CSV")
    _add_field(p)
    _add_horizon(p)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("learn", help="train an MLP or fit a GP on sampled trajectories")
    p.add_argument("--system", choices=SYSTEM_NAMES, required=True)
    arch = p.add_mutually_exclusive_group(required=True)
    arch.add_argument("--arch", type=_ints)
    arch.add_argument("--gp", action="store_true")
    p.add_argument("--grid-search", action="store_true", help="GP hyperparameters by marginal likelihood")
    p.add_argument("--n-traj", type=int, default=10)
    p.add_argument("--n-samples", type=int, default=100)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--sigma", type=float, help="noise level (default: the system's)")
    p.add_argument("--box", type=_box, help="initial-point interval, every component")
    p.add_argument("--epochs", type=int, default=5000)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("encode", help="optimal local encoding of one trajectory")
    _add_field(p)
    p.add_argument("--truth", help="trajectory CSV to encode instead of the field's rollout")
    _add_horizon(p)
    _add_search(p)
    p.add_argument("--state-bits", type=int, default=16)
    p.add_argument("--coeff-bits", type=int, default=16)
    p.add_argument("--state-bound", type=float, default=codec.DEFAULT_STATE_BOUND)
    p.add_argument("--coeff-bound", type=float, default=64.0)
    p.add_argument("--out", help="output prefix for .json, _cost.csv, _approx.csv and .licd")
    p.add_argument("--emit-bits", action="store_true", help="print the bit accounting as JSON")

    p = sub.add_parser("select", help="rank learned models by mean encoding cost")
    p.add_argument("--model", action="append", required=True, help="model JSON (repeat)")
    p.add_argument("--system", choices=SYSTEM_NAMES, help="true system, for reference distances")
    p.add_argument("--box", type=_box, default=[-2.0, 2.0],
                   help="initial points and distance evaluation box, every component")
    p.add_argument("--n-init", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    _add_horizon(p)
    _add_search(p)
    p.add_argument("--out")

    p = sub.add_parser("check", help="randomized bound checks between nearby fields")
    p.add_argument("--system", choices=SYSTEM_NAMES, default="tanh")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--eps-max", type=float, default=0.2,
                   help="largest perturbation size; the bound family halves it three times")
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    return parser


def _field(args):
    if getattr(args, "model", None):
        return load_model(args.model)
    return get_system(args.system).dynamics


def _x0(args, dim):
    if args.x0 is None:
        if getattr(args, "system", None):
            return np.array(get_system(args.system).default_x0, dtype=float)
        raise ConfigError("--x0 is required with --model")
    if len(args.x0) != dim:
        raise ConfigError(f"--x0 has {len(args.x0)} components, the field has {dim}")
    return np.array(args.x0)


def _params(args, T=None):
    try:
        return LicdsParams(T if T is not None else args.T, args.dt, args.lam, args.k_max,
                           args.m_max, args.complexity)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _config(args, **extra):
    cfg = {k: v for k, v in vars(args).items() if k not in ("out", "emit_bits")}
    cfg["lambda"] = cfg.pop("lam", None)
    cfg.update(extra)
    if cfg["lambda"] is None:
        del cfg["lambda"]
    return cfg


def _csv(text, cfg):
    return f"# config {json.dumps(cfg, sort_keys=True)}\n" + text


def _write(path, text, binary=False):
    mode = "wb" if binary else "w"
    with open(path, mode) as fh:
        fh.write(text)


def _emit(args, text):
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)


def _dump(obj):
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def cmd_simulate(args):
    f = _field(args)
    x0 = _x0(args, f.dim)
    if args.sigma < 0:
        raise ConfigError("--sigma must be nonnegative")
    if args.sigma > 0:
        traj = sample_em(f, x0, args.T, args.dt, args.sigma, args.seed)
    else:
        traj = integrate(f, x0, 0.0, args.T, args.dt)
    _emit(args, _csv(traj.to_csv(), _config(args, x0=x0.tolist())))


def cmd_learn(args):
    system = get_system(args.system)
    box = None if args.box is None else [args.box] * system.dim
    data = make_dataset(system, args.n_traj, args.n_samples, args.dt, args.seed, box, args.sigma)
    cfg = _config(args)
    if args.gp:
        model = fit_gp(data, grid_search=args.grid_search)
        out = model.to_dict()
    else:
        if any(w < 1 for w in args.arch):
            raise ConfigError("--arch widths must be positive")
        model = train_mlp(data, args.arch, epochs=args.epochs, lr=args.lr, seed=args.seed)
        out = model.to_dict()
        loss_path = os.path.splitext(args.out)[0] + "_loss.csv"
        lines = ["epoch,loss"] + [f"{i + 1},{v:.17g}" for i, v in enumerate(model.loss_history)]
        _write(loss_path, _csv("\n".join(lines) + "\n", cfg))
    out["name"] = os.path.splitext(os.path.basename(args.out))[0]
    out["pairs"] = len(data)
    out["config"] = cfg
    _write(args.out, _dump(out))


def cmd_encode(args):
    f = _field(args)
    if args.truth:
        with open(args.truth) as fh:
            truth = Trajectory.from_csv(fh.read())
        if truth.dim != f.dim:
            raise ConfigError("trajectory and field dimensions differ")
        T = truth.dt * (len(truth) - 1)
        args.dt = truth.dt
        x0 = truth.states[0]
        params = _params(args, T)
    else:
        x0 = _x0(args, f.dim)
        params = _params(args)
        truth = integrate(f, x0, 0.0, params.T_global, params.dt)
    if params.lam in ("auto", "balance"):
        params = params.with_lambda(calibrate_lambda(f, truth, params))
    result = licds(f, truth, params)
    try:
        qspec = codec.QuantizationSpec(args.state_bits, args.coeff_bits,
                                       ((-args.state_bound, args.state_bound),) * f.dim,
                                       args.coeff_bound)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    msg = codec.encode(result, qspec, k_max=params.k_max)
    bits = msg.bit_report(raw_samples=len(truth))
    cfg = _config(args, x0=np.asarray(x0).tolist(), T=params.T_global, dt=params.dt,
                  **{"lambda": params.lam, "lambda_rule": args.lam})
    out = result.to_dict()
    out["bits"] = bits
    out["config"] = cfg
    if args.out:
        _write(args.out + ".json", _dump(out))
        _write(args.out + "_cost.csv", _csv(result.cost_curve_csv(), cfg))
        _write(args.out + "_approx.csv", _csv(result.approx_states.to_csv(), cfg))
        _write(args.out + ".licd", msg.to_bytes(), binary=True)
    elif not args.emit_bits:
        sys.stdout.write(_dump(out))
    if args.emit_bits:
        sys.stdout.write(_dump(bits))


def cmd_select(args):
    if len(args.model) < 2:
        raise ConfigError("select needs at least two --model files")
    cands = [(os.path.splitext(os.path.basename(p))[0], load_model(p)) for p in args.model]
    dims = {f.dim for _, f in cands}
    if len(dims) != 1:
        raise ConfigError("models have different state dimensions")
    dim = dims.pop()
    rng = np.random.default_rng(args.seed)
    lo, hi = args.box
    points = rng.uniform(lo, hi, size=(args.n_init, dim))
    params = _params(args)
    ranking = rank_models(cands, list(points), params)
    rows = [{"name": n, "L_mean": L} for n, L in ranking]
    if args.system:
        truth = get_system(args.system)
        if truth.dim != dim:
            raise ConfigError("true system and models have different dimensions")
        fields = dict(cands)
        for row in rows:
            row["true_distance"] = l2_distance(truth.dynamics, fields[row["name"]], [args.box] * dim)
    cfg = _config(args, init_points=points.tolist())
    if args.out and args.out.endswith(".csv"):
        cols = ["name", "L_mean"] + (["true_distance"] if args.system else [])
        lines = [",".join(cols)]
        lines += [",".join(str(r[c]) if c == "name" else f"{r[c]:.17g}" for c in cols) for r in rows]
        _emit(args, _csv("\n".join(lines) + "\n", cfg))
    else:
        _emit(args, _dump({"ranking": rows, "config": cfg}))


def cmd_check(args):
    if args.n < 1 or not args.eps_max >= 0:
        raise ConfigError("--n must be positive and --eps-max nonnegative")
    rows = experiments.l2_bound_suite(args.n, seed=args.seed, dt=args.dt, eps_max=args.eps_max,
                                      systems=(args.system,))
    eps = tuple(args.eps_max / 2 ** i for i in range(4))
    family = experiments.l1_distance_family(args.system, dt=args.dt, seed=args.seed, eps_values=eps)
    report = {
        "l2_bound": {
            "passed": sum(r["holds"] for r in rows),
            "passed_two_sided": sum(r["holds_two_sided"] for r in rows),
            "total": len(rows),
            "instances": rows,
        },
        "l1_family": family,
        "config": _config(args),
    }
    _emit(args, _dump(report))


COMMANDS = {
    "simulate": cmd_simulate,
    "learn": cmd_learn,
    "encode": cmd_encode,
    "select": cmd_select,
    "check": cmd_check,
}


def _fail(code, kind, exc):
    sys.stderr.write(json.dumps({"error": kind, "message": str(exc)}) + "\n")
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args)
    except (ConfigError, KeyError, ValueError) as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except (BlowUpError, LicdsError, TaylorFitError, TrainingError, np.linalg.LinAlgError,
            ArithmeticError) as exc:
        return _fail(EXIT_NUMERIC, type(exc).__name__, exc)
    except OSError as exc:
        return _fail(EXIT_IO, "io", exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
