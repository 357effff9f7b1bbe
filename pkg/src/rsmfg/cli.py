"""Command-line driver.

Exit codes: 0 success, 2 validation failure, 3 solver non-convergence,
4 oracle/atom cap exceeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import default_backend, set_threads
from .augmented import DEFAULT_ATOM_CAP, augmented_evaluate
from .duality import identity_residual
from .mfe import MfeResult, mfe_residual, solve_mfe
from .model import CapExceededError, ModelError, fingerprint, lipschitz_constants, load_model
from .risk_dp import (
    MarkovPolicy,
    MeasureFlow,
    StateActionFlow,
    evaluate_policy,
    truncation_error,
    verify_optimality,
)
from .simulator import (
    SimConfig,
    convergence_study,
    mean_field_value,
    nash_gap,
    simulate,
    tv_slope,
)

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED, EXIT_CAP = 0, 2, 3, 4
STOCHASTIC = {"simulate", "convergence", "nash-gap"}
STUDY_COLUMNS = ["N", "estimate", "stderr", "abs_error", "mean_tv_by_t"]

log = logging.getLogger("rsmfg")


def dumps(obj):
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n"


def _load_result(path):
    return MfeResult.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# commands; each returns (payload, exit_code)


def cmd_validate(args):
    model = load_model(args.model)
    Lp, Lc = lipschitz_constants(model)
    payload = {
        "valid": True,
        "num_states": model.nx,
        "num_actions": model.na,
        "beta": model.beta,
        "lambda": model.lam,
        "cost_bound": model.cost_bound,
        "lipschitz_kernel": Lp,
        "lipschitz_cost": Lc,
        "risk_exponent": model.risk_exponent,
        "log_space": model.risk_exponent > 500,
    }
    return payload, EXIT_OK


def cmd_solve_mfe(args):
    model = load_model(args.model)
    res = solve_mfe(model, tol_dp=args.tol_dp, tol_fp=args.tol_fp, max_iter=args.max_iter,
                    damping=args.damping, restarts=args.restarts, horizon=args.horizon)
    code = EXIT_OK if res.converged else EXIT_NONCONVERGED
    if not res.converged:
        log.warning("fixed-point iteration did not converge (residual %.3g)",
                    res.fixed_point_residual)
    return res.to_dict(), code


def run_checks(model, result, tol, aug_horizon, atom_cap=DEFAULT_ATOM_CAP):
    """Four independent checks of an equilibrium candidate."""
    pi, flow = result.policy, result.flow
    n = min(pi.horizon, flow.horizon)
    tail = truncation_error(model, n)

    consistency, gap = mfe_residual(model, pi, flow, n)
    residual = {
        "consistency": consistency,
        "gap": gap,
        "consistency_threshold": tol,
        "gap_threshold": tol + tail,
        "passed": consistency <= tol and gap <= tol + tail,
    }

    saflow = StateActionFlow.from_parts(flow, pi)
    cert = verify_optimality(model, flow, pi, saflow, tol).to_dict()

    dual = identity_residual(model, flow, n)
    duality = {"max_relative_residual": dual, "threshold": 1e-10, "passed": dual <= 1e-10}

    m = min(n, aug_horizon)
    aug = augmented_evaluate(model, flow, pi, m, cap=atom_cap)
    direct = float(model.mu0 @ evaluate_policy(model, flow, pi, m).values[0])
    rel = abs(aug - direct) / direct
    augmented = {"horizon": m, "augmented_value": aug, "recursion_value": direct,
                 "relative_difference": rel, "threshold": 1e-12, "passed": rel <= 1e-12}

    checks = {"mfe_residual": residual, "optimality": cert, "duality": duality,
              "augmented": augmented}
    return {"horizon": n, "passed": all(c["passed"] for c in checks.values()), **checks}


def cmd_verify(args):
    model = load_model(args.model)
    result = _load_result(args.result)
    report = run_checks(model, result, args.tol, args.aug_horizon, args.atom_cap)
    if not report["passed"]:
        for name in ("mfe_residual", "optimality", "duality", "augmented"):
            if not report[name]["passed"]:
                print(f"check failed: {name}", file=sys.stderr)
        if not report["optimality"]["passed"]:
            masses = report["optimality"]["masses"]
            print("per-stage minimizer masses: " + " ".join(f"{m:.6g}" for m in masses),
                  file=sys.stderr)
    return report, EXIT_OK if report["passed"] else EXIT_INVALID


def _sim_inputs(args):
    model = load_model(args.model)
    result = _load_result(args.result)
    n = result.horizon if args.horizon is None else args.horizon
    if n < 0:
        raise ValueError("horizon must be >= 0")
    # past the solver horizon the policy keeps its last stage and the flow stays at mu_n
    pis, mus = result.policy.pis, result.flow.mus
    if n + 1 > len(pis):
        pis = np.concatenate([pis, np.repeat(pis[-1:], n + 1 - len(pis), axis=0)])
    if n + 1 > len(mus):
        mus = np.concatenate([mus, np.repeat(mus[-1:], n + 1 - len(mus), axis=0)])
    result.policy, result.flow = MarkovPolicy(pis), MeasureFlow(mus)
    return model, result, n


def cmd_simulate(args):
    model, result, n = _sim_inputs(args)
    cfg = SimConfig(num_agents=args.agents[0], horizon=n, replications=args.reps,
                    seed=args.seed)
    rep = simulate(model, result.policy, cfg, reference_flow=result.flow)
    ref = mean_field_value(model, result.policy, result.flow, n)
    payload = rep.to_dict()
    payload.update({
        "N": cfg.num_agents,
        "estimate": rep.pooled_mean,
        "stderr": rep.pooled_stderr,
        "reference": ref,
        "abs_error": abs(rep.pooled_mean - ref),
    })
    return payload, EXIT_OK


def cmd_convergence(args):
    model, result, n = _sim_inputs(args)
    rows = convergence_study(model, result.policy, result.flow, args.agents, n,
                             args.reps, args.seed)
    payload = {"horizon": n, "replications": args.reps, "seed": args.seed, "rows": rows}
    if len(rows) >= 2:
        payload["tv_slope"] = tv_slope(rows)
    return payload, EXIT_OK


def cmd_nash_gap(args):
    model, result, n = _sim_inputs(args)
    payload = nash_gap(model, result.policy, result.flow, args.agents[0], n, args.reps,
                       args.seed)
    return payload, EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "solve-mfe": cmd_solve_mfe,
    "verify": cmd_verify,
    "simulate": cmd_simulate,
    "convergence": cmd_convergence,
    "nash-gap": cmd_nash_gap,
}


# ---------------------------------------------------------------------------
# output


def _fmt_list(values):
    return ";".join(repr(float(v)) for v in values)


def to_csv(command, payload):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if command == "convergence":
        w.writerow(STUDY_COLUMNS)
        for r in payload["rows"]:
            w.writerow([r["N"], repr(r["estimate"]), repr(r["stderr"]),
                        repr(r["abs_error"]), _fmt_list(r["mean_tv_by_t"])])
    elif command == "simulate":
        w.writerow(STUDY_COLUMNS)
        w.writerow([payload["N"], repr(payload["estimate"]), repr(payload["stderr"]),
                    repr(payload["abs_error"]), _fmt_list(payload["mean_tv_by_t"])])
    else:
        scalars = {k: v for k, v in payload.items() if not isinstance(v, (list, dict))}
        w.writerow(list(scalars))
        w.writerow([repr(v) if isinstance(v, float) else v for v in scalars.values()])
    return buf.getvalue()


def render(command, payload, fmt):
    if fmt == "csv":
        return to_csv(command, payload)
    return dumps(payload)


# ---------------------------------------------------------------------------
# argument parsing and manifests


def _agents(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad agent list {text!r}")
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("agent counts must be positive")
    return vals


def build_parser():
    p = argparse.ArgumentParser(prog="rsmfg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", help="output file (default: stdout)")
        sp.add_argument("--manifest", help="manifest path (default: OUT.manifest.json)")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker thread cap (fallback: $MFG_THREADS)")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("validate", help="check a model file and report Lipschitz constants")
    sp.add_argument("model")
    common(sp)

    sp = sub.add_parser("solve-mfe", help="compute a mean-field equilibrium")
    sp.add_argument("model")
    sp.add_argument("--tol-dp", type=float, default=1e-3)
    sp.add_argument("--tol-fp", type=float, default=1e-9)
    sp.add_argument("--max-iter", type=int, default=500)
    sp.add_argument("--damping", type=float, default=1.0)
    sp.add_argument("--restarts", type=int, default=3)
    sp.add_argument("--horizon", type=int, default=None,
                    help="override the horizon derived from --tol-dp")
    common(sp)

    sp = sub.add_parser("verify", help="re-check a solver result independently")
    sp.add_argument("model")
    sp.add_argument("result")
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.add_argument("--aug-horizon", type=int, default=4,
                    help="horizon for the exact cost-augmented comparison")
    sp.add_argument("--atom-cap", type=int, default=DEFAULT_ATOM_CAP,
                    help="abort (exit 4) if the augmented law needs more atoms")
    common(sp)

    for name, helptext in (("simulate", "Monte-Carlo N-agent run"),
                           ("convergence", "estimates across several N"),
                           ("nash-gap", "gain from a best-response deviation")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("model")
        sp.add_argument("result")
        sp.add_argument("--agents", type=_agents,
                        default=[10, 100, 1000] if name == "convergence" else [100])
        sp.add_argument("--horizon", type=int, default=None)
        sp.add_argument("--reps", type=int, default=1000)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--format", choices=("json", "csv"), default="json")
        common(sp)

    sp = sub.add_parser("replay", help="re-run a command from its manifest")
    sp.add_argument("manifest_file")
    sp.add_argument("--out", help="output file (default: the manifest's output)")
    sp.add_argument("--threads", type=int, default=None)
    sp.add_argument("-v", "--verbose", action="store_true")
    return p


def _config(args):
    skip = {"out", "manifest", "threads", "verbose", "command"}
    cfg = {k: v for k, v in vars(args).items() if k not in skip}
    for key in ("model", "result"):
        if cfg.get(key):
            cfg[key] = os.path.abspath(cfg[key])
    return cfg


def _manifest(args, duration):
    cfg = _config(args)
    m = {
        "command": args.command,
        "config": cfg,
        "model_sha256": fingerprint(args.model),
        "tool_version": __version__,
        "backend": default_backend(),
        "duration_s": duration,
        "output": os.path.abspath(args.out) if args.out else None,
    }
    if getattr(args, "result", None):
        m["result_sha256"] = fingerprint(args.result)
    if args.command in STOCHASTIC:
        m["seed"] = args.seed
    return m


def _replay_args(parser, ns):
    man = json.loads(Path(ns.manifest_file).read_text())
    cfg = man["config"]
    argv = [man["command"], cfg["model"]]
    if "result" in cfg:
        argv.append(cfg["result"])
    args = parser.parse_args(argv)
    for k, v in cfg.items():
        setattr(args, k, v)
    if fingerprint(args.model) != man["model_sha256"]:
        raise ModelError(f"model file {args.model} changed since the manifest was written")
    if "result_sha256" in man and fingerprint(args.result) != man["result_sha256"]:
        raise ModelError(f"result file {args.result} changed since the manifest was written")
    args.out = ns.out or man.get("output")
    args.manifest = None
    args.threads = ns.threads
    args.verbose = ns.verbose
    return args


def main(argv=None):
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _replay_args(parser, ns) if ns.command == "replay" else ns
        threads = args.threads or os.environ.get("MFG_THREADS")
        if threads:
            set_threads(int(threads))
        start = time.perf_counter()
        payload, code = COMMANDS[args.command](args)
        duration = time.perf_counter() - start
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except CapExceededError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    text = render(args.command, payload, getattr(args, "format", "json"))
    manifest = dumps(_manifest(args, duration))
    if args.out:
        Path(args.out).write_text(text)
        man_path = args.manifest or args.out + ".manifest.json"
        if ns.command != "replay" or args.manifest:
            Path(man_path).write_text(manifest)
    else:
        sys.stdout.write(text)
        if ns.command != "replay":
            if args.manifest:
                Path(args.manifest).write_text(manifest)
            else:
                sys.stderr.write(manifest)
    return code


if __name__ == "__main__":
    sys.exit(main())
