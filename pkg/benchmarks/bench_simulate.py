"""Compare the numba and numpy simulation kernels.

Times the inner kernel on pre-drawn uniforms (so random number generation is
excluded) and the full ``simulate`` call, and checks that both backends give
the same bits.

    python benchmarks/bench_simulate.py --agents 1000 --reps 2000 --horizon 10
"""

import argparse
import time
from pathlib import Path

import numpy as np

from rsmfg import _accel
from rsmfg.kernels import run_batch
from rsmfg.mfe import solve_mfe
from rsmfg.model import load_model
from rsmfg.simulator import SimConfig, replication_uniforms, simulate

MODEL = Path(__file__).resolve().parents[1] / "models" / "congestion.json"


def best_of(fn, repeats):
    times = []
    out = None
    for _ in range(repeats):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--agents", type=int, default=1000)
    ap.add_argument("--reps", type=int, default=2000)
    ap.add_argument("--horizon", type=int, default=10)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--model", default=str(MODEL))
    args = ap.parse_args()

    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is unavailable or disabled (RSMFG_DISABLE_NUMBA); nothing to compare")

    model = load_model(args.model)
    res = solve_mfe(model, tol_dp=1e-2, damping=0.5)
    n = min(args.horizon, res.horizon)
    pi = res.policy
    N, B = args.agents, min(args.reps, 128)

    u0, ua, uy = replication_uniforms(0, range(B), N, n)
    pol_cum = np.ascontiguousarray(np.cumsum(pi.pis[: n + 1], axis=-1))
    kernel_args = (u0, ua, uy, np.cumsum(model.mu0), pol_cum, pol_cum, False,
                   model.kernel_mix, model.cost_mix, model.beta ** np.arange(n + 1))

    t = time.perf_counter()
    run_batch(*kernel_args, backend="numba")
    compile_s = time.perf_counter() - t

    print(f"model {Path(args.model).name}: nx={model.nx} na={model.na} N={N} n={n}")
    print(f"numba first call (compile or cache load): {compile_s:.2f}s")
    print()
    print(f"{'stage':<28}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")

    kn, out_n = best_of(lambda: run_batch(*kernel_args, backend="numba"), args.repeats)
    kp, out_p = best_of(lambda: run_batch(*kernel_args, backend="numpy"), args.repeats)
    same_kernel = all(np.array_equal(a, b) for a, b in zip(out_n, out_p))
    print(f"{f'kernel, {B} replications':<28}{kn:>12.3f}{kp:>12.3f}{kp / kn:>9.1f}x")

    cfg = SimConfig(num_agents=N, horizon=n, replications=args.reps, seed=1)
    sn, rep_n = best_of(lambda: simulate(model, pi, cfg, backend="numba"), args.repeats)
    sp, rep_p = best_of(lambda: simulate(model, pi, cfg, backend="numpy"), args.repeats)
    same_sim = rep_n.to_dict() == rep_p.to_dict()
    print(f"{f'simulate, {args.reps} replications':<28}{sn:>12.3f}{sp:>12.3f}{sp / sn:>9.1f}x")
    print()
    print(f"bit-identical: kernel {same_kernel}, simulate {same_sim}")


if __name__ == "__main__":
    main()
