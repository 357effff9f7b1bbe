"""Finite-population simulation and exact small-N oracles.

Random streams: replication ``r`` draws from
``PCG64(SeedSequence(seed, spawn_key=(r,)))`` a single block of uniforms laid
out as ``[initial states (N)] + [actions at t (N), moves at t (N)] for t < n
+ [actions at n (N)]``.  Replications never share a stream, so results do
not depend on batching or thread count.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from ._accel import default_backend
from .kernels import run_batch
from .model import CapExceededError
from .risk_dp import (
    MarkovPolicy,
    evaluate_policy,
    finite_horizon_values,
    greedy_policy,
    truncation_error,
)

BATCH = 128
CI_MULT = 3.0


@dataclass
class SimConfig:
    num_agents: int
    horizon: int
    replications: int
    seed: int = 0
    deviator_policy: MarkovPolicy | None = None

    def __post_init__(self):
        if self.num_agents < 1:
            raise ValueError("num_agents must be >= 1")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_dict(self):
        return {
            "num_agents": self.num_agents,
            "horizon": self.horizon,
            "replications": self.replications,
            "seed": self.seed,
            "deviator": self.deviator_policy is not None,
        }


@dataclass
class SimReport:
    """Monte-Carlo estimates of ``E[exp(lam * sum_t beta^t c_t)]``.

    ``pooled_*`` averages over every agent that follows the shared policy
    (exchangeable, so an unbiased estimate of any one of them).
    """

    config: dict
    agent_mean: np.ndarray
    agent_stderr: np.ndarray
    pooled_mean: float
    pooled_stderr: float
    mean_flow: np.ndarray
    tv: np.ndarray | None = None
    first_agent: np.ndarray = field(default=None, repr=False)

    def mean_tv(self):
        """Replication average of TV(e_t, reference) for each t."""
        return None if self.tv is None else self.tv.mean(axis=0)

    def tv_stderr(self):
        if self.tv is None:
            return None
        M = self.tv.shape[0]
        if M < 2:
            return np.zeros(self.tv.shape[1])
        return self.tv.std(axis=0, ddof=1) / math.sqrt(M)

    def to_dict(self):
        out = {
            "config": self.config,
            "agent_mean": self.agent_mean.tolist(),
            "agent_stderr": self.agent_stderr.tolist(),
            "pooled_mean": self.pooled_mean,
            "pooled_stderr": self.pooled_stderr,
            "mean_flow": self.mean_flow.tolist(),
        }
        if self.tv is not None:
            out["mean_tv_by_t"] = self.mean_tv().tolist()
            out["tv_by_replication"] = self.tv.tolist()
        return out


def replication_uniforms(seed, reps, N, n):
    """Uniform blocks for replications ``reps``: (u0, ua, uy)."""
    B = len(reps)
    u0 = np.empty((B, N))
    ua = np.empty((B, n + 1, N))
    uy = np.empty((B, n, N))
    for j, r in enumerate(reps):
        g = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(r,))))
        block = g.random(N * (2 * n + 2))
        u0[j] = block[:N]
        steps = block[N:].reshape(2 * n + 1, N)
        ua[j] = steps[0::2]
        uy[j] = steps[1::2]
    return u0, ua, uy


def _stderr(mean_sq_dev, M):
    return math.sqrt(mean_sq_dev / (M - 1) / M) if M > 1 else 0.0


def simulate(model, shared_policy, cfg, reference_flow=None, backend=None):
    """Run ``cfg.replications`` independent N-agent games.

    Every agent follows ``shared_policy`` except agent 0, which follows
    ``cfg.deviator_policy`` when it is set.  If ``reference_flow`` is given
    the TV distance of each replication's empirical distribution to it is
    recorded per stage.  Replications are reduced in fixed blocks of
    ``BATCH`` in index order, so output bytes do not depend on threads.
    """
    N, n, M = cfg.num_agents, cfg.horizon, cfg.replications
    if len(shared_policy) < n + 1:
        raise ValueError(f"policy has {len(shared_policy)} stages, need {n + 1}")
    has_dev = cfg.deviator_policy is not None
    dev = cfg.deviator_policy if has_dev else shared_policy
    if len(dev) < n + 1:
        raise ValueError("deviator policy is shorter than the horizon")
    backend = backend or default_backend()

    mu0_cum = np.cumsum(model.mu0)
    pol_cum = np.ascontiguousarray(np.cumsum(shared_policy.pis[: n + 1], axis=-1))
    dev_cum = np.ascontiguousarray(np.cumsum(dev.pis[: n + 1], axis=-1))
    disc = model.beta ** np.arange(n + 1)

    shift = None
    agent_sum = np.zeros(N)
    agent_sq = np.zeros(N)
    pooled = np.empty(M)
    first = np.empty(M)
    flow_sum = np.zeros((n + 1, model.nx))
    tv = np.empty((M, n + 1)) if reference_flow is not None else None
    lo = 1 if (has_dev and N > 1) else 0

    for start in range(0, M, BATCH):
        reps = range(start, min(start + BATCH, M))
        u0, ua, uy = replication_uniforms(cfg.seed, reps, N, n)
        acc, counts = run_batch(u0, ua, uy, mu0_cum, pol_cum, dev_cum, has_dev,
                                model.kernel_mix, model.cost_mix, disc, backend)
        vals = np.exp(model.lam * acc)
        if shift is None:
            shift = vals[0].copy()
        d = vals - shift
        agent_sum += d.sum(axis=0)
        agent_sq += (d * d).sum(axis=0)
        sl = slice(start, start + len(reps))
        pooled[sl] = vals[:, lo:].mean(axis=1)
        first[sl] = vals[:, 0]
        emp = counts / N
        flow_sum += emp.sum(axis=0)
        if tv is not None:
            tv[sl] = 0.5 * np.abs(emp - reference_flow.mus[None, : n + 1]).sum(axis=-1)

    dmean = agent_sum / M
    agent_mean = shift + dmean
    if M > 1:
        var = np.maximum(agent_sq - M * dmean * dmean, 0.0) / (M - 1)
        agent_se = np.sqrt(var / M)
    else:
        agent_se = np.zeros(N)
    pm = float(pooled.mean())
    pse = _stderr(float(((pooled - pm) ** 2).sum()), M)
    return SimReport(cfg.to_dict(), agent_mean, agent_se, pm, pse, flow_sum / M, tv, first)


def mean_field_value(model, pi, flow, n):
    """``J^n_mu(pi)`` averaged over ``mu0``."""
    return float(model.mu0 @ evaluate_policy(model, flow, pi, n).values[0])


def convergence_study(model, pi, flow, Ns, n, M, seed=0, backend=None):
    """Finite-N estimates of the shared-policy cost against the mean-field value.

    Returns one row per N with the pooled estimate, its standard error, the
    absolute error to ``J^n_mu(pi)`` and the per-stage mean TV distance of the
    empirical distribution to ``flow``.
    """
    ref = mean_field_value(model, pi, flow, n)
    rows = []
    for N in Ns:
        cfg = SimConfig(num_agents=int(N), horizon=n, replications=M, seed=seed)
        rep = simulate(model, pi, cfg, reference_flow=flow, backend=backend)
        rows.append({
            "N": int(N),
            "estimate": rep.pooled_mean,
            "stderr": rep.pooled_stderr,
            "abs_error": abs(rep.pooled_mean - ref),
            "reference": ref,
            "tail_bound": truncation_error(model, n),
            "mean_tv_by_t": rep.mean_tv().tolist(),
            "tv_stderr_by_t": rep.tv_stderr().tolist(),
        })
    return rows


def tv_slope(rows):
    """Least-squares slope of log(mean over t of mean TV) against log N."""
    logN = np.log([r["N"] for r in rows])
    logtv = np.log([np.mean(r["mean_tv_by_t"]) for r in rows])
    return float(np.polyfit(logN, logtv, 1)[0])


def nash_gap(model, pi, flow, N, n, M, seed=0, backend=None):
    """Estimate agent 0's gain from deviating to the mean-field best response.

    Both runs share random numbers.  The estimate is
    ``J(pi, ..., pi) - J(best response, pi, ..., pi)`` for agent 0; it may
    come out negative within noise.
    """
    table = finite_horizon_values(model, flow, n)
    best = greedy_policy(model, flow, table)
    base = simulate(model, pi, SimConfig(N, n, M, seed), backend=backend)
    dev = simulate(model, pi, SimConfig(N, n, M, seed, deviator_policy=best),
                   backend=backend)
    j_eq, se_eq = float(base.agent_mean[0]), float(base.agent_stderr[0])
    j_dev, se_dev = float(dev.agent_mean[0]), float(dev.agent_stderr[0])
    diff = base.first_agent - dev.first_agent
    paired = _stderr(float(((diff - diff.mean()) ** 2).sum()), M)
    return {
        "N": int(N),
        "horizon": n,
        "replications": M,
        "gap_estimate": j_eq - j_dev,
        "equilibrium_estimate": j_eq,
        "equilibrium_stderr": se_eq,
        "deviation_estimate": j_dev,
        "deviation_stderr": se_dev,
        "combined_stderr": math.hypot(se_eq, se_dev),
        "paired_stderr": paired,
        "tail_bound": truncation_error(model, n),
        "deviation_policy": best.pis.tolist(),
    }


# ---------------------------------------------------------------------------
# exact joint-chain computations for tiny N


@dataclass
class JointOracleResult:
    best_response_value: float
    equilibrium_value: float
    full_information_value: float
    best_response_actions: np.ndarray

    @property
    def gap(self):
        return self.equilibrium_value - self.best_response_value

    def to_dict(self):
        return {
            "best_response_value": self.best_response_value,
            "equilibrium_value": self.equilibrium_value,
            "full_information_value": self.full_information_value,
            "exact_gap": self.gap,
            "best_response_actions": self.best_response_actions.tolist(),
        }


class _JointChain:
    """Joint state chain of N agents where agents 1.. follow ``others``."""

    def __init__(self, model, others, N, n, state_cap):
        nx, na = model.nx, model.na
        S = nx ** N
        if S > state_cap:
            raise CapExceededError(f"{S} joint states exceed cap {state_cap}")
        self.model, self.N, self.n, self.S = model, N, n, S
        self.states = np.array(list(itertools.product(range(nx), repeat=N)), dtype=int)
        counts = np.stack([(self.states == z).sum(axis=1) for z in range(nx)], axis=1)
        emp = counts / N
        self.P = np.stack([model.kernels(e) for e in emp])   # (S, nx, na, nx)
        self.C = np.stack([model.costs(e) for e in emp])     # (S, nx, na)
        x1 = self.states[:, 0]
        init = model.mu0
        for _ in range(N - 1):
            init = np.kron(init, model.mu0)
        self.init = init
        # per stage: transition operator T[s, a1, s'] and cost factor G[s, a1]
        self.T = np.empty((n + 1, S, na, S))
        self.G = np.empty((n + 1, S, na))
        for t in range(n + 1):
            self.G[t] = np.exp(model.lam * model.beta ** t * self.C[np.arange(S), x1])
            for s in range(S):
                xs = self.states[s]
                mix = [others.pis[t, xs[i]] @ self.P[s, xs[i]] for i in range(1, N)]
                for a in range(na):
                    row = self.P[s, xs[0], a]
                    for m in mix:
                        row = np.kron(row, m)
                    self.T[t, s, a] = row
        self.x1 = x1

    def q(self, t, v):
        """Stage values for agent 0 per (s, a1) given continuation ``v`` (..., S)."""
        return self.G[t] * np.einsum("sar,...r->...sa", self.T[t], v)

    def evaluate(self, pi1):
        v = np.ones(self.S)
        for t in range(self.n, -1, -1):
            q = self.q(t, v)
            v = (pi1.pis[t, self.x1] * q).sum(axis=-1)
        return float(self.init @ v)

    def full_information(self):
        v = np.ones(self.S)
        for t in range(self.n, -1, -1):
            v = self.q(t, v).min(axis=-1)
        return float(self.init @ v)

    def local_best_response(self, policy_cap):
        """Exact minimum over deterministic Markov policies on agent 0's own state.

        The cost is affine in each row ``pi_t(.|x)`` separately, so a
        deterministic policy attains the minimum over randomized ones.
        """
        nx, na = self.model.nx, self.model.na
        total = na ** (nx * (self.n + 1))
        if total > policy_cap:
            raise CapExceededError(f"{total} agent policies exceed cap {policy_cap}")
        decisions = np.array(list(itertools.product(range(na), repeat=nx)), dtype=int)
        D = decisions.shape[0]
        v = np.ones((1, self.S))
        tails = np.zeros((1, 0, nx), dtype=int)
        for t in range(self.n, -1, -1):
            q = self.q(t, v)                         # (R, S, na)
            R = q.shape[0]
            pick = decisions[:, self.x1]             # (D, S)
            v = q[:, np.arange(self.S)[None, :], pick]  # (R, D, S)
            v = v.transpose(1, 0, 2).reshape(D * R, self.S)
            tails = np.concatenate([
                np.broadcast_to(decisions[:, None, None, :], (D, R, 1, nx)),
                np.broadcast_to(tails[None], (D,) + tails.shape),
            ], axis=2).reshape(D * R, -1, nx)
        vals = v @ self.init
        k = int(np.argmin(vals))
        return float(vals[k]), tails[k]


def joint_policy_value(model, own_policy, others_policy, N, n, state_cap=10_000):
    """Exact cost of agent 0 playing ``own_policy`` against ``others_policy``."""
    chain = _JointChain(model, others_policy, N, n, state_cap)
    return chain.evaluate(own_policy)


def joint_dp_oracle(model, others_policy, N, n, state_cap=10_000, policy_cap=2 ** 20):
    """Exact equilibrium and best-response values of agent 0 at small N.

    Agents 1..N-1 follow ``others_policy``.  The best response ranges over
    Markov policies that see only agent 0's own state, which is the class in
    the approximate-Nash definition; the smaller value achievable when agent 0
    observes the whole joint state is reported as ``full_information_value``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    chain = _JointChain(model, others_policy, N, n, state_cap)
    eq = chain.evaluate(others_policy)
    br, actions = chain.local_best_response(policy_cap)
    # others_policy is itself admissible; this keeps the gap >= 0 under rounding
    br = min(br, eq)
    full = chain.full_information()
    return JointOracleResult(br, eq, full, actions)
