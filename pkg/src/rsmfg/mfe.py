"""Mean-field equilibria through the state-action fixed-point map.

An equilibrium is a pair (policy, flow) where the policy is optimal against
the flow and the flow is the one the policy generates.  Both conditions are
encoded on state-action flows ``nu``:

* consistency: ``nu'_{0,1} = mu0`` and
  ``nu'_{t+1,1} = sum_{x,a} nu_t(x, a) p(.|x, a, nu_{t,1})``;
* optimality: ``nu'_t`` charges only minimizers of the risk-sensitive
  recursion run against the marginals of ``nu``.

:func:`gamma_step` returns one element of that intersection and
:func:`solve_mfe` runs damped Picard iteration on it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import normalize_rows, tv_distance
from .risk_dp import (
    MarkovPolicy,
    MeasureFlow,
    StateActionFlow,
    evaluate_policy,
    finite_horizon_values,
    greedy_policy,
    truncation_error,
    truncation_horizon,
)

logger = logging.getLogger(__name__)

__all__ = [
    "MfeResult",
    "StateActionFlow",
    "gamma_step",
    "lambda_map",
    "mfe_residual",
    "solve_mfe",
]


def lambda_map(model, pi, T):
    """State flow generated by ``pi`` from ``mu0`` over stages 0..T."""
    if len(pi) < T:
        raise ValueError(f"policy has {len(pi)} stages, need {T}")
    mus = np.empty((T + 1, model.nx))
    mus[0] = model.mu0
    for t in range(T):
        P = model.kernels(mus[t])
        joint = mus[t][:, None] * pi.pis[t]
        mus[t + 1] = normalize_rows(np.einsum("xa,xay->y", joint, P))
    return MeasureFlow(mus)


def _gamma(model, nu, n):
    mus = normalize_rows(nu.marginals()[: n + 1])
    flow = MeasureFlow(mus)
    table = finite_horizon_values(model, flow, n)
    pi = greedy_policy(model, flow, table)
    new_mus = np.empty_like(mus)
    new_mus[0] = model.mu0
    for t in range(n):
        P = model.kernels(mus[t])
        new_mus[t + 1] = normalize_rows(np.einsum("xa,xay->y", nu.nus[t], P))
    return StateActionFlow(new_mus[:, :, None] * pi.pis), pi


def gamma_step(model, nu, n):
    """One selection of the fixed-point map: greedy policy on propagated marginals."""
    if len(nu) < n + 1:
        raise ValueError(f"state-action flow has {len(nu)} stages, need {n + 1}")
    return _gamma(model, nu, n)[0]


def mfe_residual(model, pi, flow, n):
    """Independent check of an equilibrium candidate.

    Returns ``(consistency, gap)``: the largest per-stage TV distance between
    ``flow`` and the flow ``pi`` generates, and the ``mu0``-average excess of
    ``pi``'s value over the optimal value against ``flow``.
    """
    regenerated = lambda_map(model, pi, n)
    consistency = float(tv_distance(flow.mus[: n + 1], regenerated.mus).max())
    v_pi = evaluate_policy(model, flow, pi, n)
    v_opt = finite_horizon_values(model, flow, n)
    gap = float(model.mu0 @ (v_pi.values[0] - v_opt.values[0]))
    return consistency, gap


@dataclass
class MfeResult:
    policy: MarkovPolicy
    flow: MeasureFlow
    consistency_residual: float
    optimality_gap: float
    iterations: int
    converged: bool
    horizon: int
    fixed_point_residual: float = float("nan")
    restarts: list = field(default_factory=list)

    def to_dict(self):
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "horizon": self.horizon,
            "consistency_residual": self.consistency_residual,
            "optimality_gap": self.optimality_gap,
            "fixed_point_residual": self.fixed_point_residual,
            "policy": self.policy.pis.tolist(),
            "flow": self.flow.mus.tolist(),
            "restarts": self.restarts,
        }

    @classmethod
    def from_dict(cls, data):
        policy = MarkovPolicy(np.array(data["policy"], dtype=float))
        flow = MeasureFlow(np.array(data["flow"], dtype=float))
        return cls(
            policy=policy,
            flow=flow,
            consistency_residual=float(data.get("consistency_residual", float("nan"))),
            optimality_gap=float(data.get("optimality_gap", float("nan"))),
            iterations=int(data.get("iterations", 0)),
            converged=bool(data.get("converged", False)),
            horizon=int(data.get("horizon", flow.horizon)),
            fixed_point_residual=float(data.get("fixed_point_residual", float("nan"))),
            restarts=list(data.get("restarts", [])),
        )


def acceptance_thresholds(model, n, tol_fp):
    """Residual thresholds a converged run must meet: (consistency, gap)."""
    return 2.0 * tol_fp, 10.0 * tol_fp + 2.0 * truncation_error(model, n)


def initial_flow(model, n, policy=None):
    """State-action flow of ``policy`` (uniform by default) propagated from ``mu0``."""
    if policy is None:
        policy = MarkovPolicy.uniform(model.nx, model.na, n)
    flow = lambda_map(model, policy, n)
    return StateActionFlow.from_parts(flow, policy)


def _iterate(model, nu, n, tol_fp, max_iter, damping):
    last_pi = None
    step = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        target, last_pi = _gamma(model, nu, n)
        new = StateActionFlow((1.0 - damping) * nu.nus + damping * target.nus)
        step = float(tv_distance(new.nus, nu.nus, axis=(1, 2)).max())
        nu = new
        if step <= tol_fp:
            break
    return nu, last_pi, it, step


def _finish(model, nu, fill_pi, n, it, step, tol_fp):
    flow, pi = nu.disintegrate(fill=fill_pi.pis)
    consistency, gap = mfe_residual(model, pi, flow, n)
    c_max, g_max = acceptance_thresholds(model, n, tol_fp)
    converged = step <= tol_fp and consistency <= c_max and gap <= g_max
    return MfeResult(pi, flow, consistency, gap, it, converged, n, step)


def solve_mfe(model, tol_dp=1e-3, tol_fp=1e-9, max_iter=500, damping=1.0,
              restarts=3, seed=0, horizon=None):
    """Compute a mean-field equilibrium by damped iteration of the fixed-point map.

    Parameters
    ----------
    tol_dp : float
        Truncation tolerance; sets the horizon through :func:`truncation_horizon`
        unless ``horizon`` is given.
    tol_fp : float
        Stop once successive state-action flows are within this TV distance at
        every stage.
    damping : float in (0, 1]
        Weight of the new iterate.
    restarts : int
        Extra attempts from random initial policies if the first run does not
        converge.

    Non-convergence is returned with ``converged=False``, never raised.
    """
    if not 0.0 < damping <= 1.0:
        raise ValueError(f"damping must lie in (0, 1], got {damping}")
    if not (tol_dp > 0 and tol_fp > 0):
        raise ValueError("tolerances must be positive")
    n = truncation_horizon(model, tol_dp) if horizon is None else int(horizon)

    rng = np.random.default_rng(seed)
    outcomes = []
    best = None
    for attempt in range(restarts + 1):
        if attempt == 0:
            nu0 = initial_flow(model, n)
        else:
            rows = rng.dirichlet(np.ones(model.na), size=(n + 1, model.nx))
            nu0 = initial_flow(model, n, MarkovPolicy(rows))
        nu, pi, it, step = _iterate(model, nu0, n, tol_fp, max_iter, damping)
        res = _finish(model, nu, pi, n, it, step, tol_fp)
        outcomes.append({
            "attempt": attempt,
            "converged": res.converged,
            "iterations": it,
            "fixed_point_residual": step,
            "consistency_residual": res.consistency_residual,
            "optimality_gap": res.optimality_gap,
        })
        logger.info("attempt %d: converged=%s iterations=%d step=%.3g",
                    attempt, res.converged, it, step)
        if best is None or _rank(res) < _rank(best):
            best = res
        if res.converged:
            break
    best.restarts = outcomes
    return best


def _rank(res):
    return (not res.converged, max(res.consistency_residual, res.optimality_gap))
