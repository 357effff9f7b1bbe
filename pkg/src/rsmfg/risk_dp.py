"""Risk-sensitive dynamic programming against a fixed measure flow.

Values are ``J_k(x) = E[exp(lam * sum_{t>=k} beta^t c_t) | x_k = x]``, i.e. the
risk factor at stage ``k`` is ``lam * beta^k``.  The recursion is the
multiplicative Bellman operator

    [T_k u](x) = min_a exp(lam beta^k c_k(x, a)) * sum_y p_k(y | x, a) u(y)

with terminal row ``u = 1``.  When ``lam K / (1 - beta)`` is large enough to
overflow doubles the same recursion is carried out on logarithms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .model import OVERFLOW_EXPONENT, normalize_rows

ARGMIN_RTOL = 1e-12
DEFAULT_HORIZON_CAP = 100_000


class HorizonError(ValueError):
    """The requested truncation tolerance needs more stages than allowed."""


@dataclass
class MeasureFlow:
    """State distributions ``mus[t]`` for t = 0..T; shape (T+1, nx)."""

    mus: np.ndarray

    def __post_init__(self):
        self.mus = np.asarray(self.mus, dtype=float)
        if self.mus.ndim != 2:
            raise ValueError("measure flow must be a (T+1, nx) array")

    @property
    def horizon(self):
        return self.mus.shape[0] - 1

    def __len__(self):
        return self.mus.shape[0]


@dataclass
class MarkovPolicy:
    """Time-indexed action kernels ``pis[t, x, a]`` for t = 0..T."""

    pis: np.ndarray
    stationary: bool = False

    def __post_init__(self):
        self.pis = np.asarray(self.pis, dtype=float)
        if self.pis.ndim != 3:
            raise ValueError("policy must be a (T+1, nx, na) array")
        if np.any(self.pis < -1e-12) or np.any(np.abs(self.pis.sum(-1) - 1.0) > 1e-9):
            raise ValueError("policy rows must be probability vectors")

    @property
    def horizon(self):
        return self.pis.shape[0] - 1

    def __len__(self):
        return self.pis.shape[0]

    @classmethod
    def uniform(cls, nx, na, horizon):
        return cls(np.full((horizon + 1, nx, na), 1.0 / na), stationary=True)

    @classmethod
    def from_actions(cls, actions, na):
        """Deterministic policy from an integer array ``actions[t, x]``."""
        actions = np.asarray(actions, dtype=int)
        pis = np.zeros(actions.shape + (na,))
        np.put_along_axis(pis, actions[..., None], 1.0, axis=-1)
        return cls(pis)

    @classmethod
    def stationary_from(cls, row, horizon):
        row = np.asarray(row, dtype=float)
        return cls(np.repeat(row[None], horizon + 1, axis=0), stationary=True)

    def actions(self):
        """Most likely action per (t, x); the exact choice for deterministic policies."""
        return np.argmax(self.pis, axis=-1)


@dataclass
class StateActionFlow:
    """Joint state-action distributions ``nus[t, x, a]`` for t = 0..T."""

    nus: np.ndarray

    def __post_init__(self):
        self.nus = np.asarray(self.nus, dtype=float)

    @property
    def horizon(self):
        return self.nus.shape[0] - 1

    def __len__(self):
        return self.nus.shape[0]

    def marginals(self):
        """State marginals ``nu_{t,1}``; shape (T+1, nx)."""
        return self.nus.sum(axis=-1)

    @classmethod
    def from_parts(cls, flow, policy):
        T = flow.horizon
        return cls(flow.mus[:, :, None] * policy.pis[: T + 1])

    def disintegrate(self, fill=None):
        """Split into (MeasureFlow, MarkovPolicy).

        Rows of states with zero mass are taken from ``fill`` (a policy array)
        when given, else uniform.
        """
        mus = self.marginals()
        na = self.nus.shape[-1]
        pis = np.empty_like(self.nus)
        mass = mus[..., None]
        pos = mass > 0
        np.divide(self.nus, mass, out=pis, where=pos)
        empty = ~pos[..., 0]
        if fill is not None:
            pis[empty] = np.asarray(fill)[: pis.shape[0]][empty]
        else:
            pis[empty] = 1.0 / na
        return MeasureFlow(normalize_rows(mus)), MarkovPolicy(normalize_rows(pis))


@dataclass
class ValueTable:
    """Value rows ``values[k, x]`` for k = 0..n+1 with ``values[n+1] = 1``.

    ``minimizers[k, x, a]`` flags the actions attaining the minimum at stage
    ``k`` (only filled for optimal tables).
    """

    values: np.ndarray
    log_values: np.ndarray
    horizon: int
    minimizers: np.ndarray | None = None
    log_space: bool = False

    def to_dict(self):
        return {
            "horizon": self.horizon,
            "log_space": self.log_space,
            "values": self.values.tolist(),
            "log_values": self.log_values.tolist(),
        }


def lead_constant(model, k=0):
    """Truncation constant ``L_k = lam K/(1-beta) * exp(lam beta^k K/(1-beta))``."""
    r = model.lam * model.cost_bound / (1.0 - model.beta)
    return r * math.exp(model.beta ** k * r)


def truncation_error(model, n, k=0):
    """Uniform gap bound ``L_k * beta^(n+1)`` between horizon-n and infinite values."""
    return lead_constant(model, k) * model.beta ** (n + 1)


def truncation_horizon(model, tol, cap=DEFAULT_HORIZON_CAP):
    """Smallest n with ``L_0 * beta^(n+1) <= tol``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    L0 = lead_constant(model)
    if L0 * model.beta <= tol:
        return 0
    n = max(0, math.ceil(math.log(tol / L0) / math.log(model.beta)) - 1)
    # float guard around the closed form
    while n > 0 and L0 * model.beta ** n <= tol:
        n -= 1
    while L0 * model.beta ** (n + 1) > tol:
        n += 1
    if n > cap:
        raise HorizonError(f"tolerance {tol} needs horizon {n} > cap {cap}")
    return n


def use_log_space(model, log_space=None):
    if log_space is None:
        return model.risk_exponent > OVERFLOW_EXPONENT
    return bool(log_space)


def _stage(model, mu, k):
    P = model.kernels(mu)
    rate = model.lam * model.beta ** k
    return P, rate * model.costs(mu)


def stage_values(model, mu_k, u, k):
    """Per-(x, a) values ``exp(lam beta^k c) * sum_y p(y|x,a) u(y)``."""
    P, expo = _stage(model, mu_k, k)
    return np.exp(expo) * (P @ np.asarray(u, dtype=float))


def log_stage_values(model, mu_k, log_u, k):
    P, expo = _stage(model, mu_k, k)
    with np.errstate(divide="ignore"):
        logP = np.log(P)
    return expo + logsumexp(logP + np.asarray(log_u)[None, None, :], axis=-1)


def bellman_step(model, mu_k, u, k):
    """Apply ``T_k`` to ``u``.

    Returns the new value row and a boolean ``(nx, na)`` mask of the actions
    within relative ``1e-12`` of the minimum.
    """
    q = stage_values(model, mu_k, u, k)
    row = q.min(axis=1)
    return row, q <= row[:, None] * (1.0 + ARGMIN_RTOL)


def log_bellman_step(model, mu_k, log_u, k):
    """:func:`bellman_step` on logarithms of the value rows."""
    lq = log_stage_values(model, mu_k, log_u, k)
    row = lq.min(axis=1)
    return row, lq <= row[:, None] + ARGMIN_RTOL


def _check_length(flow, n):
    if len(flow) < n + 1:
        raise ValueError(f"flow has {len(flow)} stages, need {n + 1}")


def finite_horizon_values(model, flow, n, log_space=None):
    """Optimal horizon-``n`` values against ``flow`` by backward induction."""
    _check_length(flow, n)
    log_space = use_log_space(model, log_space)
    nx, na = model.nx, model.na
    logv = np.zeros((n + 2, nx))
    mins = np.zeros((n + 1, nx, na), dtype=bool)
    if log_space:
        for k in range(n, -1, -1):
            logv[k], mins[k] = log_bellman_step(model, flow.mus[k], logv[k + 1], k)
        with np.errstate(over="ignore"):
            vals = np.exp(logv)
    else:
        vals = np.ones((n + 2, nx))
        for k in range(n, -1, -1):
            vals[k], mins[k] = bellman_step(model, flow.mus[k], vals[k + 1], k)
        logv = np.log(vals)
    return ValueTable(vals, logv, n, mins, log_space)


def greedy_policy(model, flow, table):
    """Deterministic policy on the recorded minimizers; ties go to the lowest action."""
    actions = np.argmax(table.minimizers, axis=-1)
    return MarkovPolicy.from_actions(actions, model.na)


def evaluate_policy(model, flow, pi, n, log_space=None):
    """Values ``J_k^n(pi, x)`` of a Markov policy by the multiplicative recursion."""
    _check_length(flow, n)
    if len(pi) < n + 1:
        raise ValueError(f"policy has {len(pi)} stages, need {n + 1}")
    log_space = use_log_space(model, log_space)
    nx = model.nx
    logv = np.zeros((n + 2, nx))
    if log_space:
        for k in range(n, -1, -1):
            lq = log_stage_values(model, flow.mus[k], logv[k + 1], k)
            with np.errstate(divide="ignore"):
                logv[k] = logsumexp(lq + np.log(pi.pis[k]), axis=1)
        with np.errstate(over="ignore"):
            vals = np.exp(logv)
    else:
        vals = np.ones((n + 2, nx))
        for k in range(n, -1, -1):
            q = stage_values(model, flow.mus[k], vals[k + 1], k)
            vals[k] = (pi.pis[k] * q).sum(axis=1)
        logv = np.log(vals)
    return ValueTable(vals, logv, n, None, log_space)


@dataclass
class OptimalityCertificate:
    """Per-stage mass that the state-action flow puts on near-minimizers."""

    masses: np.ndarray
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = bool(np.all(self.masses >= 1.0 - self.tol))

    @property
    def failing_stages(self):
        return [int(k) for k in np.flatnonzero(self.masses < 1.0 - self.tol)]

    def to_dict(self):
        return {
            "passed": self.passed,
            "tol": self.tol,
            "masses": self.masses.tolist(),
            "failing_stages": self.failing_stages,
        }


def check_induced(flow, pi, saflow, atol=1e-9):
    """Raise if ``saflow`` is not ``flow[t] x pi[t]`` stage by stage."""
    T = len(saflow) - 1
    if len(flow) < T + 1 or len(pi) < T + 1:
        raise ValueError("state-action flow is longer than the flow or policy")
    marg = saflow.marginals()
    err = np.abs(marg - flow.mus[: T + 1]).max()
    if err > atol:
        raise ValueError(f"state-action marginals differ from the flow by {err:.3g}")
    joint = flow.mus[: T + 1, :, None] * pi.pis[: T + 1]
    err = np.abs(saflow.nus - joint).max()
    if err > atol:
        raise ValueError(f"state-action flow differs from flow x policy by {err:.3g}")


def verify_optimality(model, flow, pi, saflow, tol=1e-9, log_space=None):
    """Check that ``saflow`` sits on the minimizer sets of the optimal recursion.

    At each stage ``k`` the certificate records the ``nu_k``-mass of pairs whose
    stage value exceeds ``[T_k J_{k+1}](x)`` by at most ``tol`` relative.
    """
    check_induced(flow, pi, saflow)
    n = len(saflow) - 1
    table = finite_horizon_values(model, flow, n, log_space)
    masses = np.empty(n + 1)
    for k in range(n + 1):
        if table.log_space:
            lq = log_stage_values(model, flow.mus[k], table.log_values[k + 1], k)
            rel = np.expm1(lq - table.log_values[k][:, None])
        else:
            q = stage_values(model, flow.mus[k], table.values[k + 1], k)
            rel = q / table.values[k][:, None] - 1.0
        masses[k] = saflow.nus[k][rel <= tol].sum()
    return OptimalityCertificate(masses, tol)
