"""Relative-entropy form of the risk-sensitive recursion.

The log-moment generating function is a supremum over tilted measures,

    log sum_x exp(g(x)) zeta(x) = max_q [ sum_x q(x) g(x) - KL(q || zeta) ],

attained at the Gibbs tilt ``q* ~ zeta * exp(g)``.  Applied stage by stage it
turns the multiplicative recursion into an additive inf-sup recursion for
``W_k = log J_k``, which we use as a second route to the same values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .risk_dp import finite_horizon_values


def kl_divergence(q, p):
    """``KL(q || p)`` along the last axis with ``0 log 0 = 0``.

    Mass of ``q`` outside the support of ``p`` gives ``inf``.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    outside = np.any((q > 0) & (p <= 0), axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = xlogy(q, q) - xlogy(q, np.where(p > 0, p, 1.0))
    kl = np.maximum(terms.sum(axis=-1), 0.0)
    return np.where(outside, np.inf, kl)


def gibbs_tilt(g, zeta):
    """Normalized ``zeta * exp(g)``; last axis is the support."""
    g = np.asarray(g, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    if np.any(zeta.sum(axis=-1) <= 0):
        raise ValueError("reference measure has no mass")
    shift = np.where(zeta > 0, g, -np.inf).max(axis=-1, keepdims=True)
    tilt = zeta * np.exp(np.where(zeta > 0, g - shift, 0.0))
    return tilt / tilt.sum(axis=-1, keepdims=True)


def dual_value(g, zeta, q):
    """``sum q g - KL(q || zeta)`` for candidate measures ``q``."""
    q = np.asarray(q, dtype=float)
    support = q > 0
    lin = np.where(support, q * np.asarray(g, dtype=float), 0.0).sum(axis=-1)
    return lin - kl_divergence(q, zeta)


def entropy_dual_check(g, zeta):
    """Both sides of the variational formula and the maximizing tilt.

    Returns ``(lhs, rhs, q_star)`` with ``lhs = log sum exp(g) zeta`` and
    ``rhs`` the dual objective evaluated at ``q_star``.
    """
    g = np.asarray(g, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    if zeta.sum() <= 0:
        raise ValueError("reference measure has no mass")
    support = zeta > 0
    gs = g[support]
    m = gs.max()
    lhs = float(m + np.log(np.sum(zeta[support] * np.exp(gs - m))))
    q_star = gibbs_tilt(g, zeta)
    rhs = float(dual_value(g, zeta, q_star))
    return lhs, rhs, q_star


@dataclass
class IsaacsTable:
    """Upper values ``w[k, x]`` of the zero-sum reformulation, k = 0..n+1.

    ``tilts[k, x, a]`` is the maximizing player's distribution at (k, x, a).
    """

    w: np.ndarray
    tilts: np.ndarray
    horizon: int

    def maximizer(self, k, x, a):
        return self.tilts[k, x, a]

    def to_dict(self):
        return {"horizon": self.horizon, "w": self.w.tolist()}


def isaacs_values(model, flow, n):
    """Backward recursion ``W_k(x) = min_a max_q [E_q W_{k+1} + lam beta^k c - KL(q||p)]``.

    The inner maximum is evaluated at the Gibbs tilt of ``p_k(.|x, a)`` by
    ``W_{k+1}``.
    """
    if len(flow) < n + 1:
        raise ValueError(f"flow has {len(flow)} stages, need {n + 1}")
    nx, na = model.nx, model.na
    w = np.zeros((n + 2, nx))
    tilts = np.empty((n + 1, nx, na, nx))
    for k in range(n, -1, -1):
        P = model.kernels(flow.mus[k])
        C = model.costs(flow.mus[k])
        g = np.broadcast_to(w[k + 1], P.shape)
        q = gibbs_tilt(g, P)
        tilts[k] = q
        sup = dual_value(g, P, q)
        w[k] = (model.lam * model.beta ** k * C + sup).min(axis=1)
    return IsaacsTable(w, tilts, n)


def identity_residual(model, flow, n, table=None):
    """Largest relative gap between ``exp(W_k)`` and the optimal value table."""
    table = isaacs_values(model, flow, n) if table is None else table
    values = finite_horizon_values(model, flow, n)
    if values.log_space:
        return float(np.abs(np.expm1(table.w - values.log_values)).max())
    return float((np.abs(np.exp(table.w) - values.values) / values.values).max())
