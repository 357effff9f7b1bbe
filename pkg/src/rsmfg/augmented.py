"""Cost-augmented state process.

Appending the discounted running cost to the state turns the exponential
criterion into a terminal reward: with ``s_t = (x_t, sum_{k<t} beta^k c_k)``
the horizon-n value is ``E[exp(lam * c_{n+1})]``.  On finite models the
running cost takes finitely many values, so the law of ``s_t`` is propagated
exactly as a list of weighted atoms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CapExceededError

MERGE_ATOL = 1e-13
DEFAULT_ATOM_CAP = 10_000_000


class AtomCapError(CapExceededError):
    """Raised when the atom count would exceed the configured cap."""

    def __init__(self, step, count, cap):
        self.step = step
        self.count = count
        super().__init__(f"{count} atoms at step {step} exceed cap {cap}")


@dataclass
class AtomMeasure:
    """Finitely supported law of (state, accumulated cost)."""

    x: np.ndarray
    c: np.ndarray
    w: np.ndarray

    def __len__(self):
        return self.x.shape[0]

    def state_marginal(self, nx):
        return np.bincount(self.x, weights=self.w, minlength=nx)

    def to_list(self):
        return [[int(x), float(c), float(w)] for x, c, w in zip(self.x, self.c, self.w)]


def merge_atoms(x, c, w, atol=MERGE_ATOL):
    """Sort atoms by (x, c) and merge runs whose costs differ by at most ``atol``."""
    order = np.lexsort((c, x))
    x, c, w = x[order], c[order], w[order]
    if x.size == 0:
        return AtomMeasure(x, c, w)
    new_group = np.ones(x.size, dtype=bool)
    new_group[1:] = (x[1:] != x[:-1]) | (np.diff(c) > atol)
    starts = np.flatnonzero(new_group)
    return AtomMeasure(x[starts], c[starts], np.add.reduceat(w, starts))


def initial_atoms(model):
    """``mu0`` paired with zero accumulated cost; zero-weight states dropped."""
    xs = np.flatnonzero(model.mu0 > 0)
    return AtomMeasure(xs, np.zeros(xs.size), model.mu0[xs].copy())


def augmented_step(model, atoms, mu_t, pi_t, t, cap=DEFAULT_ATOM_CAP):
    """Push an atom measure through one transition at stage ``t``."""
    P = model.kernels(mu_t)
    C = model.costs(mu_t)
    disc = model.beta ** t
    # (atom, action, next state)
    w = atoms.w[:, None, None] * pi_t[atoms.x][:, :, None] * P[atoms.x]
    c = atoms.c[:, None] + disc * C[atoms.x]
    keep = w > 0
    ai, aa, ay = np.nonzero(keep)
    if ai.size > cap:
        raise AtomCapError(t + 1, int(ai.size), cap)
    return merge_atoms(ay, c[ai, aa], w[keep])


def augmented_flow(model, flow, pi, n, cap=DEFAULT_ATOM_CAP):
    """Exact laws of (x_t, accumulated cost) for t = 0..n+1."""
    if len(flow) < n + 1 or len(pi) < n + 1:
        raise ValueError(f"flow and policy need {n + 1} stages")
    out = [initial_atoms(model)]
    for t in range(n + 1):
        out.append(augmented_step(model, out[-1], flow.mus[t], pi.pis[t], t, cap))
    return out


def augmented_evaluate(model, flow, pi, n, cap=DEFAULT_ATOM_CAP):
    """``E[exp(lam * sum_{t<=n} beta^t c_t)]`` read off the terminal atoms."""
    last = augmented_flow(model, flow, pi, n, cap)[-1]
    # dividing by the total mass removes rounding drift in the weights
    return float(last.w @ np.exp(model.lam * last.c) / last.w.sum())
