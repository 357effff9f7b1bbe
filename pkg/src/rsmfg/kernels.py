"""Inner loop of the N-agent Monte-Carlo simulation.

Two interchangeable implementations consume the same pre-drawn uniforms:
a numba kernel looping over agents, and a numpy kernel vectorized over
(replication, agent).  Both perform the same floating-point operations in
the same order, so they return identical arrays.

Sampling is by inverse CDF: the draw for uniform ``u`` and cumulative row
``cum`` is the number of entries of ``cum[:-1]`` that are ``<= u``.
"""

import numpy as np

from ._accel import HAVE_NUMBA, default_backend, njit

if HAVE_NUMBA:
    from numba import prange
else:  # pragma: no cover
    prange = range


@njit(cache=True, inline="always")
def _draw(cum, u):
    j = 0
    last = cum.shape[0] - 1
    while j < last and u >= cum[j]:
        j += 1
    return j


@njit(cache=True, parallel=True)
def _batch_numba(u0, ua, uy, mu0_cum, pol_cum, dev_cum, has_dev, kmix, cmix, disc):
    B, N = u0.shape
    T1 = ua.shape[1]
    nx = mu0_cum.shape[0]
    na = pol_cum.shape[2]
    acc = np.zeros((B, N))
    counts = np.zeros((B, T1, nx), dtype=np.int64)
    for b in prange(B):
        x = np.empty(N, dtype=np.int64)
        e = np.empty(nx)
        cost = np.empty((nx, na))
        cum = np.empty((nx, na, nx))
        for i in range(N):
            x[i] = _draw(mu0_cum, u0[b, i])
        for t in range(T1):
            for i in range(N):
                counts[b, t, x[i]] += 1
            for z in range(nx):
                e[z] = counts[b, t, z] / N
            for s in range(nx):
                for a in range(na):
                    c = 0.0
                    for z in range(nx):
                        c += e[z] * cmix[s, a, z]
                    cost[s, a] = c
            moving = t < T1 - 1
            if moving:
                for s in range(nx):
                    for a in range(na):
                        run = 0.0
                        for y in range(nx):
                            p = 0.0
                            for z in range(nx):
                                p += e[z] * kmix[z, s, a, y]
                            run += p
                            cum[s, a, y] = run
            for i in range(N):
                if has_dev and i == 0:
                    a = _draw(dev_cum[t, x[i]], ua[b, t, i])
                else:
                    a = _draw(pol_cum[t, x[i]], ua[b, t, i])
                acc[b, i] += disc[t] * cost[x[i], a]
                if moving:
                    x[i] = _draw(cum[x[i], a], uy[b, t, i])
    return acc, counts


def _draw_np(cum, u):
    return (u[..., None] >= cum[..., :-1]).sum(axis=-1)


def _batch_numpy(u0, ua, uy, mu0_cum, pol_cum, dev_cum, has_dev, kmix, cmix, disc):
    B, N = u0.shape
    T1 = ua.shape[1]
    nx = mu0_cum.shape[0]
    na = pol_cum.shape[2]
    acc = np.zeros((B, N))
    counts = np.zeros((B, T1, nx), dtype=np.int64)
    rows = np.arange(B)[:, None]
    x = _draw_np(mu0_cum, u0)
    states = np.arange(nx)
    for t in range(T1):
        counts[:, t] = (x[:, :, None] == states).sum(axis=1)
        e = counts[:, t] / N
        cost = np.zeros((B, nx, na))
        for z in range(nx):
            cost = cost + e[:, z, None, None] * cmix[None, :, :, z]
        pc = pol_cum[t][x]
        if has_dev:
            pc[:, 0] = dev_cum[t][x[:, 0]]
        a = _draw_np(pc, ua[:, t])
        acc = acc + disc[t] * cost[rows, x, a]
        if t < T1 - 1:
            P = np.zeros((B, nx, na, nx))
            for z in range(nx):
                P = P + e[:, z, None, None, None] * kmix[None, z]
            cum = np.cumsum(P, axis=-1)
            x = _draw_np(cum[rows, x, a], uy[:, t])
    return acc, counts


def run_batch(u0, ua, uy, mu0_cum, pol_cum, dev_cum, has_dev, kmix, cmix, disc,
              backend=None):
    """Simulate a batch of replications.

    Parameters
    ----------
    u0 : (B, N) uniforms for initial states.
    ua : (B, n+1, N) uniforms for actions.
    uy : (B, n, N) uniforms for transitions.
    pol_cum, dev_cum : (n+1, nx, na) cumulative action probabilities of the
        shared and the deviating policy (agent 0 uses ``dev_cum`` if
        ``has_dev``).

    Returns
    -------
    acc : (B, N) discounted cost sums ``sum_t beta^t c_t``.
    counts : (B, n+1, nx) state occupation counts.
    """
    backend = backend or default_backend()
    args = (u0, ua, uy, mu0_cum, pol_cum, dev_cum, bool(has_dev),
            np.ascontiguousarray(kmix), np.ascontiguousarray(cmix), disc)
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is unavailable")
        return _batch_numba(*args)
    if backend == "numpy":
        return _batch_numpy(*args)
    raise ValueError(f"unknown backend {backend!r}")
