"""Finite mean-field game primitives.

The population couples into each agent through mixtures: for a state
distribution ``mu`` the transition kernel and the one-stage cost are

    p(y | x, a, mu) = sum_z mu[z] * kernel_mix[z, x, a, y]
    c(x, a, mu)     = sum_z mu[z] * cost_mix[x, a, z]

Distributions are plain 1-D float arrays; :func:`check_dist` validates them.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

LOAD_TOL = 1e-9
DRIFT_TOL = 1e-12
OVERFLOW_EXPONENT = 500.0


class ModelError(ValueError):
    """Raised when a model file cannot be parsed or fails validation."""

    def __init__(self, message, path=None):
        self.path = path
        if path is not None:
            message = f"{message} at {path}"
        super().__init__(message)


class CapExceededError(RuntimeError):
    """An exact enumeration would exceed its configured size cap."""


def check_dist(weights, tol=LOAD_TOL, name="distribution"):
    """Validate a probability vector and return it renormalized.

    Raises :class:`ModelError` on negative weights or a sum off by more
    than ``tol``.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ModelError(f"{name} must be a non-empty vector")
    if not np.all(np.isfinite(w)):
        raise ModelError(f"{name} has non-finite entries")
    if np.any(w < 0):
        raise ModelError(f"{name} has negative entries", [int(np.argmin(w))])
    s = w.sum()
    if abs(s - 1.0) > tol:
        raise ModelError(f"{name} sums to {float(s)!r}, not 1")
    return w / s


def normalize_rows(arr):
    """Renormalize the last axis to sum to one (removes arithmetic drift)."""
    arr = np.maximum(arr, 0.0)
    return arr / arr.sum(axis=-1, keepdims=True)


def tv_distance(p, q, axis=-1):
    """Total variation distance ``0.5 * sum |p - q|`` along ``axis``.

    Pass a tuple of axes for distributions over product sets.
    """
    d = np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float))
    return 0.5 * d.sum(axis=axis)


@dataclass(frozen=True, eq=False)
class MfgModel:
    """Finite mean-field game with mixture coupling.

    Attributes
    ----------
    beta : float
        Discount factor in (0, 1).
    lam : float
        Risk factor (> 0).
    mu0 : ndarray, shape (nx,)
        Initial state distribution.
    kernel_mix : ndarray, shape (nx, nx, na, nx)
        ``kernel_mix[z, x, a]`` is the next-state distribution used when the
        population sits entirely in state ``z``.
    cost_mix : ndarray, shape (nx, na, nx)
        ``cost_mix[x, a, z]`` is the one-stage cost against a Dirac at ``z``.
    cost_bound : float
        Upper bound ``K`` on every cost entry.
    """

    beta: float
    lam: float
    mu0: np.ndarray
    kernel_mix: np.ndarray
    cost_mix: np.ndarray
    cost_bound: float

    def __post_init__(self):
        for name in ("mu0", "kernel_mix", "cost_mix"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def nx(self):
        return self.mu0.shape[0]

    @property
    def na(self):
        return self.cost_mix.shape[1]

    @property
    def risk_exponent(self):
        """``lam * K / (1 - beta)``, the log of the largest possible value."""
        return self.lam * self.cost_bound / (1.0 - self.beta)

    def kernels(self, mu):
        """Mixed kernel ``p(.|x, a, mu)`` for every (x, a); shape (nx, na, nx)."""
        mu = np.asarray(mu, dtype=float)
        return np.tensordot(mu, self.kernel_mix, axes=(0, 0))

    def costs(self, mu):
        """Mixed cost ``c(x, a, mu)`` for every (x, a); shape (nx, na)."""
        return self.cost_mix @ np.asarray(mu, dtype=float)

    def to_dict(self):
        return {
            "num_states": self.nx,
            "num_actions": self.na,
            "beta": self.beta,
            "lambda": self.lam,
            "mu0": self.mu0.tolist(),
            "kernel_mix": self.kernel_mix.tolist(),
            "cost_mix": self.cost_mix.tolist(),
            "cost_bound": self.cost_bound,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")


def validate_model(data):
    """Build an :class:`MfgModel` from a parsed JSON mapping.

    Every failing check names the offending index path, e.g.
    ``kernel_mix[1][0][1]``.
    """
    if not isinstance(data, dict):
        raise ModelError("model file must hold a JSON object")
    required = ("num_states", "num_actions", "beta", "lambda", "mu0",
                "kernel_mix", "cost_mix")
    for key in required:
        if key not in data:
            raise ModelError(f"missing key {key!r}")

    nx, na = data["num_states"], data["num_actions"]
    if not (isinstance(nx, int) and nx >= 1):
        raise ModelError("num_states must be a positive integer")
    if not (isinstance(na, int) and na >= 1):
        raise ModelError("num_actions must be a positive integer")

    beta = float(data["beta"])
    if not 0.0 < beta < 1.0:
        raise ModelError(f"beta must lie in open interval (0, 1), got {beta}")
    lam = float(data["lambda"])
    if not lam > 0.0:
        raise ModelError(f"lambda must be positive, got {lam}")

    try:
        mu0 = np.array(data["mu0"], dtype=float)
        kmix = np.array(data["kernel_mix"], dtype=float)
        cmix = np.array(data["cost_mix"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelError(f"ragged or non-numeric array: {exc}") from exc

    if mu0.shape != (nx,):
        raise ModelError(f"mu0 must have shape ({nx},), got {mu0.shape}")
    if kmix.shape != (nx, nx, na, nx):
        raise ModelError(
            f"kernel_mix must have shape ({nx}, {nx}, {na}, {nx}), got {kmix.shape}")
    if cmix.shape != (nx, na, nx):
        raise ModelError(f"cost_mix must have shape ({nx}, {na}, {nx}), got {cmix.shape}")

    mu0 = check_dist(mu0, name="mu0")

    bad = np.argwhere(kmix < 0)
    if bad.size:
        z, x, a, y = bad[0]
        raise ModelError("kernel_mix has a negative entry", f"kernel_mix[{z}][{x}][{a}][{y}]")
    sums = kmix.sum(axis=-1)
    bad = np.argwhere(np.abs(sums - 1.0) > LOAD_TOL)
    if bad.size:
        z, x, a = bad[0]
        raise ModelError(
            f"kernel_mix row sums to {float(sums[z, x, a])!r}", f"kernel_mix[{z}][{x}][{a}]")
    kmix = kmix / sums[..., None]

    bad = np.argwhere(~np.isfinite(cmix) | (cmix < 0))
    if bad.size:
        x, a, z = bad[0]
        raise ModelError("cost_mix entries must be finite and >= 0",
                         f"cost_mix[{x}][{a}][{z}]")
    cmax = float(cmix.max())
    bound = data.get("cost_bound")
    if bound is None:
        bound = cmax
    bound = float(bound)
    if bound < cmax:
        x, a, z = np.unravel_index(int(np.argmax(cmix)), cmix.shape)
        raise ModelError(f"cost_bound {bound} is below cost entry {cmax}",
                         f"cost_mix[{x}][{a}][{z}]")

    model = MfgModel(beta=beta, lam=lam, mu0=mu0, kernel_mix=kmix,
                     cost_mix=cmix, cost_bound=bound)
    if model.risk_exponent > OVERFLOW_EXPONENT:
        logger.warning("lambda*K/(1-beta) = %.1f exceeds %.0f; value recursions "
                       "will run in log space", model.risk_exponent, OVERFLOW_EXPONENT)
    return model


def load_model(path):
    """Read and validate a model file."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"cannot parse {path}: {exc}") from exc
    return validate_model(data)


def _check_index(model, x, a):
    if not 0 <= x < model.nx:
        raise IndexError(f"state {x} out of range [0, {model.nx})")
    if not 0 <= a < model.na:
        raise IndexError(f"action {a} out of range [0, {model.na})")


def kernel_at(model, x, a, mu):
    """Next-state distribution ``p(.|x, a, mu)``."""
    _check_index(model, x, a)
    mu = np.asarray(mu, dtype=float)
    return mu @ model.kernel_mix[:, x, a, :]


def cost_at(model, x, a, mu):
    """One-stage cost ``c(x, a, mu)``."""
    _check_index(model, x, a)
    return float(model.cost_mix[x, a] @ np.asarray(mu, dtype=float))


def lipschitz_constants(model):
    """Lipschitz constants of the kernel and cost in ``mu`` under total variation.

    Because both maps are affine in ``mu``, the worst case is attained between
    two Dirac measures, so the constants are maxima over component pairs.
    """
    K = model.kernel_mix
    # pairwise TV between components: (z, z', x, a)
    diff = 0.5 * np.abs(K[:, None] - K[None, :]).sum(axis=-1)
    Lp = float(diff.max())
    C = model.cost_mix
    Lc = float((C.max(axis=-1) - C.min(axis=-1)).max())
    return Lp, Lc


def random_model(rng, nx, na, beta=0.7, lam=1.0, coupling=1.0, concentration=1.0):
    """Draw a random model whose coupling strength is at most ``coupling``.

    Components are ``(1 - coupling) * base + coupling * noise`` so that both
    Lipschitz constants are bounded by ``coupling`` (costs lie in [0, 1]).
    """
    base_k = rng.dirichlet(np.full(nx, concentration), size=(nx, na))
    noise_k = rng.dirichlet(np.full(nx, concentration), size=(nx, nx, na))
    kmix = (1.0 - coupling) * base_k[None] + coupling * noise_k
    base_c = rng.uniform(0.0, 1.0, size=(nx, na, 1))
    noise_c = rng.uniform(0.0, 1.0, size=(nx, na, nx))
    cmix = (1.0 - coupling) * base_c + coupling * noise_c
    mu0 = rng.dirichlet(np.ones(nx))
    return MfgModel(beta=beta, lam=lam, mu0=mu0, kernel_mix=normalize_rows(kmix),
                    cost_mix=cmix, cost_bound=float(cmix.max()))


def decoupled_model(model):
    """Copy of ``model`` whose kernel and cost ignore the population."""
    kmix = np.broadcast_to(model.kernel_mix[:1], model.kernel_mix.shape)
    cmix = np.broadcast_to(model.cost_mix[..., :1], model.cost_mix.shape)
    return MfgModel(beta=model.beta, lam=model.lam, mu0=model.mu0, kernel_mix=kmix,
                    cost_mix=cmix, cost_bound=float(cmix.max()))


def fingerprint(path):
    """Hex sha256 of a file's bytes."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def exp_bound(model, k, n):
    """``exp(lam * K * sum_{t=k}^{n} beta^t)``; upper bound on ``J_k^n``."""
    zeta = sum(model.beta ** t for t in range(k, n + 1))
    return math.exp(model.lam * model.cost_bound * zeta)
