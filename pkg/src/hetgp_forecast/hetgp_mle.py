"""Maximum-likelihood inference for the severity-indexed nugget GP.

The scale ``tau2`` is profiled out in closed form, leaving the concentrated
log likelihood over lengthscales and nuggets. Its gradient is analytic;
optimization runs L-BFGS-B on log parameters from several starts.

The public functions read the nugget group of each row from the last input
column (labels -1, 0, +1). :func:`fit_groups` and the ``_``-prefixed helpers
take explicit integer groups so the same machinery serves any number of
nugget groups, including one.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve
from scipy.optimize import minimize

from .gp_core import REGIMES, HetGPModel, correlation, factorize, regime_index

log = logging.getLogger(__name__)

LOG2PI = math.log(2 * math.pi)


@dataclass
class MleConfig:
    """Optimizer contract. Bounds apply to lengthscales on scaled inputs."""

    theta_bounds: list = None  # per-dimension (lo, hi); None -> (1e-2, 1e4) each
    eta_bounds: tuple = (1e-6, 1e2)
    init: dict | None = None  # optional {"theta": [...], "eta": [...]}
    multistarts: int = 4  # additional jittered starts
    gtol: float = 1e-6
    ftol: float = 1e-9
    max_iters: int = 200
    seed: int = 0
    input_scale: tuple | None = None

    def __post_init__(self):
        lo, hi = self.eta_bounds
        if not 0 < lo < hi:
            raise ValueError("eta bounds must satisfy 0 < lo < hi")
        for lo, hi in self.theta_bounds or ():
            if not 0 < lo < hi:
                raise ValueError("theta bounds must satisfy 0 < lo < hi")


@dataclass
class MleResult:
    model: HetGPModel
    loglik: float
    converged: bool
    iterations: int
    grad_norm: float
    objective_change: float = math.inf
    history: list = field(default_factory=list, repr=False)


@dataclass
class _Solve:
    """Everything derived from one factorization of ``C + Lambda``."""

    C: np.ndarray
    L: np.ndarray
    alpha: np.ndarray
    quad: float
    logdet: float


def _solve(theta, lam, X, y) -> _Solve:
    C = correlation(X, X, theta)
    K = C.copy()
    K[np.diag_indices_from(K)] += lam
    L, _ = factorize(K)
    alpha = cho_solve((L, True), y, check_finite=False)
    return _Solve(C, L, alpha, float(y @ alpha), 2.0 * float(np.log(np.diag(L)).sum()))


def _groups(X):
    return regime_index(np.atleast_2d(np.asarray(X, dtype=float))[:, -1])


def _prep(theta, eta, X, y, groups=None):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    groups = _groups(X) if groups is None else np.asarray(groups, dtype=int)
    lam = np.asarray(eta, dtype=float)[groups]
    return np.asarray(theta, dtype=float), lam, X, y, groups


def log_likelihood(theta, tau2, eta, X, y) -> float:
    """Zero-mean GP log likelihood with covariance ``tau2 * (C + Lambda)``."""
    theta, lam, X, y, _ = _prep(theta, eta, X, y)
    s = _solve(theta, lam, X, y)
    n = y.size
    return -0.5 * n * LOG2PI - 0.5 * n * math.log(tau2) - 0.5 * s.logdet - s.quad / (2.0 * tau2)


def tau2_hat(theta, eta, X, y) -> float:
    """Closed-form MLE of the scale: ``y' (C + Lambda)^-1 y / n``."""
    theta, lam, X, y, _ = _prep(theta, eta, X, y)
    if not np.any(y):
        warnings.warn("all-zero response: tau2 estimate is degenerate", RuntimeWarning)
        return 0.0
    return _solve(theta, lam, X, y).quad / y.size


def _concentrated(s: _Solve, n: int) -> float:
    if s.quad <= 0:
        return -math.inf
    return -0.5 * n * (LOG2PI + 1.0 - math.log(n)) - 0.5 * n * math.log(s.quad) - 0.5 * s.logdet


def concentrated_loglik(theta, eta, X, y) -> float:
    """Log likelihood with ``tau2`` replaced by its MLE."""
    theta, lam, X, y, _ = _prep(theta, eta, X, y)
    s = _solve(theta, lam, X, y)
    return _concentrated(s, y.size)


def _gradient(theta, lam, X, y, groups, n_groups, s: _Solve | None = None):
    n = y.size
    if s is None:
        s = _solve(theta, lam, X, y)
    Kinv = cho_solve((s.L, True), np.eye(n), check_finite=False)
    a = s.alpha
    g_theta = np.empty(theta.size)
    for k in range(theta.size):
        d = X[:, k][:, None] - X[:, k][None, :]
        Cdot = s.C * (d * d) / theta[k] ** 2
        g_theta[k] = 0.5 * n * (a @ Cdot @ a) / s.quad - 0.5 * np.sum(Kinv * Cdot)
    # each nugget only touches its own rows: use alpha and diag(Kinv) on that subset
    kdiag = np.diag(Kinv)
    g_eta = np.zeros(n_groups)
    for g in range(n_groups):
        rows = groups == g
        if rows.any():
            g_eta[g] = 0.5 * n * np.sum(a[rows] ** 2) / s.quad - 0.5 * np.sum(kdiag[rows])
    return g_theta, g_eta


def gradient(theta, eta, X, y) -> np.ndarray:
    """Gradient of the concentrated log likelihood.

    Returns the lengthscale derivatives followed by one derivative per nugget
    (eta_-1, eta_0, eta_+1). A nugget with no training rows gets exactly 0.
    """
    theta, lam, X, y, groups = _prep(theta, eta, X, y)
    g_theta, g_eta = _gradient(theta, lam, X, y, groups, np.asarray(eta).size)
    return np.concatenate([g_theta, g_eta])


def scalar_nugget_gradient(theta, eta, X, y) -> float:
    """Derivative in a single shared nugget (all rows, identity selector)."""
    theta, _, X, y, _ = _prep(theta, [eta], X, y, np.zeros(len(y), dtype=int))
    lam = np.full(y.size, float(eta))
    s = _solve(theta, lam, X, y)
    Kinv = cho_solve((s.L, True), np.eye(y.size), check_finite=False)
    return 0.5 * y.size * float(s.alpha @ s.alpha) / s.quad - 0.5 * float(np.trace(Kinv))


@dataclass
class GroupFit:
    theta: np.ndarray
    eta: np.ndarray
    tau2: float
    alpha: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    grad_norm: float
    objective_change: float
    history: list


def _default_theta_bounds(d, config):
    if config.theta_bounds is None:
        return [(1e-2, 1e4)] * d
    if len(config.theta_bounds) != d:
        raise ValueError(f"need {d} theta bounds, got {len(config.theta_bounds)}")
    return list(config.theta_bounds)


def _projected_grad_norm(p, g, lo, hi) -> float:
    # gradient of the minimized objective; components pushing out of the box vanish
    pg = g.copy()
    pg[(p <= lo + 1e-12) & (g > 0)] = 0.0
    pg[(p >= hi - 1e-12) & (g < 0)] = 0.0
    return float(np.abs(pg).max(initial=0.0))


def fit_groups(X, y, groups, n_groups, config: MleConfig | None = None) -> GroupFit:
    """Maximize the concentrated likelihood with nugget per integer group.

    ``X`` must already be on the scale the lengthscales refer to.
    """
    config = config or MleConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    groups = np.asarray(groups, dtype=int)
    n, d = X.shape
    present = np.array([np.any(groups == g) for g in range(n_groups)])
    free = np.flatnonzero(present)

    tb = np.log(np.array(_default_theta_bounds(d, config), dtype=float))
    eb = np.log(np.array(config.eta_bounds, dtype=float))
    lo = np.concatenate([tb[:, 0], np.full(free.size, eb[0])])
    hi = np.concatenate([tb[:, 1], np.full(free.size, eb[1])])

    def unpack(p):
        theta = np.exp(p[:d])
        eta = np.ones(n_groups)
        eta[free] = np.exp(p[d:])
        if (~present).any():
            eta[~present] = math.exp(p[d:].mean()) if free.size else 1.0
        return theta, eta

    cache = {}

    def objective(p):
        key = p.tobytes()
        if key not in cache:
            theta, eta = unpack(p)
            lam = eta[groups]
            try:
                s = _solve(theta, lam, X, y)
            except Exception:  # numerical failure: steer the optimizer away
                cache.clear()
                cache[key] = (1e300, np.zeros_like(p))
                return cache[key]
            ll = _concentrated(s, n)
            g_theta, g_eta = _gradient(theta, lam, X, y, groups, n_groups, s)
            # chain rule to log parameters; minimize the negative
            grad = -np.concatenate([g_theta * theta, g_eta[free] * eta[free]])
            cache.clear()
            cache[key] = (-ll, grad)
        return cache[key]

    if config.init is not None:
        theta0 = np.asarray(config.init["theta"], dtype=float)
        eta0 = np.broadcast_to(np.asarray(config.init["eta"], dtype=float), (n_groups,))[free]
    else:
        ranges = X.max(0) - X.min(0)
        theta0 = 0.5 * np.where(ranges > 0, ranges, 1.0) ** 2
        eta0 = np.full(free.size, 0.1 * max(float(np.var(y)), 1e-12))
    p0 = np.clip(np.log(np.concatenate([theta0, eta0])), lo, hi)

    rng = np.random.default_rng(config.seed)
    starts = [p0]
    for _ in range(config.multistarts):
        jitter = rng.uniform(math.log(0.1), math.log(10.0), size=p0.size)
        starts.append(np.clip(p0 + jitter, lo, hi))

    best = None
    for p_start in starts:
        history = [-objective(p_start)[0]]
        res = minimize(
            objective,
            p_start,
            jac=True,
            method="L-BFGS-B",
            bounds=list(zip(lo, hi)),
            callback=lambda pk: history.append(-objective(pk)[0]),
            options={"maxiter": config.max_iters, "gtol": config.gtol, "ftol": config.ftol},
        )
        f, g = objective(res.x)
        gnorm = _projected_grad_norm(res.x, g, lo, hi)
        change = abs(history[-1] - history[-2]) / max(abs(history[-1]), abs(history[-2]), 1.0) if len(history) > 1 else math.inf
        converged = bool(res.success) and (gnorm <= config.gtol or change <= config.ftol)
        log.debug("start %s: ll=%.6g nit=%d gnorm=%.2e", p_start, -f, res.nit, gnorm)
        cand = (-f, res.x, converged, int(res.nit), gnorm, change, history)
        if best is None or cand[0] > best[0]:
            best = cand

    ll, p, converged, nit, gnorm, change, history = best
    if not converged:
        warnings.warn("no multistart met the convergence tolerances", RuntimeWarning)
    theta, eta = unpack(p)
    s = _solve(theta, eta[groups], X, y)
    return GroupFit(theta, eta, s.quad / n, s.alpha, ll, converged, nit, gnorm, change, history)


def fit(X, y, config: MleConfig | None = None) -> MleResult:
    """Fit lengthscales and the three severity nuggets by maximum likelihood.

    ``X`` is on the raw input scale; ``config.input_scale`` divisors are
    applied before fitting and stored on the returned model.
    """
    config = config or MleConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if y.size < 8:
        raise ValueError("need at least 8 training rows")
    scale = np.ones(X.shape[1]) if config.input_scale is None else np.asarray(config.input_scale, float)
    gf = fit_groups(X / scale, y, _groups(X), len(REGIMES), config)
    model = HetGPModel.build(gf.theta, gf.eta, X, y, scale, gf.tau2)
    return MleResult(model, gf.loglik, gf.converged, gf.iterations, gf.grad_norm,
                     gf.objective_change, gf.history)
