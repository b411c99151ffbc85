"""Separable Gaussian-kernel GP with a severity-indexed nugget.

Training rows carry a severity label in {-1, 0, +1} as their last input; the
label selects which of the three nuggets sits on the diagonal of the
correlation matrix. Prediction rows may carry any real value in that column
(the latent severity) and take their predictive nugget from an explicitly
named regime.
"""

from __future__ import annotations

import hashlib
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, eigh, solve_triangular

log = logging.getLogger(__name__)

REGIMES = (-1, 0, 1)
JITTER_START = 1e-8
JITTER_MAX = 1e-4
MODEL_FORMAT = "hetgp-model/1"


class NumericalError(RuntimeError):
    """Covariance matrix could not be factorized or is not PSD."""


def kernel(x, xp, theta) -> float:
    """Separable Gaussian correlation ``exp(-sum_k (x_k - x'_k)^2 / theta_k)``."""
    x, xp, theta = (np.asarray(a, dtype=float) for a in (x, xp, theta))
    return float(np.exp(-np.sum((x - xp) ** 2 / theta)))


def sq_dist(X1, X2, theta) -> np.ndarray:
    """Lengthscale-weighted squared distances, shape (len(X1), len(X2))."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    s = 1.0 / np.sqrt(np.asarray(theta, dtype=float))
    A, B = X1 * s, X2 * s
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def correlation(X1, X2, theta) -> np.ndarray:
    """Kernel matrix between the rows of ``X1`` and ``X2``."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    # explicit differences keep exact zeros on repeated inputs
    if X1.shape[0] * X2.shape[0] * X1.shape[1] <= 4_000_000:
        diff = X1[:, None, :] - X2[None, :, :]
        return np.exp(-np.einsum("ijk,k->ij", diff * diff, 1.0 / np.asarray(theta, dtype=float)))
    return np.exp(-sq_dist(X1, X2, theta))


def regime_index(x4) -> np.ndarray:
    """Map severity labels {-1, 0, +1} to nugget indices {0, 1, 2}."""
    x4 = np.asarray(x4, dtype=float)
    idx = np.rint(x4).astype(int) + 1
    if np.any(np.abs(x4 - np.rint(x4)) > 0) or np.any((idx < 0) | (idx > 2)):
        raise ValueError("training severity labels must be in {-1, 0, +1}")
    return idx


def build_covariance(X, theta, eta) -> np.ndarray:
    """``C_n + Lambda_n`` with the nugget of each row chosen by its label."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    eta = np.asarray(eta, dtype=float)
    K = correlation(X, X, theta)
    K[np.diag_indices_from(K)] += eta[regime_index(X[:, -1])]
    return K


def factorize(K, jitter_start=JITTER_START, jitter_max=JITTER_MAX):
    """Lower Cholesky factor of ``K``, adding diagonal jitter only on failure.

    Returns:
        (L, jitter) where ``jitter`` is the amount added (0.0 if none).

    Raises:
        NumericalError: if the factorization fails at ``jitter_max``.
    """
    try:
        return cholesky(K, lower=True, check_finite=False), 0.0
    except LinAlgError:
        pass
    jitter = jitter_start
    eye = np.eye(K.shape[0])
    while jitter <= jitter_max * (1 + 1e-12):
        try:
            L = cholesky(K + jitter * eye, lower=True, check_finite=False)
            log.debug("cholesky needed jitter %.1e", jitter)
            return L, jitter
        except LinAlgError:
            jitter *= 10.0
    cond = np.linalg.cond(K)
    raise NumericalError(f"cholesky failed up to jitter {jitter_max:g}; cond(K) = {cond:.3e}")


@dataclass(frozen=True)
class HetGPModel:
    """Fitted hyperparameters plus the cached factorization of the training system.

    ``train_X`` is stored on the raw input scale; ``scale`` holds per-column
    divisors applied before every kernel evaluation.
    """

    theta: np.ndarray
    tau2: float
    eta: np.ndarray
    train_X: np.ndarray
    train_y: np.ndarray
    scale: np.ndarray
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    jitter: float = 0.0

    @classmethod
    def build(cls, theta, eta, X, y, scale=None, tau2=None) -> "HetGPModel":
        """Factorize the training system; ``tau2`` defaults to its closed-form MLE."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        theta = np.asarray(theta, dtype=float)
        eta = np.asarray(eta, dtype=float)
        scale = np.ones(X.shape[1]) if scale is None else np.asarray(scale, dtype=float)
        K = build_covariance(X / scale, theta, eta)
        L, jitter = factorize(K)
        alpha = cho_solve((L, True), y, check_finite=False)
        if tau2 is None:
            tau2 = float(y @ alpha) / y.size
        return cls(theta, float(tau2), eta, X, y, scale, L, alpha, jitter)

    @property
    def n(self) -> int:
        return self.train_y.size

    def scaled(self, X) -> np.ndarray:
        return np.atleast_2d(np.asarray(X, dtype=float)) / self.scale

    def covariance(self) -> np.ndarray:
        """The factorized matrix ``C_n + Lambda_n`` (including any jitter)."""
        return self.chol @ self.chol.T

    def with_training(self, X, y) -> "HetGPModel":
        """Same hyperparameters, refactorized on new training data."""
        return HetGPModel.build(self.theta, self.eta, X, y, self.scale, self.tau2)


@dataclass(frozen=True)
class PredictiveMVN:
    """Multivariate normal predictive distribution on the transformed scale."""

    mean: np.ndarray
    cov: np.ndarray

    def condition(self, observed, values) -> "PredictiveMVN":
        """Condition on ``values`` at positions ``observed``; returns the rest."""
        observed = np.asarray(observed, dtype=int)
        rest = np.setdiff1d(np.arange(self.mean.size), observed)
        if observed.size == 0:
            return PredictiveMVN(self.mean[rest], self.cov[np.ix_(rest, rest)])
        S_oo = self.cov[np.ix_(observed, observed)]
        S_ro = self.cov[np.ix_(rest, observed)]
        L, _ = factorize(S_oo)
        W = cho_solve((L, True), S_ro.T, check_finite=False).T
        resid = np.asarray(values, dtype=float) - self.mean[observed]
        mean = self.mean[rest] + W @ resid
        cov = self.cov[np.ix_(rest, rest)] - W @ S_ro.T
        return PredictiveMVN(mean, 0.5 * (cov + cov.T))


def _regime_eta(model: HetGPModel, regime) -> float:
    if regime not in REGIMES:
        raise ValueError(f"regime must be one of {REGIMES}, got {regime!r}")
    return float(model.eta[REGIMES.index(regime)])


def predict(model: HetGPModel, Xnew, latent_regime, include_nugget=True) -> PredictiveMVN:
    """Joint predictive distribution at ``Xnew``.

    The nugget of ``latent_regime`` is added to the predictive diagonal
    unless ``include_nugget`` is false (latent-mean forecasts).
    """
    eta_r = _regime_eta(model, latent_regime)
    Xs = model.scaled(Xnew)
    k = correlation(Xs, model.scaled(model.train_X), model.theta)
    mean = k @ model.alpha
    v = solve_triangular(model.chol, k.T, lower=True, check_finite=False)
    cov = correlation(Xs, Xs, model.theta) - v.T @ v
    if include_nugget:
        cov[np.diag_indices_from(cov)] += eta_r
    cov = model.tau2 * 0.5 * (cov + cov.T)
    d = np.diag(cov)
    tol = 1e-8 * model.tau2 * (1.0 + eta_r)
    if np.any(d < -tol):
        raise NumericalError(
            f"negative predictive variance {d.min():.3e}; jitter {model.jitter:g}, "
            f"cond(L) = {np.linalg.cond(model.chol):.3e}"
        )
    cov[np.diag_indices_from(cov)] = np.maximum(d, 0.0)
    return PredictiveMVN(mean, cov)


def _sampling_factor(cov) -> np.ndarray:
    try:
        return cholesky(cov, lower=True, check_finite=False)
    except LinAlgError:
        pass
    w, V = eigh(cov, check_finite=False)
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.min(initial=0.0) < -1e-8 * scale:
        raise NumericalError(f"predictive covariance not PSD: min eigenvalue {w.min():.3e}")
    return V * np.sqrt(np.clip(w, 0.0, None))


def sample_joint(p: PredictiveMVN, m: int, seed) -> np.ndarray:
    """``m`` joint draws from ``p`` as an ``(m, len(p.mean))`` array.

    ``seed`` is anything accepted by :func:`numpy.random.default_rng`.
    """
    mean = np.asarray(p.mean, dtype=float)
    if m <= 0:
        return np.empty((0, mean.size))
    if not np.any(p.cov):
        return np.tile(mean, (m, 1))
    F = _sampling_factor(np.asarray(p.cov, dtype=float))
    z = np.random.default_rng(seed).standard_normal((m, mean.size))
    return mean + z @ F.T


def mvn_logpdf(y, mean, cov) -> float:
    """Dense MVN log density via Cholesky; -inf if ``cov`` is singular."""
    y = np.asarray(y, dtype=float) - np.asarray(mean, dtype=float)
    try:
        L = cholesky(cov, lower=True, check_finite=False)
    except LinAlgError:
        warnings.warn("singular predictive covariance in log density", RuntimeWarning)
        return -math.inf
    z = solve_triangular(L, y, lower=True, check_finite=False)
    return float(-0.5 * y.size * math.log(2 * math.pi) - np.log(np.diag(L)).sum() - 0.5 * z @ z)


def pll(model: HetGPModel, Xnew, ynew, latent_regime) -> float:
    """Predictive log likelihood of ``ynew`` observed at ``Xnew``."""
    ynew = np.atleast_1d(np.asarray(ynew, dtype=float))
    if ynew.size == 0 or ynew.size != np.atleast_2d(Xnew).shape[0]:
        raise ValueError("ynew must have one value per row of Xnew (at least one)")
    p = predict(model, Xnew, latent_regime)
    return mvn_logpdf(ynew, p.mean, p.cov)


# -- model files -----------------------------------------------------------


def _floats(values) -> str:
    return ",".join(repr(float(v)) for v in np.ravel(values))


def data_checksum(X, y) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X, dtype=float).tobytes())
    h.update(np.ascontiguousarray(y, dtype=float).tobytes())
    return h.hexdigest()[:16]


def write_model_file(model: HetGPModel, path, reference: dict | None = None) -> None:
    """Write hyperparameters and a training-data reference as key=value lines."""
    lines = [
        f"format={MODEL_FORMAT}",
        f"theta={_floats(model.theta)}",
        f"tau2={model.tau2!r}",
        f"eta={_floats(model.eta)}",
        f"scale={_floats(model.scale)}",
        f"n_train={model.n}",
        f"checksum={data_checksum(model.train_X, model.train_y)}",
    ]
    for key, value in sorted((reference or {}).items()):
        if "=" in key or "\n" in str(value):
            raise ValueError(f"unserializable reference entry {key!r}")
        lines.append(f"ref.{key}={value}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_model_file(path) -> dict:
    """Parse a model file into a dict of arrays/scalars plus ``ref`` entries."""
    raw = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            raw[key.strip()] = value.strip()
    if raw.get("format") != MODEL_FORMAT:
        raise ValueError(f"unsupported model file format {raw.get('format')!r}")
    return {
        "theta": np.array([float(v) for v in raw["theta"].split(",")]),
        "tau2": float(raw["tau2"]),
        "eta": np.array([float(v) for v in raw["eta"].split(",")]),
        "scale": np.array([float(v) for v in raw["scale"].split(",")]),
        "n_train": int(raw["n_train"]),
        "checksum": raw["checksum"],
        "ref": {k[4:]: v for k, v in raw.items() if k.startswith("ref.")},
    }


def model_from_file(path, X, y) -> HetGPModel:
    """Rebuild a model from its file and the referenced training data."""
    spec = read_model_file(path)
    if data_checksum(X, y) != spec["checksum"]:
        raise ValueError("training data do not match the model file checksum")
    return HetGPModel.build(spec["theta"], spec["eta"], X, y, spec["scale"], spec["tau2"])
