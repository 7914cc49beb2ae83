"""Gaussian mixture machinery with weights held fixed at 1/K.

One component per class. Parameters are estimated from soft
responsibilities only (no hard assignment anywhere): means and
covariances are responsibility-weighted moments, with a constant ridge
added to every covariance diagonal. Posteriors are softmaxes over log
densities; the uniform weights cancel.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .exceptions import DegenerateInputError, ShapeError, SingularCovarianceError

logger = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)
_EMPTY_COMPONENT_MASS = 1e-8


@dataclass(frozen=True)
class GmmConfig:
    """Knobs for mixture estimation.

    reg_eps None means data-dependent: 1e-6 times the mean per-dimension
    feature variance (with a tiny absolute floor for constant data).
    """

    cov_mode: str = "full"  # {"full", "diag"}
    reg_eps: float | None = None
    l2_normalize: bool = False

    def __post_init__(self) -> None:
        if self.cov_mode not in ("full", "diag"):
            raise ValueError(f"cov_mode must be 'full' or 'diag', got {self.cov_mode!r}")
        if self.reg_eps is not None and self.reg_eps < 0:
            raise ValueError("reg_eps must be >= 0")


@dataclass(frozen=True)
class GmmParams:
    """K component means and covariances; weights are implicitly 1/K.

    covs has shape (K, d, d) in full mode, (K, d) variances in diag mode.
    """

    means: np.ndarray
    covs: np.ndarray
    cov_mode: str
    reg_eps: float

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def resolve_reg_eps(X: np.ndarray, reg_eps: float | None) -> float:
    if reg_eps is not None:
        return float(reg_eps)
    mean_var = float(np.mean(np.var(X, axis=0)))
    return 1e-6 * mean_var if mean_var > 0 else 1e-12


def l2_normalize_rows(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    if np.any(norms <= 0):
        bad = int(np.argmin(norms[:, 0]))
        raise DegenerateInputError(f"feature row {bad} has zero norm")
    return X / norms


def _check_inputs(X: np.ndarray, R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    if X.ndim != 2 or R.ndim != 2:
        raise ShapeError(f"expected 2-D arrays, got {X.shape} and {R.shape}")
    if X.shape[0] != R.shape[0]:
        raise ShapeError(f"{X.shape[0]} feature rows vs {R.shape[0]} responsibility rows")
    if np.any(R < 0):
        raise ShapeError("responsibilities must be nonnegative")
    return X, R


def m_step(
    X: np.ndarray,
    Z: np.ndarray,
    cov_mode: str = "full",
    reg_eps: float | None = None,
) -> GmmParams:
    """Weighted-moment re-estimation from soft responsibilities.

    A component whose total responsibility falls below 1e-8 is reset to
    the global mean and covariance instead of producing 0/0 garbage; the
    reset is logged, not raised.
    """
    X, Z = _check_inputs(X, Z)
    n, d = X.shape
    k = Z.shape[1]
    eps = resolve_reg_eps(X, reg_eps)

    mass = Z.sum(axis=0)
    empty = mass < _EMPTY_COMPONENT_MASS
    safe_mass = np.where(empty, 1.0, mass)
    means = (Z.T @ X) / safe_mass[:, None]

    global_mean = X.mean(axis=0)
    if np.any(empty):
        for idx in np.nonzero(empty)[0]:
            logger.warning(
                "component %d responsibility mass %.3g below %.0e; reset to global moments",
                idx,
                mass[idx],
                _EMPTY_COMPONENT_MASS,
            )
        means[empty] = global_mean

    if cov_mode == "full":
        covs = np.empty((k, d, d))
        for j in range(k):
            diff = X - means[j]
            if empty[j]:
                cov = (diff.T @ diff) / n
            else:
                cov = (diff.T @ (diff * Z[:, j : j + 1])) / mass[j]
            cov = 0.5 * (cov + cov.T)
            cov[np.diag_indices(d)] += eps
            covs[j] = cov
    else:
        covs = np.empty((k, d))
        for j in range(k):
            sq = (X - means[j]) ** 2
            if empty[j]:
                covs[j] = sq.mean(axis=0) + eps
            else:
                covs[j] = (Z[:, j] @ sq) / mass[j] + eps
    return GmmParams(means, covs, cov_mode, eps)


def init_from_prior(
    X: np.ndarray,
    P: np.ndarray,
    cov_mode: str = "full",
    reg_eps: float | None = None,
) -> GmmParams:
    """Initial parameters with the prior as the starting responsibilities.

    Identical formula to :func:`m_step` with Z = P.
    """
    return m_step(X, P, cov_mode=cov_mode, reg_eps=reg_eps)


def log_density(X: np.ndarray, params: GmmParams) -> np.ndarray:
    """(N, K) log N(x_i | mu_k, Sigma_k); full mode goes through Cholesky."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.dim:
        raise ShapeError(f"features {X.shape} incompatible with dim {params.dim}")
    n, d = X.shape
    k = params.n_components
    out = np.empty((n, k))
    if params.cov_mode == "full":
        for j in range(k):
            try:
                chol = np.linalg.cholesky(params.covs[j])
            except np.linalg.LinAlgError as exc:
                raise SingularCovarianceError(
                    f"component {j} covariance not positive definite "
                    f"(reg_eps={params.reg_eps:.3g})"
                ) from exc
            half_log_det = np.log(np.diag(chol)).sum()
            sol = solve_triangular(chol, (X - params.means[j]).T, lower=True)
            maha = np.einsum("ij,ij->j", sol, sol)
            out[:, j] = -0.5 * (d * _LOG_2PI + maha) - half_log_det
    else:
        if np.any(params.covs <= 0):
            raise SingularCovarianceError("diag covariance has a non-positive variance")
        for j in range(k):
            var = params.covs[j]
            maha = (((X - params.means[j]) ** 2) / var).sum(axis=1)
            out[:, j] = -0.5 * (d * _LOG_2PI + np.log(var).sum() + maha)
    return out


def e_step(X: np.ndarray, params: GmmParams) -> np.ndarray:
    """Posterior over components: row softmax of the log densities."""
    ld = log_density(X, params)
    Q = np.exp(ld - logsumexp(ld, axis=1, keepdims=True))
    Q /= Q.sum(axis=1, keepdims=True)
    return Q
