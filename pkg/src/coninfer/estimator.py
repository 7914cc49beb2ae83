"""scikit-learn style front door for the calibration engine."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import consensus, gmm
from .prior import PriorConfig, TextPrototypes, encode_prior, validate_prob_rows

_MODES = ("joint", "decoupled", "prior-only")


class ConsensusCalibrator(BaseEstimator):
    """Calibrate per-row class probabilities against feature structure.

    Transductive: ``fit(X, priors)`` solves for the calibrated
    distribution of exactly those rows; there is no out-of-sample
    predict. After fitting::

        consensus_     (N, C) calibrated probabilities
        means_         (C, d) mixture means (None in prior-only mode)
        covariances_   (C, d, d) or (C, d) depending on cov_mode
        trace_         per-iteration objective values

    Parameters mirror the solver: `n_iter` alternating iterations,
    `mode` in {"joint", "decoupled", "prior-only"}, covariance handling
    via `cov_mode`/`reg_eps`/`l2_normalize`.
    """

    def __init__(
        self,
        n_iter: int = 10,
        mode: str = "joint",
        cov_mode: str = "full",
        reg_eps: float | None = None,
        l2_normalize: bool = False,
        log_clamp: float = 1e-12,
        early_stop_tol: float = 0.0,
    ):
        self.n_iter = n_iter
        self.mode = mode
        self.cov_mode = cov_mode
        self.reg_eps = reg_eps
        self.l2_normalize = l2_normalize
        self.log_clamp = log_clamp
        self.early_stop_tol = early_stop_tol

    def fit(self, X, priors):
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")
        priors = check_array(priors, dtype=np.float64)
        validate_prob_rows(priors)
        if self.mode == "prior-only":
            self.consensus_ = priors
            self.means_ = None
            self.covariances_ = None
            self.trace_ = None
            self.n_features_in_ = None
            return self
        X = check_array(X, dtype=np.float64)
        gcfg = gmm.GmmConfig(
            cov_mode=self.cov_mode,
            reg_eps=self.reg_eps,
            l2_normalize=self.l2_normalize,
        )
        scfg = consensus.SolverConfig(
            iters=self.n_iter,
            log_clamp=self.log_clamp,
            early_stop_tol=self.early_stop_tol,
        )
        solve = consensus.run if self.mode == "joint" else consensus.run_decoupled
        result = solve(X, priors, gcfg, scfg)
        self.consensus_ = result.consensus
        self.means_ = result.params.means
        self.covariances_ = result.params.covs
        self.trace_ = result.trace
        self.n_features_in_ = X.shape[1]
        return self

    def fit_transform(self, X, priors):
        return self.fit(X, priors).consensus_

    def fit_predict(self, X, priors):
        return np.argmax(self.fit(X, priors).consensus_, axis=1)


class PriorEncoder(BaseEstimator, TransformerMixin):
    """Turn language-aligned features into per-row class probabilities.

    Stateless transformer: `transform(V)` is the cosine-similarity
    softmax against the prototypes given at construction.
    """

    def __init__(
        self,
        prototypes: TextPrototypes,
        tau: float = 0.01,
        synonym_mode: str = "max",
    ):
        self.prototypes = prototypes
        self.tau = tau
        self.synonym_mode = synonym_mode

    def fit(self, X=None, y=None):
        self._config_ = PriorConfig(tau=self.tau, synonym_mode=self.synonym_mode)
        return self

    def transform(self, V):
        check_is_fitted(self, "_config_")
        V = check_array(V, dtype=np.float64)
        return encode_prior(V, self.prototypes, self._config_)
