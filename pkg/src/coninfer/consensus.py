"""Consensus calibration: fuse a semantic prior with a contextual posterior.

Per patch, the calibrated distribution z minimizes closeness to both the
prior p (from a language-aligned scorer) and the mixture posterior q
(from purely visual features), measured as KL(z||p) + KL(z||q). The
update used is the elementwise product rule z proportional to p*q.
The solver alternates: posterior from the current mixture, product fuse
with the prior, then mixture re-estimation from the fused distribution.
The decoupled variant fits the mixture with plain EM and fuses once at
the end.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import gmm
from .exceptions import ShapeError
from .prior import validate_prob_rows

_PRODUCT_MASS_FLOOR = 1e-300


@dataclass(frozen=True)
class SolverConfig:
    iters: int = 10
    log_clamp: float = 1e-12
    early_stop_tol: float = 0.0  # 0 disables; otherwise stop when max |dz| < tol

    def __post_init__(self) -> None:
        if self.iters < 1:
            raise ValueError(f"iters must be >= 1, got {self.iters}")
        if not self.log_clamp > 0:
            raise ValueError("log_clamp must be > 0")
        if self.early_stop_tol < 0:
            raise ValueError("early_stop_tol must be >= 0")


@dataclass
class RunTrace:
    """Objective and movement per iteration; index 0 is the initial state."""

    objective: list[float] = field(default_factory=list)
    max_z_delta: list[float] = field(default_factory=list)
    fallback_rows: list[int] = field(default_factory=list)

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "objective", "max_z_delta"])
            for i, (j, dz) in enumerate(zip(self.objective, self.max_z_delta)):
                writer.writerow([i, repr(j), repr(dz)])


@dataclass
class ConsensusResult:
    consensus: np.ndarray  # (N, C), row-stochastic
    params: gmm.GmmParams
    trace: RunTrace

    def labels(self) -> np.ndarray:
        return np.argmax(self.consensus, axis=1)


def _fuse_counted(P: np.ndarray, Q: np.ndarray) -> tuple[np.ndarray, int]:
    if P.shape != Q.shape:
        raise ShapeError(f"prior shape {P.shape} != posterior shape {Q.shape}")
    prod = P * Q
    mass = prod.sum(axis=1, keepdims=True)
    degenerate = mass[:, 0] < _PRODUCT_MASS_FLOOR
    n_fallback = int(degenerate.sum())
    if n_fallback:
        # rows where the product underflowed keep the (renormalized) prior
        prod[degenerate] = P[degenerate]
        mass[degenerate] = P[degenerate].sum(axis=1, keepdims=True)
    return prod / mass, n_fallback


def fuse(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Row-normalized elementwise product of two row-stochastic matrices."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    Z, _ = _fuse_counted(P, Q)
    return Z


def objective(
    Z: np.ndarray, P: np.ndarray, Q: np.ndarray, log_clamp: float = 1e-12
) -> float:
    """Sum over patches of KL(z||p) + KL(z||q), with 0 log 0 taken as 0.

    Only the reference distributions are clamped (to log_clamp) so that
    exact zeros in Z contribute nothing and the value stays finite.
    """
    Z = np.asarray(Z, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if Z.shape != P.shape or Z.shape != Q.shape:
        raise ShapeError(f"shapes differ: {Z.shape}, {P.shape}, {Q.shape}")
    pos = Z > 0
    log_z = np.zeros_like(Z)
    np.log(Z, out=log_z, where=pos)
    term_p = np.where(pos, Z * (log_z - np.log(np.maximum(P, log_clamp))), 0.0)
    term_q = np.where(pos, Z * (log_z - np.log(np.maximum(Q, log_clamp))), 0.0)
    return float(term_p.sum() + term_q.sum())


def _prepare(X, P, gmm_config):
    X = np.asarray(X, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"feature matrix must be 2-D, got {X.shape}")
    if P.ndim != 2 or P.shape[0] != X.shape[0]:
        raise ShapeError(f"prior shape {P.shape} does not align with features {X.shape}")
    validate_prob_rows(P)
    cfg = gmm_config or gmm.GmmConfig()
    if cfg.l2_normalize:
        X = gmm.l2_normalize_rows(X)
    reg = gmm.resolve_reg_eps(X, cfg.reg_eps)
    return X, P, cfg, reg


def run(
    X: np.ndarray,
    P: np.ndarray,
    gmm_config: gmm.GmmConfig | None = None,
    solver: SolverConfig | None = None,
    callback: Callable[[int, np.ndarray, np.ndarray], None] | None = None,
) -> ConsensusResult:
    """Joint loop: posterior, product fuse, mixture re-fit from the fusion.

    The trace holds iters+1 entries; entry 0 is the objective of the
    starting point (consensus = prior, posterior from the prior-derived
    mixture init). ``callback(iteration, Z, Q)`` fires after each fuse.
    """
    X, P, cfg, reg = _prepare(X, P, gmm_config)
    scfg = solver or SolverConfig()

    params = gmm.init_from_prior(X, P, cfg.cov_mode, reg)
    Q = gmm.e_step(X, params)
    trace = RunTrace(
        objective=[objective(P, P, Q, scfg.log_clamp)],
        max_z_delta=[0.0],
        fallback_rows=[0],
    )
    Z = P
    for it in range(1, scfg.iters + 1):
        if it > 1:
            Q = gmm.e_step(X, params)
        Z_new, n_fb = _fuse_counted(P, Q)
        delta = float(np.max(np.abs(Z_new - Z)))
        trace.objective.append(objective(Z_new, P, Q, scfg.log_clamp))
        trace.max_z_delta.append(delta)
        trace.fallback_rows.append(n_fb)
        params = gmm.m_step(X, Z_new, cfg.cov_mode, reg)
        Z = Z_new
        if callback is not None:
            callback(it, Z, Q)
        if scfg.early_stop_tol > 0 and delta < scfg.early_stop_tol:
            break
    return ConsensusResult(Z, params, trace)


def run_decoupled(
    X: np.ndarray,
    P: np.ndarray,
    gmm_config: gmm.GmmConfig | None = None,
    solver: SolverConfig | None = None,
    callback: Callable[[int, np.ndarray, np.ndarray], None] | None = None,
) -> ConsensusResult:
    """Two-stage variant: plain EM on the features, then a single fuse.

    The mixture is re-fit from its own posterior (never from the fused
    distribution), so the prior only enters through the init and the
    final fuse. Per-iteration objectives are still measured on the fused
    candidate so traces are comparable with :func:`run`.
    """
    X, P, cfg, reg = _prepare(X, P, gmm_config)
    scfg = solver or SolverConfig()

    params = gmm.init_from_prior(X, P, cfg.cov_mode, reg)
    Q = gmm.e_step(X, params)
    trace = RunTrace(
        objective=[objective(P, P, Q, scfg.log_clamp)],
        max_z_delta=[0.0],
        fallback_rows=[0],
    )
    Z = P
    for it in range(1, scfg.iters + 1):
        if it > 1:
            Q = gmm.e_step(X, params)
        Z_new, n_fb = _fuse_counted(P, Q)
        delta = float(np.max(np.abs(Z_new - Z)))
        trace.objective.append(objective(Z_new, P, Q, scfg.log_clamp))
        trace.max_z_delta.append(delta)
        trace.fallback_rows.append(n_fb)
        params = gmm.m_step(X, Q, cfg.cov_mode, reg)
        Z = Z_new
        if callback is not None:
            callback(it, Z, Q)
        if scfg.early_stop_tol > 0 and delta < scfg.early_stop_tol:
            break
    return ConsensusResult(Z, params, trace)
