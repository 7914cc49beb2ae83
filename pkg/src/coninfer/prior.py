"""Semantic prior: cosine scores against text prototypes, softmax encoding.

A class may own several prototype rows (its name plus prompt synonyms).
Scores are aggregated per class before the temperature softmax, so the
output always has one column per class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateInputError, ShapeError, SimplexError


@dataclass(frozen=True)
class TextPrototypes:
    """Prototype vectors plus the class index owning each row."""

    vectors: np.ndarray  # (n_prototypes, d)
    owner_class: np.ndarray  # (n_prototypes,) int
    num_classes: int

    def __post_init__(self) -> None:
        v = np.asarray(self.vectors, dtype=np.float64)
        owners = np.asarray(self.owner_class, dtype=np.int64)
        if v.ndim != 2:
            raise ShapeError(f"prototype vectors must be 2-D, got {v.shape}")
        if owners.shape != (v.shape[0],):
            raise ShapeError(
                f"owner_class has shape {owners.shape}, expected ({v.shape[0]},)"
            )
        if not np.all(np.isfinite(v)):
            raise DegenerateInputError("prototype vectors must be finite")
        norms = np.linalg.norm(v, axis=1)
        if np.any(norms <= 0):
            bad = int(np.argmin(norms))
            raise DegenerateInputError(f"prototype row {bad} has zero norm")
        if self.num_classes < 1:
            raise ShapeError("num_classes must be >= 1")
        if owners.min() < 0 or owners.max() >= self.num_classes:
            raise ShapeError("owner_class indices out of range")
        owned = np.bincount(owners, minlength=self.num_classes)
        if np.any(owned == 0):
            missing = int(np.argmin(owned))
            raise ShapeError(f"class {missing} owns no prototype row")
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "owner_class", owners)

    @classmethod
    def one_per_class(cls, vectors: np.ndarray) -> "TextPrototypes":
        vectors = np.asarray(vectors)
        return cls(vectors, np.arange(vectors.shape[0]), vectors.shape[0])

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class PriorConfig:
    tau: float = 0.01
    synonym_mode: str = "max"  # {"max", "mean"} over a class's prototype scores

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.synonym_mode not in ("max", "mean"):
            raise ValueError(f"synonym_mode must be 'max' or 'mean', got {self.synonym_mode!r}")


def cosine_scores(V: np.ndarray, prototypes: TextPrototypes) -> np.ndarray:
    """Cosine similarity of every feature row against every prototype row."""
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2:
        raise ShapeError(f"feature matrix must be 2-D, got {V.shape}")
    if V.shape[1] != prototypes.dim:
        raise ShapeError(
            f"feature dim {V.shape[1]} != prototype dim {prototypes.dim}"
        )
    if not np.all(np.isfinite(V)):
        raise DegenerateInputError("feature matrix must be finite")
    v_norms = np.linalg.norm(V, axis=1)
    if np.any(v_norms <= 0):
        bad = int(np.argmin(v_norms))
        raise DegenerateInputError(f"feature row {bad} has zero norm")
    t_norms = np.linalg.norm(prototypes.vectors, axis=1)
    scores = (V @ prototypes.vectors.T) / np.outer(v_norms, t_norms)
    return np.clip(scores, -1.0, 1.0)


def aggregate_class_scores(
    scores: np.ndarray, prototypes: TextPrototypes, mode: str = "max"
) -> np.ndarray:
    """Collapse per-prototype scores to one column per class (max or mean)."""
    out = np.empty((scores.shape[0], prototypes.num_classes))
    for c in range(prototypes.num_classes):
        cols = prototypes.owner_class == c
        if mode == "max":
            out[:, c] = scores[:, cols].max(axis=1)
        else:
            out[:, c] = scores[:, cols].mean(axis=1)
    return out


def encode_prior(
    V: np.ndarray, prototypes: TextPrototypes, cfg: PriorConfig | None = None
) -> np.ndarray:
    """Per-patch class distribution: temperature softmax over aggregated scores.

    Evaluated in log space with max subtraction, so tiny temperatures stay
    finite; rows are renormalized to sum to exactly 1.
    """
    cfg = cfg or PriorConfig()
    scores = cosine_scores(V, prototypes)
    s = aggregate_class_scores(scores, prototypes, cfg.synonym_mode)
    logits = s / cfg.tau
    logits -= logits.max(axis=1, keepdims=True)
    P = np.exp(logits)
    P /= P.sum(axis=1, keepdims=True)
    return P


def validate_prob_rows(P: np.ndarray, atol: float = 1e-5) -> None:
    """Check nonnegativity and row sums within ``atol`` of 1; raise SimplexError."""
    P = np.asarray(P)
    if P.ndim != 2:
        raise ShapeError(f"probability matrix must be 2-D, got {P.shape}")
    neg = P < 0
    if neg.any():
        row = int(np.nonzero(neg.any(axis=1))[0][0])
        raise SimplexError(f"row {row} has a negative entry")
    sums = P.sum(axis=1)
    bad = np.abs(sums - 1.0) > atol
    if bad.any():
        row = int(np.nonzero(bad)[0][0])
        raise SimplexError(f"row {row} sums to {sums[row]:.6g}, expected 1")
