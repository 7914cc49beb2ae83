"""Training-free calibration of per-patch class probabilities.

Per-patch class distributions from a language-aligned scorer are fused
with the posterior of a Gaussian mixture fitted on visual features of
the same patches, so that spatially coherent structure corrects isolated
misclassifications. Everything runs at inference time; no model is
trained or modified.
"""

from .consensus import (
    ConsensusResult,
    RunTrace,
    SolverConfig,
    fuse,
    objective,
    run,
    run_decoupled,
)
from .estimator import ConsensusCalibrator, PriorEncoder
from .gmm import GmmConfig, GmmParams, e_step, init_from_prior, log_density, m_step
from .prior import PriorConfig, TextPrototypes, cosine_scores, encode_prior, validate_prob_rows
from .segmap import PatchGrid, accumulate_confusion, assemble_masks, iou_scores
from .synth import CounterRng, SynthScene, SynthSpec, generate, oracle_argmin_z, oracle_em
from .tensorio import TensorFile, TileManifest, load_manifest, read_tensor, write_mask, write_tensor

__version__ = "0.1.0"

__all__ = [
    "ConsensusCalibrator",
    "ConsensusResult",
    "CounterRng",
    "GmmConfig",
    "GmmParams",
    "PatchGrid",
    "PriorConfig",
    "PriorEncoder",
    "RunTrace",
    "SolverConfig",
    "SynthScene",
    "SynthSpec",
    "TensorFile",
    "TextPrototypes",
    "TileManifest",
    "accumulate_confusion",
    "assemble_masks",
    "cosine_scores",
    "e_step",
    "encode_prior",
    "fuse",
    "generate",
    "init_from_prior",
    "iou_scores",
    "load_manifest",
    "log_density",
    "m_step",
    "objective",
    "oracle_argmin_z",
    "oracle_em",
    "read_tensor",
    "run",
    "run_decoupled",
    "validate_prob_rows",
    "write_mask",
    "write_tensor",
]
