"""Seeded synthetic scenes and the independent reference implementations.

The RNG is counter-based so that scenes are reproducible from
(seed, stream, index) alone, in any language:

* state_i = (seed + (i+1) * 0x9E3779B97F4A7C15) mod 2^64
* value_i = splitmix64_mix(state_i), the standard two-round avalanche
  (xor-shift 30, mul 0xBF58476D1CE4E5B9, xor-shift 27,
  mul 0x94D049BB133111EB, xor-shift 31)
* uniform_i = top 53 bits of value_i / 2^53, in [0, 1)
* gaussians: Box-Muller on consecutive uniform pairs,
  r = sqrt(-2 ln(1 - u1)), angle = 2 pi u2, yielding (r cos, r sin)
* substream s reseeds with splitmix64_mix(seed XOR mix(0xA5A5A5A5 + s))

The EM oracle here deliberately uses explicit inverses and determinants
(no Cholesky, no log-sum-exp) so it shares no numerical path with the
engine's mixture code.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensorio
from .segmap import upsample_patch_labels

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_STREAM_SALT = 0xA5A5A5A5


def _mix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class CounterRng:
    """SplitMix64 as a counter-based generator with named substreams."""

    def __init__(self, seed: int, stream: int = 0):
        seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        if stream:
            salt = _mix64(np.uint64((_STREAM_SALT + stream) & 0xFFFFFFFFFFFFFFFF))
            seed = _mix64(seed ^ salt)
        self._seed = seed
        self._next = 0

    def substream(self, stream: int) -> "CounterRng":
        return CounterRng(int(self._seed), stream)

    def uniforms(self, n: int) -> np.ndarray:
        idx = np.arange(self._next + 1, self._next + n + 1, dtype=np.uint64)
        self._next += n
        with np.errstate(over="ignore"):
            values = _mix64(self._seed + idx * _GAMMA)
        return (values >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def gaussians(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniforms(2 * pairs)
        r = np.sqrt(-2.0 * np.log1p(-u[:pairs]))
        theta = 2.0 * np.pi * u[pairs:]
        out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
        return out[:n]

    def integers(self, n: int, bound: int) -> np.ndarray:
        return np.minimum((self.uniforms(n) * bound).astype(np.int64), bound - 1)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniforms(n), kind="stable")


@dataclass(frozen=True)
class SynthSpec:
    n_clusters: int
    dim: int
    n_per_cluster: int
    center_spread: float = 6.0
    cluster_cov: float = 1.0
    prior_noise: float = 0.0  # fraction of rows replaced by the uniform row
    prior_flip: float = 0.0  # fraction of rows whose one-hot moves to a wrong class
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.n_clusters, self.dim, self.n_per_cluster) < 1:
            raise ValueError("n_clusters, dim, n_per_cluster must be >= 1")
        for name in ("prior_noise", "prior_flip"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.center_spread < 0 or self.cluster_cov < 0:
            raise ValueError("center_spread and cluster_cov must be >= 0")

    @property
    def n_points(self) -> int:
        return self.n_clusters * self.n_per_cluster


@dataclass(frozen=True)
class SynthScene:
    X: np.ndarray  # (N, d) features
    P: np.ndarray  # (N, K) corrupted prior
    labels: np.ndarray  # (N,) true class per row


def generate(spec: SynthSpec) -> SynthScene:
    """Gaussian blobs with a one-hot prior corrupted by noise and flips.

    Centers are random directions rescaled so the minimum pairwise
    distance equals center_spread. Noise rows and flip rows are disjoint,
    taken from the front of one seeded permutation.
    """
    k, d, n = spec.n_clusters, spec.dim, spec.n_points
    rng = CounterRng(spec.seed)

    centers = rng.substream(1).gaussians(k * d).reshape(k, d)
    if k > 1:
        diffs = centers[:, None, :] - centers[None, :, :]
        dist = np.sqrt((diffs**2).sum(-1))
        min_dist = dist[~np.eye(k, dtype=bool)].min()
        if min_dist <= 0:
            raise RuntimeError("degenerate centers; choose another seed")
        centers *= spec.center_spread / min_dist

    labels = np.repeat(np.arange(k, dtype=np.int64), spec.n_per_cluster)
    noise = rng.substream(2).gaussians(n * d).reshape(n, d)
    X = centers[labels] + np.sqrt(spec.cluster_cov) * noise

    P = np.zeros((n, k))
    P[np.arange(n), labels] = 1.0
    perm = rng.substream(3).permutation(n)
    n_noise = int(round(spec.prior_noise * n))
    n_flip = min(int(round(spec.prior_flip * n)), n - n_noise)
    P[perm[:n_noise]] = 1.0 / k
    if n_flip and k > 1:
        rows = perm[n_noise : n_noise + n_flip]
        offset = rng.substream(4).integers(n_flip, k - 1) + 1
        wrong = (labels[rows] + offset) % k
        P[rows] = 0.0
        P[rows, wrong] = 1.0
    return SynthScene(X, P, labels)


# ---------------------------------------------------------------------------
# reference implementations


def oracle_em(
    X: np.ndarray,
    means: np.ndarray,
    covs: np.ndarray,
    n_iter: int,
    reg_eps: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Plain fixed-uniform-weight EM with naive dense linear algebra.

    Full covariances only; densities via explicit inverse + determinant.
    Meant for small instances (N <= 1000, d <= 8). Returns the final
    (posteriors, means, covs); the per-iteration posteriors can be read
    off by calling with increasing n_iter.
    """
    X = np.asarray(X, dtype=np.float64)
    means = np.array(means, dtype=np.float64)
    covs = np.array(covs, dtype=np.float64)
    n, d = X.shape
    k = means.shape[0]

    def posteriors(means, covs):
        dens = np.empty((n, k))
        for j in range(k):
            det = np.linalg.det(covs[j])
            if det <= 0 or not np.isfinite(det):
                raise RuntimeError(f"oracle: component {j} covariance has det {det}")
            inv = np.linalg.inv(covs[j])
            diff = X - means[j]
            maha = np.einsum("ij,jk,ik->i", diff, inv, diff)
            dens[:, j] = np.exp(-0.5 * maha) / np.sqrt((2.0 * np.pi) ** d * det)
        total = dens.sum(axis=1, keepdims=True)
        if np.any(total <= 0):
            raise RuntimeError("oracle: all densities underflowed for some point")
        return dens / total

    Q = posteriors(means, covs)
    for _ in range(n_iter):
        Q = posteriors(means, covs)
        mass = Q.sum(axis=0)
        if np.any(mass <= 0):
            raise RuntimeError("oracle: empty component")
        means = (Q.T @ X) / mass[:, None]
        for j in range(k):
            diff = X - means[j]
            covs[j] = (diff * Q[:, j : j + 1]).T @ diff / mass[j] + reg_eps * np.eye(d)
    Q = posteriors(means, covs)
    return Q, means, covs


def oracle_argmin_z(
    p_row: np.ndarray, q_row: np.ndarray, grid_steps: int = 400
) -> np.ndarray:
    """Brute-force simplex minimizer of KL(z||p) + KL(z||q), C <= 3.

    Exists to document how far the product-fuse rule sits from the exact
    minimizer (the normalized geometric mean); resolution is 1/grid_steps.
    """
    p = np.asarray(p_row, dtype=np.float64)
    q = np.asarray(q_row, dtype=np.float64)
    c = p.shape[0]
    if c > 3:
        raise ValueError("brute-force search supports at most 3 classes")
    if grid_steps > 2000:
        raise ValueError("grid_steps must be <= 2000")

    def kl_sum(z):
        pos = z > 0
        with np.errstate(divide="ignore"):
            t = np.where(pos, z * (np.log(np.where(pos, z, 1.0)) - np.log(p)), 0.0)
            t = t + np.where(pos, z * (np.log(np.where(pos, z, 1.0)) - np.log(q)), 0.0)
        return t.sum()

    best, best_val = None, np.inf
    g = grid_steps
    if c == 1:
        return np.array([1.0])
    if c == 2:
        for i in range(g + 1):
            z = np.array([i / g, 1.0 - i / g])
            v = kl_sum(z)
            if v < best_val:
                best, best_val = z, v
    else:
        for i in range(g + 1):
            for j in range(g + 1 - i):
                z = np.array([i / g, j / g, 1.0 - (i + j) / g])
                v = kl_sum(z)
                if v < best_val:
                    best, best_val = z, v
    return best


# ---------------------------------------------------------------------------
# scene export


def export_scene(
    scene: SynthScene,
    out_dir: str | Path,
    grid_rows: int,
    grid_cols: int,
    patch_px: int,
    scene_id: str = "synthetic",
    class_names: list[str] | None = None,
) -> Path:
    """Write a scene as tiles + manifest; returns the manifest path.

    The N patch rows are split into consecutive tiles of
    grid_rows*grid_cols patches; N must divide evenly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = scene.X.shape[0]
    ppt = grid_rows * grid_cols
    if n % ppt != 0:
        raise ValueError(f"{n} patches do not fill an integer number of {ppt}-patch tiles")
    n_tiles = n // ppt
    k = scene.P.shape[1]
    if class_names is None:
        class_names = [f"class_{i}" for i in range(k)]

    tiles = []
    for t in range(n_tiles):
        sl = slice(t * ppt, (t + 1) * ppt)
        feat_name = f"features_{t:04d}.npy"
        prior_name = f"priors_{t:04d}.npy"
        gt_name = f"gt_{t:04d}.npy"
        tensorio.write_array(out / feat_name, scene.X[sl].astype(np.float32))
        tensorio.write_array(out / prior_name, scene.P[sl].astype(np.float32))
        gt_block = scene.labels[sl].reshape(grid_rows, grid_cols).astype(np.uint8)
        tensorio.write_array(out / gt_name, upsample_patch_labels(gt_block, patch_px))
        tiles.append(
            {
                "id": f"tile_{t:04d}",
                "features_path": feat_name,
                "priors_path": prior_name,
                "gt_path": gt_name,
            }
        )
    tensorio.write_array(out / "labels.npy", scene.labels.astype(np.uint8))

    manifest = {
        "scene_id": scene_id,
        "classes": [{"name": n, "synonyms": []} for n in class_names],
        "patch_grid": {"rows": grid_rows, "cols": grid_cols},
        "patch_px": patch_px,
        "tile_px": {"h": grid_rows * patch_px, "w": grid_cols * patch_px},
        "tiles": tiles,
    }
    manifest_path = out / "manifest.json"
    tensorio.write_manifest(manifest_path, manifest)
    return manifest_path
