"""Export patch features, prototypes, and priors in the engine's file formats.

One tile per input image. The engine is consumed purely through its file
contracts (NPY tensors written with np.save, the manifest JSON schema);
this package never imports it. Patch features are written in raster
order, top-left patch first, matching the engine's mask reassembly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from transformers import AutoConfig, AutoModel, AutoTokenizer, CLIPModel

from .templates import TEMPLATE_SETS

logger = logging.getLogger(__name__)

# channel statistics the public checkpoints were trained with
CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp")


@dataclass
class ClassSpec:
    name: str
    synonyms: list[str] = field(default_factory=list)

    @property
    def terms(self) -> list[str]:
        return [self.name, *self.synonyms]


@dataclass
class ExtractJob:
    images: list[Path]
    out_dir: Path
    context_backbone: str
    semantic_backbone: str
    classes: list[ClassSpec]
    template_set: str = "imagenet"
    resize: int = 448
    tau: float = 0.01
    emit: str = "priors"  # "priors": precomputed rows; "raw": tokens + prototypes
    device: str = "cpu"
    scene_id: str = "scene"
    gt_dir: Path | None = None

    def __post_init__(self) -> None:
        if not self.images:
            raise ValueError("no input images")
        if self.emit not in ("priors", "raw"):
            raise ValueError(f"emit must be 'priors' or 'raw', got {self.emit!r}")
        if self.template_set not in TEMPLATE_SETS:
            raise ValueError(f"unknown template set {self.template_set!r}")
        if not self.classes:
            raise ValueError("class list must be non-empty")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")


def list_images(paths: list[str | Path]) -> list[Path]:
    """Expand files and directories into a sorted image list."""
    out: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in IMAGE_SUFFIXES))
        else:
            out.append(p)
    return out


def _patch_size_of(config) -> int:
    if hasattr(config, "vision_config"):
        config = config.vision_config
    patch = getattr(config, "patch_size", None)
    if patch is None:
        raise ValueError("backbone config does not declare a patch_size")
    return int(patch)


def check_geometry(job: ExtractJob) -> int:
    """Validate resize divisibility from configs alone, before any weights load.

    Returns the shared patch size.
    """
    ctx = _patch_size_of(AutoConfig.from_pretrained(job.context_backbone))
    sem = _patch_size_of(AutoConfig.from_pretrained(job.semantic_backbone))
    for name, patch in (("context", ctx), ("semantic", sem)):
        if job.resize % patch != 0:
            raise ValueError(
                f"resize {job.resize} is not divisible by the {name} backbone's "
                f"patch size {patch}"
            )
    if ctx != sem:
        raise ValueError(
            f"context patch size {ctx} != semantic patch size {sem}; the engine "
            "requires one patch grid per scene"
        )
    return ctx


def load_pixels(path: Path, resize: int, mean, std, device: str) -> torch.Tensor:
    """(1, 3, resize, resize) normalized float tensor from an image file."""
    with Image.open(path) as img:
        img = img.convert("RGB").resize((resize, resize), Image.BICUBIC)
        arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0).to(device)


class ContextBackbone:
    """Final-layer patch tokens from a self-supervised vision transformer."""

    def __init__(self, model_id: str, device: str = "cpu"):
        self.patch_size = _patch_size_of(AutoConfig.from_pretrained(model_id))
        self.model = AutoModel.from_pretrained(model_id).to(device).eval()
        self.device = device

    @torch.no_grad()
    def features(self, pixels: torch.Tensor) -> np.ndarray:
        side = pixels.shape[-1] // self.patch_size
        tokens = self.model(pixels).last_hidden_state[0]
        prefix = tokens.shape[0] - side * side  # CLS plus any register tokens
        if prefix < 0:
            raise RuntimeError(
                f"backbone produced {tokens.shape[0]} tokens for a {side}x{side} grid"
            )
        return tokens[prefix:].cpu().numpy().astype(np.float32)


class SemanticBackbone:
    """CLIP-style dual encoder: projected patch tokens and text prototypes."""

    def __init__(self, model_id: str, device: str = "cpu"):
        self.patch_size = _patch_size_of(AutoConfig.from_pretrained(model_id))
        self.model = CLIPModel.from_pretrained(model_id).to(device).eval()
        self.tokenizer = AutoTokenizer.from_pretrained(model_id)
        self.device = device

    @torch.no_grad()
    def patch_features(self, pixels: torch.Tensor) -> np.ndarray:
        out = self.model.vision_model(pixels, interpolate_pos_encoding=True)
        tokens = out.last_hidden_state[:, 1:, :]  # drop CLS
        tokens = self.model.vision_model.post_layernorm(tokens)
        projected = self.model.visual_projection(tokens)[0]
        return projected.cpu().numpy().astype(np.float32)

    @torch.no_grad()
    def embed_texts(self, texts: list[str]) -> np.ndarray:
        enc = self.tokenizer(texts, padding=True, truncation=True, return_tensors="pt")
        enc = {k: v.to(self.device) for k, v in enc.items()}
        pooled = self.model.text_model(**enc).pooler_output
        return self.model.text_projection(pooled).cpu().numpy().astype(np.float64)


def build_prototypes(
    backbone: SemanticBackbone, classes: list[ClassSpec], template_set: str
) -> tuple[np.ndarray, list[int]]:
    """One prototype row per class term: templates embedded, normalized,
    mean-pooled, renormalized. Row order follows the class list, name
    first, then synonyms (the engine's owner convention)."""
    templates = TEMPLATE_SETS[template_set]
    rows, owners = [], []
    for idx, spec in enumerate(classes):
        for term in spec.terms:
            emb = backbone.embed_texts([t.format(term) for t in templates])
            emb /= np.linalg.norm(emb, axis=1, keepdims=True)
            proto = emb.mean(axis=0)
            proto /= np.linalg.norm(proto)
            rows.append(proto)
            owners.append(idx)
    return np.stack(rows).astype(np.float32), owners


def priors_from_scores(feats: np.ndarray, prototypes: np.ndarray, owners, tau: float) -> np.ndarray:
    """Cosine scores against prototypes, max per owning class, softmax at tau."""
    f = feats.astype(np.float64)
    f /= np.linalg.norm(f, axis=1, keepdims=True)
    p = prototypes.astype(np.float64)
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    scores = f @ p.T
    owners = np.asarray(owners)
    n_classes = owners.max() + 1
    agg = np.stack([scores[:, owners == c].max(axis=1) for c in range(n_classes)], axis=1)
    logits = agg / tau
    logits -= logits.max(axis=1, keepdims=True)
    P = np.exp(logits)
    P /= P.sum(axis=1, keepdims=True)
    return P.astype(np.float32)


def load_gt(path: Path, resize: int) -> np.ndarray:
    if path.suffix == ".npy":
        gt = np.load(path)
    else:
        with Image.open(path) as img:
            gt = np.asarray(img.convert("L").resize((resize, resize), Image.NEAREST))
    if gt.shape != (resize, resize):
        gt = np.asarray(
            Image.fromarray(gt.astype(np.uint8)).resize((resize, resize), Image.NEAREST)
        )
    return gt.astype(np.uint8)


def run_extraction(job: ExtractJob) -> Path:
    """Extract every image into tile tensors plus a scene manifest."""
    for img in job.images:
        if not img.is_file():
            raise FileNotFoundError(f"image {img} does not exist")
    check_geometry(job)

    context = ContextBackbone(job.context_backbone, job.device)
    semantic = SemanticBackbone(job.semantic_backbone, job.device)
    grid = job.resize // context.patch_size

    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    prototypes, owners = build_prototypes(semantic, job.classes, job.template_set)
    if job.emit == "raw":
        np.save(out / "prototypes.npy", prototypes)

    tiles = []
    for i, image in enumerate(job.images):
        ctx_pixels = load_pixels(image, job.resize, IMAGENET_MEAN, IMAGENET_STD, job.device)
        sem_pixels = load_pixels(image, job.resize, CLIP_MEAN, CLIP_STD, job.device)
        feats = context.features(ctx_pixels)
        vlm = semantic.patch_features(sem_pixels)

        feat_name = f"features_{i:04d}.npy"
        np.save(out / feat_name, feats)
        tile = {"id": image.stem, "features_path": feat_name}
        if job.emit == "priors":
            name = f"priors_{i:04d}.npy"
            np.save(out / name, priors_from_scores(vlm, prototypes, owners, job.tau))
            tile["priors_path"] = name
        else:
            name = f"vlm_{i:04d}.npy"
            np.save(out / name, vlm)
            tile["vlm_features_path"] = name
        if job.gt_dir is not None:
            for candidate in (Path(job.gt_dir) / f"{image.stem}.npy",
                              Path(job.gt_dir) / f"{image.stem}.png"):
                if candidate.is_file():
                    gt_name = f"gt_{i:04d}.npy"
                    np.save(out / gt_name, load_gt(candidate, job.resize))
                    tile["gt_path"] = gt_name
                    break
        tiles.append(tile)
        logger.info("extracted %s (%d/%d)", image.name, i + 1, len(job.images))

    manifest = {
        "scene_id": job.scene_id,
        "classes": [{"name": c.name, "synonyms": list(c.synonyms)} for c in job.classes],
        "patch_grid": {"rows": grid, "cols": grid},
        "patch_px": context.patch_size,
        "tile_px": {"h": job.resize, "w": job.resize},
        "tiles": tiles,
        "meta": {
            "context_backbone": job.context_backbone,
            "semantic_backbone": job.semantic_backbone,
            "template_set": job.template_set,
            "template_pooling": "mean",
            "synonym_rows": "one prototype row per term, class order",
            "tau": job.tau if job.emit == "priors" else None,
            "emit": job.emit,
        },
    }
    if job.emit == "raw":
        manifest["prototypes_path"] = "prototypes.npy"
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path
