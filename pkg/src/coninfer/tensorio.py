"""File contracts: NPY tensors, scene manifests, and PGM masks.

This module is the boundary between the engine and whatever produced its
inputs. The formats are deliberately pinned:

* Tensors are NPY v1.0 containers, little-endian, C-order, dtype ``<f4``
  or ``|u1`` only, with the header padded so the data section starts on a
  64-byte boundary. ``write_tensor(read_tensor(f))`` is byte-identical
  for every file ``read_tensor`` accepts.
* Manifests are JSON with explicit patch geometry; every invariant is
  checked eagerly at load time, including the shapes of every referenced
  tensor (header peek only, payloads are not read here).
* Masks are binary PGM (P5), maxval 255, one byte per pixel holding the
  class index.
"""

from __future__ import annotations

import ast
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import FormatError, ManifestError, ShapeError, UnsupportedError

_MAGIC = b"\x93NUMPY"
_HEADER_ALIGN = 64
_DESCR_TO_TAG = {"<f4": "float32", "|u1": "uint8"}
_TAG_TO_DESCR = {v: k for k, v in _DESCR_TO_TAG.items()}
_TAG_TO_DTYPE = {"float32": np.dtype("<f4"), "uint8": np.dtype("|u1")}


@dataclass(frozen=True)
class TensorFile:
    """A parsed tensor: dtype tag, shape, and row-major data."""

    dtype: str
    shape: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.dtype not in _TAG_TO_DESCR:
            raise UnsupportedError(f"unsupported dtype tag {self.dtype!r}")
        n = math.prod(self.shape)
        if self.data.size != n:
            raise ShapeError(
                f"shape {self.shape} implies {n} elements, data has {self.data.size}"
            )

    @classmethod
    def from_array(cls, array: np.ndarray) -> "TensorFile":
        arr = np.ascontiguousarray(array)
        if arr.dtype == np.float32:
            tag = "float32"
        elif arr.dtype == np.uint8:
            tag = "uint8"
        else:
            raise UnsupportedError(f"unsupported array dtype {arr.dtype}")
        return cls(tag, tuple(arr.shape), arr)

    @property
    def array(self) -> np.ndarray:
        return self.data.reshape(self.shape)


def _parse_header(raw: bytes, path: Path) -> tuple[str, tuple[int, ...], int]:
    """Parse magic + version + header dict; return (dtype tag, shape, data offset)."""
    if len(raw) < 10 or raw[:6] != _MAGIC:
        raise FormatError(f"{path}: not an NPY file (bad magic)")
    major, minor = raw[6], raw[7]
    if (major, minor) != (1, 0):
        raise UnsupportedError(f"{path}: NPY version {major}.{minor}, only 1.0 supported")
    (hlen,) = struct.unpack("<H", raw[8:10])
    total = 10 + hlen
    if total % _HEADER_ALIGN != 0:
        raise FormatError(
            f"{path}: header ends at byte {total}, not a {_HEADER_ALIGN}-byte multiple"
        )
    if len(raw) < total:
        raise FormatError(f"{path}: truncated header")
    text = raw[10:total].decode("latin_1")
    try:
        header = ast.literal_eval(text)
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"{path}: unparseable header dict") from exc
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise FormatError(f"{path}: header keys {sorted(header)!r} invalid")
    if header["fortran_order"] is not False:
        raise UnsupportedError(f"{path}: fortran_order arrays are not supported")
    descr = header["descr"]
    if descr not in _DESCR_TO_TAG:
        raise UnsupportedError(f"{path}: dtype {descr!r} outside the contract")
    shape = header["shape"]
    if not isinstance(shape, tuple) or not all(
        isinstance(s, int) and s >= 0 for s in shape
    ):
        raise FormatError(f"{path}: invalid shape {shape!r}")
    return _DESCR_TO_TAG[descr], shape, total


def read_tensor(path: str | Path) -> TensorFile:
    """Read an NPY v1.0 tensor, enforcing the pinned contract."""
    path = Path(path)
    raw = path.read_bytes()
    tag, shape, offset = _parse_header(raw, path)
    dtype = _TAG_TO_DTYPE[tag]
    expected = math.prod(shape) * dtype.itemsize
    payload = raw[offset:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, shape {shape} requires {expected}"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return TensorFile(tag, shape, data)


def peek_tensor(path: str | Path) -> tuple[str, tuple[int, ...]]:
    """Read only the header: (dtype tag, shape). Payload is not validated."""
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read(10)
        if len(raw) == 10 and raw[:6] == _MAGIC:
            (hlen,) = struct.unpack("<H", raw[8:10])
            raw += fh.read(hlen)
    tag, shape, _ = _parse_header(raw, path)
    return tag, shape


def write_tensor(path: str | Path, t: TensorFile) -> None:
    """Write an NPY v1.0 file; byte-layout identical to numpy's own writer."""
    descr = _TAG_TO_DESCR[t.dtype]
    header = "{'descr': %r, 'fortran_order': False, 'shape': %r, }" % (
        descr,
        tuple(t.shape),
    )
    # pad with spaces so 10 + len(header) + 1 is a multiple of 64, then '\n'
    pad = -(10 + len(header) + 1) % _HEADER_ALIGN
    header = header + " " * pad + "\n"
    if len(header) > 0xFFFF:
        raise UnsupportedError("header too large for NPY v1.0")
    blob = _MAGIC + bytes((1, 0)) + struct.pack("<H", len(header)) + header.encode("latin_1")
    data = np.ascontiguousarray(t.data.reshape(t.shape), dtype=_TAG_TO_DTYPE[t.dtype])
    Path(path).write_bytes(blob + data.tobytes())


def write_array(path: str | Path, array: np.ndarray) -> None:
    write_tensor(path, TensorFile.from_array(array))


def load_array(path: str | Path) -> np.ndarray:
    return read_tensor(path).array


# ---------------------------------------------------------------------------
# masks


def write_mask(path: str | Path, mask: np.ndarray) -> None:
    """Write a 2-D class-index mask as binary PGM (P5, maxval 255)."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ShapeError(f"mask must be 2-D, got shape {mask.shape}")
    if mask.dtype != np.uint8:
        if mask.size and (mask.min() < 0 or mask.max() > 255):
            raise ShapeError("mask values must fit in uint8 (class indices < 256)")
        mask = mask.astype(np.uint8)
    rows, cols = mask.shape
    header = f"P5\n{cols} {rows}\n255\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(mask).tobytes())


def read_mask(path: str | Path) -> np.ndarray:
    """Read a binary PGM produced by :func:`write_mask`."""
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise FormatError(f"{path}: not a P5 PGM")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        token = raw[start:pos]
        if not token.isdigit():
            raise FormatError(f"{path}: non-numeric PGM header token {token!r}")
        fields.append(int(token))
    pos += 1  # single whitespace byte after maxval
    cols, rows, maxval = fields
    if maxval != 255:
        raise UnsupportedError(f"{path}: maxval {maxval}, only 255 supported")
    payload = raw[pos:]
    if len(payload) != rows * cols:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, expected {rows * cols}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(rows, cols)


# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class ClassEntry:
    name: str
    synonyms: tuple[str, ...] = ()


@dataclass(frozen=True)
class TileEntry:
    id: str
    features_path: Path
    priors_path: Path | None = None
    vlm_features_path: Path | None = None
    gt_path: Path | None = None


@dataclass(frozen=True)
class TileManifest:
    scene_id: str
    classes: tuple[ClassEntry, ...]
    tiles: tuple[TileEntry, ...]
    patch_grid: tuple[int, int]  # (rows, cols)
    patch_px: int
    tile_px: tuple[int, int]  # (height, width)
    prototypes_path: Path | None = None
    feature_dim: int = 0
    vlm_feature_dim: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def class_names(self) -> list[str]:
        return [c.name for c in self.classes]

    @property
    def patches_per_tile(self) -> int:
        return self.patch_grid[0] * self.patch_grid[1]

    @property
    def prototype_owners(self) -> np.ndarray:
        """Class index owning each prototype row: name first, then synonyms."""
        owners = []
        for i, c in enumerate(self.classes):
            owners.extend([i] * (1 + len(c.synonyms)))
        return np.asarray(owners, dtype=np.int64)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ManifestError(msg)


def _get(obj: dict, key: str, typ, where: str, optional: bool = False):
    if key not in obj:
        if optional:
            return None
        raise ManifestError(f"{where}: missing key {key!r}")
    value = obj[key]
    if not isinstance(value, typ):
        raise ManifestError(f"{where}.{key}: expected {typ.__name__}, got {type(value).__name__}")
    return value


_TOP_KEYS = {
    "scene_id",
    "classes",
    "patch_grid",
    "patch_px",
    "tile_px",
    "tiles",
    "prototypes_path",
    "meta",
}
_TILE_KEYS = {"id", "features_path", "priors_path", "vlm_features_path", "gt_path"}


def _check_tensor(path: Path, want_tag: str, want_shape: tuple[int, ...], where: str) -> None:
    if not path.is_file():
        raise ManifestError(f"{where}: referenced file {path} does not exist")
    tag, shape = peek_tensor(path)
    if tag != want_tag:
        raise ShapeError(f"{where}: {path} has dtype {tag}, expected {want_tag}")
    if shape != want_shape:
        raise ShapeError(f"{where}: {path} has shape {shape}, expected {want_shape}")


def load_manifest(path: str | Path) -> TileManifest:
    """Load and eagerly validate a scene manifest.

    Raises ManifestError naming the offending field, or ShapeError when a
    referenced tensor disagrees with the declared patch geometry.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: top level must be an object")
    unknown = set(doc) - _TOP_KEYS
    _require(not unknown, f"{path}: unknown keys {sorted(unknown)}")
    base = path.parent

    scene_id = _get(doc, "scene_id", str, "manifest")
    meta = _get(doc, "meta", dict, "manifest", optional=True) or {}

    raw_classes = _get(doc, "classes", list, "manifest")
    _require(len(raw_classes) > 0, "classes: must be non-empty")
    classes = []
    for i, rc in enumerate(raw_classes):
        where = f"classes[{i}]"
        _require(isinstance(rc, dict), f"{where}: expected object")
        name = _get(rc, "name", str, where)
        _require(bool(name), f"{where}.name: must be non-empty")
        syn = _get(rc, "synonyms", list, where, optional=True) or []
        _require(all(isinstance(s, str) for s in syn), f"{where}.synonyms: must be strings")
        classes.append(ClassEntry(name, tuple(syn)))
    names = [c.name for c in classes]
    _require(len(set(names)) == len(names), "classes: names must be unique")

    grid = _get(doc, "patch_grid", dict, "manifest")
    rows = _get(grid, "rows", int, "patch_grid")
    cols = _get(grid, "cols", int, "patch_grid")
    _require(rows >= 1 and cols >= 1, "patch_grid: rows and cols must be >= 1")
    patch_px = _get(doc, "patch_px", int, "manifest")
    _require(patch_px >= 1, "patch_px: must be >= 1")
    tpx = _get(doc, "tile_px", dict, "manifest")
    tile_h = _get(tpx, "h", int, "tile_px")
    tile_w = _get(tpx, "w", int, "tile_px")
    if rows * patch_px != tile_h or cols * patch_px != tile_w:
        raise ShapeError(
            f"patch geometry mismatch: grid {rows}x{cols} at {patch_px}px "
            f"covers {rows * patch_px}x{cols * patch_px}, tile_px is {tile_h}x{tile_w}"
        )

    n_patches = rows * cols
    n_classes = len(classes)

    proto_rel = _get(doc, "prototypes_path", str, "manifest", optional=True)
    prototypes_path = (base / proto_rel) if proto_rel else None
    n_protos = sum(1 + len(c.synonyms) for c in classes)
    vlm_dim = 0
    if prototypes_path is not None:
        _require(prototypes_path.is_file(), f"prototypes_path: {prototypes_path} does not exist")
        tag, shape = peek_tensor(prototypes_path)
        if tag != "float32" or len(shape) != 2 or shape[0] != n_protos:
            raise ShapeError(
                f"prototypes_path: {prototypes_path} has {tag}{shape}, "
                f"expected float32 ({n_protos}, d)"
            )
        vlm_dim = shape[1]

    raw_tiles = _get(doc, "tiles", list, "manifest")
    _require(len(raw_tiles) > 0, "tiles: must be non-empty")
    tiles = []
    feat_dim = 0
    for i, rt in enumerate(raw_tiles):
        where = f"tiles[{i}]"
        _require(isinstance(rt, dict), f"{where}: expected object")
        unknown = set(rt) - _TILE_KEYS
        _require(not unknown, f"{where}: unknown keys {sorted(unknown)}")
        tid = _get(rt, "id", str, where)
        _require(bool(tid), f"{where}.id: must be non-empty")

        feat = base / _get(rt, "features_path", str, where)
        _require(feat.is_file(), f"{where}.features_path: {feat} does not exist")
        tag, shape = peek_tensor(feat)
        if tag != "float32" or len(shape) != 2 or shape[0] != n_patches:
            raise ShapeError(
                f"{where}.features_path: {feat} has {tag}{shape}, "
                f"expected float32 ({n_patches}, d)"
            )
        if feat_dim == 0:
            feat_dim = shape[1]
        elif shape[1] != feat_dim:
            raise ShapeError(
                f"{where}.features_path: feature dim {shape[1]} != {feat_dim} of earlier tiles"
            )

        priors_rel = _get(rt, "priors_path", str, where, optional=True)
        priors = (base / priors_rel) if priors_rel else None
        if priors is not None:
            _check_tensor(priors, "float32", (n_patches, n_classes), f"{where}.priors_path")

        vlm_rel = _get(rt, "vlm_features_path", str, where, optional=True)
        vlm = (base / vlm_rel) if vlm_rel else None
        if vlm is not None:
            _require(
                prototypes_path is not None,
                f"{where}.vlm_features_path: requires a scene-level prototypes_path",
            )
            _check_tensor(vlm, "float32", (n_patches, vlm_dim), f"{where}.vlm_features_path")

        gt_rel = _get(rt, "gt_path", str, where, optional=True)
        gt = (base / gt_rel) if gt_rel else None
        if gt is not None:
            _check_tensor(gt, "uint8", (tile_h, tile_w), f"{where}.gt_path")

        tiles.append(TileEntry(tid, feat, priors, vlm, gt))

    ids = [t.id for t in tiles]
    _require(len(set(ids)) == len(ids), "tiles: ids must be unique")

    return TileManifest(
        scene_id=scene_id,
        classes=tuple(classes),
        tiles=tuple(tiles),
        patch_grid=(rows, cols),
        patch_px=patch_px,
        tile_px=(tile_h, tile_w),
        prototypes_path=prototypes_path,
        feature_dim=feat_dim,
        vlm_feature_dim=vlm_dim,
        meta=meta,
    )


def write_manifest(path: str | Path, doc: dict) -> None:
    """Serialize a manifest dict (paths already relative to the target directory)."""
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
