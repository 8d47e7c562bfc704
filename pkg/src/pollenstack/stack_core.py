"""Domain types for pollen z-stacks and ingestion from on-disk image trees.

A sample is one pollen grain recorded as an ordered stack of grayscale
layers taken at successive focal depths. On disk a stack is either a
directory of single-page layer images (PNG/TIFF, zero-padded numeric
filenames) or a single multi-page TIFF. Labels come from the directory
layout (one directory per class) or from a sidecar label file.
"""

from __future__ import annotations

import dataclasses
import os
from pathlib import Path

import numpy as np
from PIL import Image

MAX_EDGE = 224  # canonical model input size; larger stacks are rejected, never resized

MANIFEST_VERSION = "manifest-v1"

_LAYER_SUFFIXES = {".png", ".tif", ".tiff"}


class IngestError(Exception):
    """Fatal ingestion failure (empty tree, unreadable manifest, ...)."""


class LoadError(Exception):
    """A stack that was manifested can no longer be decoded."""


@dataclasses.dataclass(frozen=True)
class ClassLabel:
    """One of the three fixed pollen classes."""

    id: int
    name: str


# Fixed label set: Urtica urens + U. dioica pool into class 0, the two
# Parietaria species into class 1, and the morphologically distinct
# Urtica membranacea stands alone as class 2.
CLASS_LABELS = (
    ClassLabel(0, "Urtica"),
    ClassLabel(1, "Parietaria"),
    ClassLabel(2, "Urtica membranacea"),
)

# Directory names accepted for the directory-per-class layout.
_DIR_TO_LABEL = {
    "urtica": CLASS_LABELS[0],
    "parietaria": CLASS_LABELS[1],
    "membranacea": CLASS_LABELS[2],
}

_NAME_TO_LABEL = {lbl.name: lbl for lbl in CLASS_LABELS}


def label_by_id(label_id) -> ClassLabel:
    label_id = int(label_id)
    if not 0 <= label_id < len(CLASS_LABELS):
        raise ValueError(f"unknown class id {label_id}")
    return CLASS_LABELS[label_id]


def label_by_token(token: str) -> ClassLabel:
    """Resolve a class from an id digit, directory token, or display name."""
    token = token.strip()
    if token.isdigit():
        return label_by_id(token)
    if token.lower() in _DIR_TO_LABEL:
        return _DIR_TO_LABEL[token.lower()]
    if token in _NAME_TO_LABEL:
        return _NAME_TO_LABEL[token]
    raise ValueError(f"unknown class token {token!r}")


@dataclasses.dataclass
class ZStack:
    """One pollen grain: an ordered (depth, height, width) uint8 volume."""

    id: str
    layers: np.ndarray
    label: ClassLabel

    def __post_init__(self):
        self.layers = np.asarray(self.layers)
        if self.layers.ndim != 3:
            raise ValueError("layers must be a (depth, height, width) array")
        if self.layers.dtype != np.uint8:
            raise ValueError("layers must be 8-bit grayscale")
        d, h, w = self.layers.shape
        if d < 1:
            raise ValueError("stack needs at least one layer")
        if not (1 <= h <= MAX_EDGE and 1 <= w <= MAX_EDGE):
            raise ValueError(f"layer size {h}x{w} outside 1..{MAX_EDGE}")

    @property
    def depth(self) -> int:
        return self.layers.shape[0]

    @property
    def height(self) -> int:
        return self.layers.shape[1]

    @property
    def width(self) -> int:
        return self.layers.shape[2]


@dataclasses.dataclass(frozen=True)
class ManifestRecord:
    id: str
    path: str
    label: ClassLabel
    depth: int
    height: int
    width: int


@dataclasses.dataclass
class DatasetManifest:
    records: list

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate ids in manifest")

    def __len__(self):
        return len(self.records)

    def class_counts(self) -> dict:
        counts = {lbl.id: 0 for lbl in CLASS_LABELS}
        for rec in self.records:
            counts[rec.label.id] += 1
        return counts

    def by_id(self, record_id: str) -> ManifestRecord:
        for rec in self.records:
            if rec.id == record_id:
                return rec
        raise KeyError(record_id)


def _layer_files(stack_dir: Path) -> list:
    files = [p for p in stack_dir.iterdir()
             if p.is_file() and p.suffix.lower() in _LAYER_SUFFIXES]
    return sorted(files, key=lambda p: p.name)


def _probe_pages(path: Path) -> list:
    """Return (height, width) per page of an image file without decoding pixels."""
    sizes = []
    with Image.open(path) as img:
        n = getattr(img, "n_frames", 1)
        for i in range(n):
            img.seek(i)
            w, h = img.size
            sizes.append((h, w))
    return sizes


def _probe_stack(record_id: str, source: Path, label: ClassLabel):
    """Header-only validation of one stack; returns a ManifestRecord."""
    if source.is_dir():
        files = _layer_files(source)
        if not files:
            raise ValueError("no layer images")
        sizes = []
        for f in files:
            pages = _probe_pages(f)
            if len(pages) != 1:
                raise ValueError(f"layer file {f.name} has {len(pages)} pages")
            sizes.append(pages[0])
    else:
        sizes = _probe_pages(source)
    first = sizes[0]
    for i, size in enumerate(sizes):
        if size != first:
            raise ValueError(
                f"layer {i} is {size[0]}x{size[1]} while layer 0 is {first[0]}x{first[1]}")
    h, w = first
    if not (1 <= h <= MAX_EDGE and 1 <= w <= MAX_EDGE):
        raise ValueError(f"layer size {h}x{w} exceeds {MAX_EDGE}x{MAX_EDGE}")
    return ManifestRecord(record_id, str(source), label, len(sizes), h, w)


def _read_sidecar(root: Path) -> dict:
    sidecar = root / "labels.tsv"
    if not sidecar.is_file():
        raise IngestError(f"sidecar layout requested but {sidecar} not found")
    mapping = {}
    for line in sidecar.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, _, token = line.partition("\t")
        mapping[name] = label_by_token(token)
    return mapping


def _candidate_stacks(root: Path, layout: str):
    """Yield (record_id, source_path, label) for every stack-shaped entry."""
    if layout == "by-dir":
        for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
            label = _DIR_TO_LABEL.get(class_dir.name.lower())
            if label is None:
                continue
            for entry in sorted(class_dir.iterdir(), key=lambda p: p.name):
                if entry.is_dir() or entry.suffix.lower() in _LAYER_SUFFIXES:
                    yield f"{class_dir.name}/{entry.stem}", entry, label
    elif layout == "sidecar":
        labels = _read_sidecar(root)
        for entry in sorted(root.iterdir(), key=lambda p: p.name):
            if entry.name == "labels.tsv":
                continue
            if entry.is_dir() or entry.suffix.lower() in _LAYER_SUFFIXES:
                key = entry.stem if entry.is_file() else entry.name
                if key not in labels:
                    raise IngestError(f"no label for stack {key!r} in labels.tsv")
                yield key, entry, labels[key]
    else:
        raise ValueError(f"unknown layout {layout!r}")


def ingest_directory(root, layout: str = "by-dir"):
    """Scan a tree of stacks into a manifest without decoding pixel data.

    Returns (manifest, errors) where errors is a list of per-record
    "id: reason" strings for stacks that were rejected. Raises
    IngestError when the tree yields no valid stack at all.
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"root {root} does not exist")
    records, errors = [], []
    for record_id, source, label in _candidate_stacks(root, layout):
        try:
            records.append(_probe_stack(record_id, source, label))
        except Exception as exc:
            errors.append(f"{record_id}: {exc}")
    if not records:
        raise IngestError(f"no samples found under {root}")
    records.sort(key=lambda r: r.id)
    return DatasetManifest(records), errors


def _decode_gray(img: Image.Image) -> np.ndarray:
    """Decode one page to 8-bit grayscale; color collapses by channel average."""
    if img.mode == "P":
        img = img.convert("RGB")
    if img.mode == "L":
        return np.asarray(img, dtype=np.uint8)
    if img.mode in ("RGB", "RGBA"):
        rgb = np.asarray(img)[:, :, :3].astype(np.uint16)
        # round-half-up channel average keeps gray-valued RGB bit-exact
        return np.floor(rgb.sum(axis=2) / 3.0 + 0.5).astype(np.uint8)
    raise ValueError(f"unsupported image mode {img.mode!r}")


def load_stack(record: ManifestRecord) -> ZStack:
    """Decode a manifested stack to a ZStack, layers in file order."""
    source = Path(record.path)
    try:
        layers = []
        if source.is_dir():
            for f in _layer_files(source):
                with Image.open(f) as img:
                    layers.append(_decode_gray(img))
        else:
            with Image.open(source) as img:
                for i in range(getattr(img, "n_frames", 1)):
                    img.seek(i)
                    layers.append(_decode_gray(img))
    except LoadError:
        raise
    except Exception as exc:
        raise LoadError(f"cannot load stack {record.id!r}: {exc}") from exc
    if len(layers) != record.depth:
        raise LoadError(
            f"stack {record.id!r}: {len(layers)} layers on disk, manifest says {record.depth}")
    volume = np.stack(layers)
    if volume.shape[1:] != (record.height, record.width):
        raise LoadError(
            f"stack {record.id!r}: decoded {volume.shape[1]}x{volume.shape[2]}, "
            f"manifest says {record.height}x{record.width}")
    return ZStack(record.id, volume, record.label)


_MANIFEST_COLUMNS = ("id", "path", "label", "depth", "height", "width")


def write_manifest(manifest: DatasetManifest, path) -> None:
    lines = ["\t".join((MANIFEST_VERSION,) + _MANIFEST_COLUMNS)]
    for rec in manifest.records:
        lines.append("\t".join((
            rec.id, rec.path, str(rec.label.id),
            str(rec.depth), str(rec.height), str(rec.width))))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> DatasetManifest:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise IngestError(f"{path}: empty manifest")
    header = lines[0].split("\t")
    if header[0] != MANIFEST_VERSION:
        raise IngestError(f"{path}: expected {MANIFEST_VERSION}, got {header[0]!r}")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != len(_MANIFEST_COLUMNS):
            raise IngestError(f"{path}:{lineno}: expected {len(_MANIFEST_COLUMNS)} fields")
        rec_id, rec_path, label_id, depth, height, width = fields
        records.append(ManifestRecord(
            rec_id, rec_path, label_by_id(label_id), int(depth), int(height), int(width)))
    return DatasetManifest(records)
