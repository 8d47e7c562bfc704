"""Reader for the packed dataset contract.

A packed dataset is three files sharing a basename:

  <name>.pstk       little-endian blob: 32-byte header, then one uint8
                    (n_layers, height, width) tensor per sample, row-major,
                    in index order
  <name>.index.tsv  "index-v1" header line, then id/label/offset/shape rows
  <name>.split.tsv  "split-v1" header line, #seed/#k metadata, then
                    id -> role rows (role is "test" or "foldK")

The blob header is struct "<4sHBBIHHH": magic b"PSTK", format version,
dtype code (0 = uint8), reserved byte, sample count, layers, height,
width. This module reads the contract independently; it never touches
raw images, so upstream preprocessing stays the single source of truth.
"""

from __future__ import annotations

import dataclasses
import struct
from pathlib import Path

import numpy as np
import torch

PSTK_MAGIC = b"PSTK"
PSTK_VERSION = 1
PSTK_DTYPE_U8 = 0
HEADER_SIZE = 32
_HEADER_FMT = "<4sHBBIHHH"

SPLIT_VERSION = "split-v1"
INDEX_VERSION = "index-v1"


class FormatError(Exception):
    """Packed files violate the contract (bad magic, truncation, ...)."""


@dataclasses.dataclass(frozen=True)
class IndexRow:
    id: str
    label_id: int
    offset: int
    n_layers: int
    height: int
    width: int

    @property
    def nbytes(self) -> int:
        return self.n_layers * self.height * self.width


@dataclasses.dataclass(frozen=True)
class SplitTable:
    seed: int
    k: int
    test_ids: tuple
    folds: tuple  # k tuples of ids

    def fold_members(self, fold_index: int):
        """(train_ids, val_ids, test_ids): fold validates, the rest train."""
        if not 0 <= fold_index < self.k:
            raise FormatError(f"fold index {fold_index} outside [0, {self.k})")
        train = []
        for i, fold in enumerate(self.folds):
            if i != fold_index:
                train.extend(fold)
        return tuple(sorted(train)), self.folds[fold_index], self.test_ids


def _triple(base) -> tuple:
    base = Path(base)
    if base.suffix == ".pstk":
        base = base.with_suffix("")
    return (base.with_suffix(".pstk"),
            base.parent / f"{base.name}.index.tsv",
            base.parent / f"{base.name}.split.tsv")


def _read_index(path: Path) -> list:
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(INDEX_VERSION + "\t"):
        raise FormatError(f"{path}: not an {INDEX_VERSION} file")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 6:
            raise FormatError(f"{path}:{lineno}: expected 6 fields")
        rows.append(IndexRow(fields[0], int(fields[1]), int(fields[2]),
                             int(fields[3]), int(fields[4]), int(fields[5])))
    return rows


def _read_split(path: Path) -> SplitTable:
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(SPLIT_VERSION + "\t"):
        raise FormatError(f"{path}: not a {SPLIT_VERSION} file")
    seed = k = None
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            if key == "seed":
                seed = int(value)
            elif key == "k":
                k = int(value)
            continue
        sample_id, _, role = line.partition("\t")
        if not role:
            raise FormatError(f"{path}:{lineno}: malformed row")
        rows.append((sample_id, role))
    if seed is None or k is None:
        raise FormatError(f"{path}: missing #seed/#k metadata")
    test_ids, folds = [], [[] for _ in range(k)]
    for sample_id, role in rows:
        if role == "test":
            test_ids.append(sample_id)
        elif role.startswith("fold"):
            index = int(role[4:])
            if not 0 <= index < k:
                raise FormatError(f"{path}: role {role!r} outside k={k}")
            folds[index].append(sample_id)
        else:
            raise FormatError(f"{path}: unknown role {role!r}")
    return SplitTable(seed=seed, k=k, test_ids=tuple(sorted(test_ids)),
                      folds=tuple(tuple(sorted(f)) for f in folds))


@dataclasses.dataclass
class PackedView:
    """Lazy view over one packed dataset: index and split load eagerly,
    tensors are read from the blob on demand."""

    blob_path: Path
    rows: list
    split: SplitTable

    def __post_init__(self):
        self._by_id = {row.id: row for row in self.rows}

    def __len__(self):
        return len(self.rows)

    def ids(self):
        return [row.id for row in self.rows]

    @property
    def n_layers(self) -> int:
        return self.rows[0].n_layers

    def label_of(self, sample_id: str) -> int:
        return self._by_id[sample_id].label_id

    def truth(self) -> dict:
        return {row.id: row.label_id for row in self.rows}

    def load_tensor(self, sample_id: str) -> np.ndarray:
        row = self._by_id[sample_id]
        with open(self.blob_path, "rb") as fh:
            fh.seek(row.offset)
            raw = fh.read(row.nbytes)
        if len(raw) != row.nbytes:
            raise FormatError(f"{self.blob_path}: truncated blob reading {sample_id!r}")
        return np.frombuffer(raw, dtype=np.uint8).reshape(
            row.n_layers, row.height, row.width)


def load_packed(path) -> PackedView:
    """Open a packed dataset, verifying the header/index/blob agreement.

    Each failure mode gets its own message: bad magic, unsupported
    version, unsupported dtype, truncated blob, trailing bytes,
    non-contiguous offsets, and count mismatches are all distinct.
    """
    blob_path, index_path, split_path = _triple(path)
    if not blob_path.is_file():
        raise FormatError(f"{blob_path}: no such blob")
    with open(blob_path, "rb") as fh:
        header = fh.read(HEADER_SIZE)
    if len(header) < HEADER_SIZE:
        raise FormatError(f"{blob_path}: truncated blob (short header)")
    magic, version, dtype, _, count, n_layers, height, width = struct.unpack(
        _HEADER_FMT, header[:struct.calcsize(_HEADER_FMT)])
    if magic != PSTK_MAGIC:
        raise FormatError(f"{blob_path}: bad magic {magic!r}")
    if version != PSTK_VERSION:
        raise FormatError(f"{blob_path}: unsupported format version {version} "
                          f"(expected {PSTK_VERSION})")
    if dtype != PSTK_DTYPE_U8:
        raise FormatError(f"{blob_path}: unsupported dtype code {dtype}")

    rows = _read_index(index_path)
    if len(rows) != count:
        raise FormatError(f"{index_path}: {len(rows)} index rows "
                          f"but blob header says {count}")
    expected = HEADER_SIZE
    for row in rows:
        if row.offset != expected:
            raise FormatError(f"{index_path}: offset {row.offset} for {row.id!r}, "
                              f"expected {expected} "
                              f"(offsets must be contiguous and increasing)")
        if (row.n_layers, row.height, row.width) != (n_layers, height, width):
            raise FormatError(f"{index_path}: {row.id!r} shape disagrees "
                              "with blob header")
        expected += row.nbytes
    actual = blob_path.stat().st_size
    if actual < expected:
        raise FormatError(f"{blob_path}: truncated blob "
                          f"({actual} bytes, expected {expected})")
    if actual > expected:
        raise FormatError(f"{blob_path}: blob larger than index accounts for "
                          f"({actual} bytes, expected {expected})")
    return PackedView(blob_path, rows, _read_split(split_path))


def to_model_input(tensor: np.ndarray) -> torch.Tensor:
    """uint8 (n_layers, h, w) -> float32 (3, n_layers, h, w) in [0, 1].

    The z-axis becomes the 3D convolution's temporal/depth axis and the
    single gray channel is replicated to three so video-pretrained
    weights (which expect RGB) apply unchanged.
    """
    if tensor.dtype != np.uint8 or tensor.ndim != 3:
        raise ValueError("expected a uint8 (n_layers, h, w) tensor")
    scaled = torch.from_numpy(tensor.astype(np.float32)) / 255.0
    return scaled.unsqueeze(0).expand(3, -1, -1, -1).contiguous()
