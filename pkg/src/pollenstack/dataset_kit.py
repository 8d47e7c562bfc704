"""Deterministic stratified splitting and bit-exact dataset packaging.

The split plan carves a 10% stratified test holdout and deals the rest
into k=10 cross-validation folds; every decision flows from a seeded
counter-based stream over sorted ids, so plans are invariant to
manifest record order and byte-identical across reruns.

Packed datasets are three files sharing a basename:

  <name>.pstk       little-endian binary blob, 32-byte header + tensors
  <name>.index.tsv  per-sample id/label/offset/shape, versioned header
  <name>.split.tsv  role (test / foldK) per id, versioned header

These files are the entire contract with the trainer component.
"""

from __future__ import annotations

import dataclasses
import hashlib
import struct
from pathlib import Path

import numpy as np

from .stack_core import CLASS_LABELS, DatasetManifest, label_by_id

SPLIT_VERSION = "split-v1"
INDEX_VERSION = "index-v1"
PSTK_MAGIC = b"PSTK"
PSTK_VERSION = 1
PSTK_DTYPE_U8 = 0
HEADER_SIZE = 32
_HEADER_FMT = "<4sHBBIHHH"  # magic, version, dtype, reserved, count, n_layers, h, w


class SplitError(Exception):
    """Split plan cannot satisfy its invariants for this dataset."""


class PackError(Exception):
    """Samples violate packaging preconditions."""


class DatasetFormatError(Exception):
    """Packed files are malformed (bad magic, version, truncation, ...)."""


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _stream(seed: int, *scope) -> np.random.Generator:
    tag = "|".join(str(s) for s in scope)
    digest = hashlib.blake2b(f"{seed}|{tag}".encode("utf-8"), digest_size=16).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest, "little")))


@dataclasses.dataclass
class SplitPlan:
    seed: int
    test_ids: tuple
    folds: tuple  # k tuples of ids
    version: str = SPLIT_VERSION

    @property
    def k(self) -> int:
        return len(self.folds)

    def all_ids(self):
        ids = list(self.test_ids)
        for fold in self.folds:
            ids.extend(fold)
        return ids

    def role_of(self, sample_id: str) -> str:
        if sample_id in set(self.test_ids):
            return "test"
        for i, fold in enumerate(self.folds):
            if sample_id in set(fold):
                return f"fold{i}"
        raise KeyError(sample_id)


def _apportion_test_counts(class_sizes: dict, fraction: float) -> dict:
    """Largest-remainder apportionment of the rounded total test count.

    Guarantees sum == round_half_up(fraction * N) while every class stays
    within one sample of exact proportionality; independent per-class
    rounding can overshoot the total by a sample or two.
    """
    total = _round_half_up(fraction * sum(class_sizes.values()))
    quotas = {c: fraction * n for c, n in class_sizes.items()}
    counts = {c: int(np.floor(q)) for c, q in quotas.items()}
    leftover = total - sum(counts.values())
    by_remainder = sorted(class_sizes, key=lambda c: (-(quotas[c] - counts[c]), c))
    for c in by_remainder[:leftover]:
        counts[c] += 1
    return counts


def make_split(manifest: DatasetManifest, seed: int,
               test_fraction: float = 0.10, k: int = 10) -> SplitPlan:
    """Stratified test holdout plus k-fold assignment of the remainder.

    Per class (in class-id order): ids are sorted, shuffled by a seeded
    stream, the apportioned test count is taken off the front, and the
    rest are dealt round-robin into the folds. The dealing cursor carries
    across classes so fold sizes stay within one sample per class.
    """
    by_class = {lbl.id: [] for lbl in CLASS_LABELS}
    for rec in manifest.records:
        by_class[rec.label.id].append(rec.id)
    by_class = {c: ids for c, ids in by_class.items() if ids}

    for c, ids in sorted(by_class.items()):
        if len(ids) < k:
            raise SplitError(
                f"class {label_by_id(c).name!r} has {len(ids)} samples; "
                f"needs at least {k} for {k}-fold splitting")

    test_counts = _apportion_test_counts({c: len(ids) for c, ids in by_class.items()},
                                         test_fraction)
    test_ids = []
    folds = [[] for _ in range(k)]
    cursor = 0
    for c in sorted(by_class):
        ids = sorted(by_class[c])
        _stream(seed, "split", c).shuffle(ids)
        n_test = test_counts[c]
        test_ids.extend(ids[:n_test])
        for sample_id in ids[n_test:]:
            folds[cursor % k].append(sample_id)
            cursor += 1
    return SplitPlan(seed=seed,
                     test_ids=tuple(sorted(test_ids)),
                     folds=tuple(tuple(sorted(f)) for f in folds))


def fold_roles(plan: SplitPlan, fold_index: int):
    """(train_ids, val_ids, test_ids) for one CV fold: the indexed fold
    validates, the other k-1 train, the holdout never moves."""
    if not 0 <= fold_index < plan.k:
        raise SplitError(f"fold index {fold_index} outside [0, {plan.k})")
    val = plan.folds[fold_index]
    train = []
    for i, fold in enumerate(plan.folds):
        if i != fold_index:
            train.extend(fold)
    return tuple(sorted(train)), val, plan.test_ids


def write_split(plan: SplitPlan, path) -> None:
    lines = [f"{SPLIT_VERSION}\tid\trole",
             f"#seed={plan.seed}", f"#k={plan.k}"]
    role = {}
    for sample_id in plan.test_ids:
        role[sample_id] = "test"
    for i, fold in enumerate(plan.folds):
        for sample_id in fold:
            role[sample_id] = f"fold{i}"
    for sample_id in sorted(role):
        lines.append(f"{sample_id}\t{role[sample_id]}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_split(path) -> SplitPlan:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(SPLIT_VERSION + "\t"):
        raise DatasetFormatError(f"{path}: not a {SPLIT_VERSION} file")
    seed, k = None, None
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
            raise DatasetFormatError(f"{path}:{lineno}: malformed row")
        rows.append((sample_id, role))
    if seed is None or k is None:
        raise DatasetFormatError(f"{path}: missing #seed/#k metadata")
    test_ids, folds = [], [[] for _ in range(k)]
    for sample_id, role in rows:
        if role == "test":
            test_ids.append(sample_id)
        elif role.startswith("fold"):
            idx = int(role[4:])
            if not 0 <= idx < k:
                raise DatasetFormatError(f"{path}: role {role!r} outside k={k}")
            folds[idx].append(sample_id)
        else:
            raise DatasetFormatError(f"{path}: unknown role {role!r}")
    return SplitPlan(seed=seed,
                     test_ids=tuple(sorted(test_ids)),
                     folds=tuple(tuple(sorted(f)) for f in folds))


@dataclasses.dataclass(frozen=True)
class IndexRecord:
    id: str
    label_id: int
    offset: int
    n_layers: int
    height: int
    width: int

    @property
    def nbytes(self) -> int:
        return self.n_layers * self.height * self.width


@dataclasses.dataclass
class PackedDataset:
    path: Path
    records: list  # IndexRecords in blob order
    split: SplitPlan

    def __post_init__(self):
        self._by_id = {rec.id: rec for rec in self.records}

    def __len__(self):
        return len(self.records)

    def ids(self):
        return [rec.id for rec in self.records]

    def record(self, sample_id: str) -> IndexRecord:
        try:
            return self._by_id[sample_id]
        except KeyError:
            raise KeyError(f"unknown sample id {sample_id!r}") from None

    def truth(self) -> dict:
        return {rec.id: rec.label_id for rec in self.records}

    def load_tensor(self, sample_id: str) -> np.ndarray:
        """Read one sample's tensor by offset without touching the rest."""
        rec = self.record(sample_id)
        with open(self.path, "rb") as fh:
            fh.seek(rec.offset)
            raw = fh.read(rec.nbytes)
        if len(raw) != rec.nbytes:
            raise DatasetFormatError(f"{self.path}: truncated blob at {rec.id!r}")
        return np.frombuffer(raw, dtype=np.uint8).reshape(
            rec.n_layers, rec.height, rec.width)


def _paths(base) -> tuple:
    base = Path(base)
    if base.suffix == ".pstk":
        base = base.with_suffix("")
    return (base.with_suffix(".pstk"),
            base.parent / f"{base.name}.index.tsv",
            base.parent / f"{base.name}.split.tsv")


def pack(samples, plan: SplitPlan, out) -> PackedDataset:
    """Write canonical samples (sorted by id) to the three-file contract.

    Every sample id must appear in the plan and all samples must share a
    layer count; tensors are concatenated uint8, row-major, little-endian
    header, so identical inputs produce byte-identical files anywhere.
    """
    blob_path, index_path, split_path = _paths(out)
    sample_list = sorted(samples, key=lambda s: s.id)
    if not sample_list:
        raise PackError("no samples to pack")
    seen = set()
    plan_ids = set(plan.all_ids())
    n_layers = sample_list[0].n_layers
    for s in sample_list:
        if s.id in seen:
            raise PackError(f"duplicate sample id {s.id!r}")
        seen.add(s.id)
        if s.id not in plan_ids:
            raise PackError(f"sample id {s.id!r} missing from split plan")
        if s.n_layers != n_layers:
            raise PackError(
                f"sample {s.id!r} has {s.n_layers} layers, expected {n_layers}")

    height, width = sample_list[0].tensor.shape[1:]
    header = struct.pack(_HEADER_FMT, PSTK_MAGIC, PSTK_VERSION, PSTK_DTYPE_U8, 0,
                         len(sample_list), n_layers, height, width)
    header += b"\x00" * (HEADER_SIZE - len(header))

    records = []
    offset = HEADER_SIZE
    with open(blob_path, "wb") as fh:
        fh.write(header)
        for s in sample_list:
            fh.write(np.ascontiguousarray(s.tensor).tobytes())
            records.append(IndexRecord(s.id, s.label.id, offset,
                                       n_layers, height, width))
            offset += records[-1].nbytes

    lines = ["\t".join((INDEX_VERSION, "id", "label", "offset",
                        "n_layers", "height", "width"))]
    for rec in records:
        lines.append("\t".join((rec.id, str(rec.label_id), str(rec.offset),
                                str(rec.n_layers), str(rec.height), str(rec.width))))
    index_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_split(plan, split_path)
    return PackedDataset(blob_path, records, plan)


def _read_index(index_path) -> list:
    lines = Path(index_path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(INDEX_VERSION + "\t"):
        raise DatasetFormatError(f"{index_path}: not an {INDEX_VERSION} file")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 6:
            raise DatasetFormatError(f"{index_path}:{lineno}: expected 6 fields")
        sample_id, label_id, offset, n_layers, height, width = fields
        records.append(IndexRecord(sample_id, int(label_id), int(offset),
                                   int(n_layers), int(height), int(width)))
    return records


def read_packed(path) -> PackedDataset:
    """Open a packed dataset; header and index load eagerly, tensors lazily.

    Distinct failures are distinctly reported: bad magic, unsupported
    version, unsupported dtype, truncated blob, and index/blob
    inconsistencies each carry their own message.
    """
    blob_path, index_path, split_path = _paths(path)
    if not blob_path.is_file():
        raise DatasetFormatError(f"{blob_path}: no such blob")
    with open(blob_path, "rb") as fh:
        header = fh.read(HEADER_SIZE)
    if len(header) < HEADER_SIZE:
        raise DatasetFormatError(f"{blob_path}: truncated blob (short header)")
    magic, version, dtype, _, count, n_layers, height, width = struct.unpack(
        _HEADER_FMT, header[:struct.calcsize(_HEADER_FMT)])
    if magic != PSTK_MAGIC:
        raise DatasetFormatError(f"{blob_path}: bad magic {magic!r}")
    if version != PSTK_VERSION:
        raise DatasetFormatError(
            f"{blob_path}: unsupported format version {version} (expected {PSTK_VERSION})")
    if dtype != PSTK_DTYPE_U8:
        raise DatasetFormatError(f"{blob_path}: unsupported dtype code {dtype}")

    records = _read_index(index_path)
    if len(records) != count:
        raise DatasetFormatError(
            f"{index_path}: {len(records)} index rows but blob header says {count}")
    expected = HEADER_SIZE
    for rec in records:
        if rec.offset != expected:
            raise DatasetFormatError(
                f"{index_path}: offset {rec.offset} for {rec.id!r}, expected {expected} "
                f"(offsets must be contiguous and increasing)")
        if (rec.n_layers, rec.height, rec.width) != (n_layers, height, width):
            raise DatasetFormatError(
                f"{index_path}: {rec.id!r} shape disagrees with blob header")
        expected += rec.nbytes
    actual = blob_path.stat().st_size
    if actual < expected:
        raise DatasetFormatError(
            f"{blob_path}: truncated blob ({actual} bytes, expected {expected})")
    if actual > expected:
        raise DatasetFormatError(
            f"{blob_path}: blob larger than index accounts for "
            f"({actual} bytes, expected {expected})")
    split = read_split(split_path)
    return PackedDataset(blob_path, records, split)
