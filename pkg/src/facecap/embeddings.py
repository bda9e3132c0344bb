"""Labeled embedding datasets and their on-disk formats.

EMB1 binary layout (all integers little-endian)::

    b"EMB1" | u32 count | u32 dim
    per record: u16 len | label utf-8 | u16 len | image id utf-8 | dim x f32

CSV layout: header ``identity,image_id,v0,...,v{d-1}``.
"""
from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import DegenerateEmbeddingError

MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sII")
_U16 = struct.Struct("<H")


class EmbeddingFormatError(ValueError):
    """Malformed file or record."""


class TruncatedPayloadError(EmbeddingFormatError):
    def __init__(self, detail: str):
        super().__init__(f"truncated payload: {detail}")


class DimensionMismatchError(EmbeddingFormatError):
    pass


class DuplicateRecordError(EmbeddingFormatError):
    pass


@dataclass(frozen=True)
class EmbeddingDataset:
    """Unit-norm embeddings with an identity label and image id per row."""

    labels: tuple
    image_ids: tuple
    vectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return self.vectors.shape[0]

    @property
    def identities(self) -> list:
        """Distinct labels in first-appearance order."""
        return list(dict.fromkeys(self.labels))

    def identity_index(self) -> np.ndarray:
        lookup = {lab: k for k, lab in enumerate(self.identities)}
        return np.array([lookup[lab] for lab in self.labels], dtype=np.int64)


def make_dataset(labels, image_ids, vectors, normalize: bool = True, source: str = "") -> EmbeddingDataset:
    """Validate records and (optionally) project vectors onto the sphere."""
    labels = tuple(str(x) for x in labels)
    image_ids = tuple(str(x) for x in image_ids)
    vectors = np.array(vectors, dtype=np.float64)
    where = f" in {source}" if source else ""
    if vectors.ndim != 2:
        raise DimensionMismatchError(f"vectors must form a 2-d array{where}")
    if not (len(labels) == len(image_ids) == vectors.shape[0]):
        raise EmbeddingFormatError(f"record count mismatch{where}")
    if vectors.shape[1] < 1:
        raise DimensionMismatchError(f"zero-dimensional embeddings{where}")
    seen = {}
    for k, (lab, img) in enumerate(zip(labels, image_ids)):
        if not lab:
            raise EmbeddingFormatError(f"record {k}{where}: empty identity label")
        if (lab, img) in seen:
            raise DuplicateRecordError(
                f"record {k}{where}: duplicate (identity, image_id) = ({lab!r}, {img!r}), first at record {seen[(lab, img)]}"
            )
        seen[(lab, img)] = k
    if not np.all(np.isfinite(vectors)):
        k = int(np.flatnonzero(~np.all(np.isfinite(vectors), axis=1))[0])
        raise EmbeddingFormatError(f"record {k}{where}: non-finite coordinate")
    norms = np.linalg.norm(vectors, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        k = int(zero[0])
        raise DegenerateEmbeddingError(f"record {k}{where} ({labels[k]!r}, {image_ids[k]!r}) is the zero vector")
    if normalize:
        vectors = vectors / norms[:, None]
    vectors.setflags(write=False)
    return EmbeddingDataset(labels, image_ids, vectors)


# -- EMB1 -------------------------------------------------------------------

def _encode(text: str, what: str) -> bytes:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise EmbeddingFormatError(f"{what} longer than 65535 bytes")
    return _U16.pack(len(raw)) + raw


def dumps_emb1(labels, image_ids, vectors) -> bytes:
    vectors = np.asarray(vectors)
    n, d = vectors.shape
    parts = [_HEADER.pack(MAGIC, n, d)]
    payload = vectors.astype("<f4", copy=False)
    for lab, img, row in zip(labels, image_ids, payload):
        parts.append(_encode(str(lab), "identity label"))
        parts.append(_encode(str(img), "image id"))
        parts.append(row.tobytes())
    return b"".join(parts)


def parse_emb1(data: bytes, source: str = "") -> tuple[list, list, np.ndarray]:
    """Raw records of an EMB1 payload, vectors as stored (float32 -> float64)."""
    if len(data) < _HEADER.size:
        raise TruncatedPayloadError("header shorter than 12 bytes")
    magic, count, dim = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise EmbeddingFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if dim < 1:
        raise DimensionMismatchError("declared dimension is 0")
    off = _HEADER.size
    vec_bytes = 4 * dim
    labels, ids = [], []
    vectors = np.empty((count, dim), dtype=np.float64)

    def take(nbytes, k, what):
        nonlocal off
        if off + nbytes > len(data):
            raise TruncatedPayloadError(f"record {k}: {what} runs past end of data (declared {count} records)")
        chunk = data[off:off + nbytes]
        off += nbytes
        return chunk

    for k in range(count):
        texts = []
        for what in ("label length", "image id length"):
            (length,) = _U16.unpack(take(2, k, what))
            try:
                texts.append(take(length, k, what.replace(" length", "")).decode("utf-8"))
            except UnicodeDecodeError as exc:
                raise EmbeddingFormatError(f"record {k}: invalid utf-8 in {what[:-7]}") from exc
        labels.append(texts[0])
        ids.append(texts[1])
        vectors[k] = np.frombuffer(take(vec_bytes, k, "vector"), dtype="<f4")
    if off != len(data):
        raise TruncatedPayloadError(f"{len(data) - off} trailing bytes after {count} declared records")
    return labels, ids, vectors


def write_emb1(path, dataset_or_labels, image_ids=None, vectors=None) -> None:
    if isinstance(dataset_or_labels, EmbeddingDataset):
        ds = dataset_or_labels
        data = dumps_emb1(ds.labels, ds.image_ids, ds.vectors)
    else:
        data = dumps_emb1(dataset_or_labels, image_ids, vectors)
    Path(path).write_bytes(data)


# -- CSV --------------------------------------------------------------------

def dumps_csv(labels, image_ids, vectors) -> str:
    vectors = np.asarray(vectors, dtype=np.float64)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["identity", "image_id"] + [f"v{k}" for k in range(vectors.shape[1])])
    for lab, img, row in zip(labels, image_ids, vectors):
        w.writerow([lab, img] + [repr(float(v)) for v in row])
    return buf.getvalue()


def parse_csv(text: str, source: str = "") -> tuple[list, list, np.ndarray]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise EmbeddingFormatError("empty CSV file") from None
    if len(header) < 3 or header[0] != "identity" or header[1] != "image_id":
        raise EmbeddingFormatError("CSV header must start with identity,image_id,v0")
    dim = len(header) - 2
    expected = [f"v{k}" for k in range(dim)]
    if header[2:] != expected:
        raise EmbeddingFormatError("CSV vector columns must be named v0..v{d-1} in order")
    labels, ids, rows = [], [], []
    for k, rec in enumerate(reader):
        if not rec:
            continue
        if len(rec) != dim + 2:
            raise DimensionMismatchError(f"record {k} (line {k + 2}): {len(rec) - 2} coordinates, expected {dim}")
        try:
            rows.append([float(v) for v in rec[2:]])
        except ValueError as exc:
            raise EmbeddingFormatError(f"record {k} (line {k + 2}): {exc}") from exc
        labels.append(rec[0])
        ids.append(rec[1])
    return labels, ids, np.array(rows, dtype=np.float64).reshape(len(rows), dim)


def write_csv(path, dataset: EmbeddingDataset) -> None:
    Path(path).write_text(dumps_csv(dataset.labels, dataset.image_ids, dataset.vectors), encoding="utf-8")


# -- entry points -----------------------------------------------------------

def detect_format(path) -> str:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return "csv"
    with open(path, "rb") as fh:
        head = fh.read(4)
    return "emb1" if head == MAGIC else "csv"


def ingest(path, fmt: str | None = None, normalize: bool = True) -> EmbeddingDataset:
    """Read an EMB1 or CSV embedding file and project vectors to unit norm."""
    path = Path(path)
    fmt = (fmt or detect_format(path)).lower()
    if fmt == "emb1":
        labels, ids, vecs = parse_emb1(path.read_bytes(), str(path))
    elif fmt == "csv":
        labels, ids, vecs = parse_csv(path.read_text(encoding="utf-8"), str(path))
    else:
        raise ValueError(f"unknown embedding format {fmt!r}")
    return make_dataset(labels, ids, vecs, normalize=normalize, source=str(path))


def synthesize(identities: int, images: int, dim: int, noise: float, seed: int,
               label_prefix: str = "id") -> EmbeddingDataset:
    """Identity centres uniform on the sphere, images = normalize(centre + noise).

    ``noise`` is the per-coordinate Gaussian standard deviation.
    """
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    if identities < 1 or images < 1:
        raise ValueError("identities and images must be positive")
    if noise < 0:
        raise ValueError("noise must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    centres = rng.standard_normal((identities, dim))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    jitter = rng.standard_normal((identities, images, dim)) * noise
    vecs = (centres[:, None, :] + jitter).reshape(identities * images, dim)
    width = len(str(identities - 1))
    labels = [f"{label_prefix}{i:0{width}d}" for i in range(identities) for _ in range(images)]
    ids = [f"img{j}" for _ in range(identities) for j in range(images)]
    return make_dataset(labels, ids, vecs, normalize=True)
