"""Binary containers for datasets and model checkpoints.

Both share one layout::

    magic (8 bytes) | header length (uint64 LE) | UTF-8 JSON header | payload

Dataset payload: row-major float32 LE images for all samples, then one label
byte per sample at ``labels_offset`` (absolute file offset). Checkpoint payload:
named float64 LE blocks at the offsets listed in the header.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .imaging import DataError, SubjectDomain
from .model import CSDASA, ModelConfig
from .tensor import Tensor

DATASET_MAGIC = b"EEGTNSR1"
CHECKPOINT_MAGIC = b"EEGCKPT1"
_LEN = struct.Struct("<Q")


def _encode(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _pack(magic: bytes, header: dict, place, payload: list[bytes]) -> bytes:
    """Serialize with absolute offsets.

    ``place(header, base)`` writes offsets given the payload start; since the
    offsets are part of the header text we iterate until the length settles.
    """
    base = -1
    for _ in range(16):
        place(header, max(base, 0))
        new = len(magic) + _LEN.size + len(_encode(header))
        if new == base:
            hb = _encode(header)
            return b"".join([magic, _LEN.pack(len(hb)), hb, *payload])
        base = new
    raise RuntimeError("header offsets did not settle")


def _unpack(blob: bytes, magic: bytes, what: str) -> tuple[dict, int]:
    if len(blob) < len(magic) + _LEN.size:
        raise DataError(f"{what}: truncated before header at byte {len(blob)}")
    if blob[:len(magic)] != magic:
        raise DataError(f"{what}: bad magic {blob[:len(magic)]!r} at byte 0, expected {magic!r}")
    (n,) = _LEN.unpack_from(blob, len(magic))
    start = len(magic) + _LEN.size
    if start + n > len(blob):
        raise DataError(f"{what}: header of {n} bytes at byte {start} runs past end of file")
    try:
        header = json.loads(blob[start:start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{what}: unreadable header at byte {start}: {exc}") from None
    if not isinstance(header, dict):
        raise DataError(f"{what}: header at byte {start} is not an object")
    return header, start + n


# ---------------------------------------------------------------- datasets


def encode_dataset(domains: list[SubjectDomain], n_classes: int = 4) -> bytes:
    if not domains:
        raise DataError("dataset needs at least one subject")
    shape = domains[0].images.shape[1:]
    subjects, start = [], 0
    for d in domains:
        if d.images.shape[1:] != shape:
            raise DataError(f"subject {d.subject_id}: sample shape {d.images.shape[1:]} differs from {shape}")
        if d.n_labeled != len(d):
            raise DataError(f"subject {d.subject_id}: every sample needs a label to be stored")
        if len(d) == 0:
            raise DataError(f"subject {d.subject_id}: no samples")
        if np.any(d.labels >= n_classes):
            raise DataError(f"subject {d.subject_id}: label outside 0..{n_classes - 1}")
        subjects.append({"id": d.subject_id, "start": start, "count": len(d)})
        start += len(d)
    images = np.concatenate([d.images for d in domains]).astype("<f4")
    labels = np.concatenate([d.labels for d in domains]).astype(np.uint8)
    header = {"dims": [start, *shape], "subjects": subjects, "n_classes": n_classes}

    def place(h, base):
        h["labels_offset"] = base + images.nbytes

    return _pack(DATASET_MAGIC, header, place, [images.tobytes(), labels.tobytes()])


def decode_dataset(blob: bytes) -> list[SubjectDomain]:
    header, data_start = _unpack(blob, DATASET_MAGIC, "dataset")
    try:
        dims = [int(v) for v in header["dims"]]
        subjects = header["subjects"]
        labels_offset = int(header["labels_offset"])
        n_classes = int(header.get("n_classes", 4))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"dataset: malformed header at byte {len(DATASET_MAGIC) + _LEN.size}: {exc}") from None
    if len(dims) != 5 or min(dims[1:]) <= 0 or dims[0] < 0:
        raise DataError(f"dataset: dims {dims} must be [N, t, c, w, h]")
    n = dims[0]
    nbytes = 4 * int(np.prod(dims))
    if data_start + nbytes > len(blob):
        raise DataError(f"dataset: image block at byte {data_start} needs {nbytes} bytes, "
                        f"file has {len(blob) - data_start}")
    if labels_offset != data_start + nbytes:
        raise DataError(f"dataset: labels_offset {labels_offset} does not follow image block ending at "
                        f"byte {data_start + nbytes}")
    if labels_offset + n != len(blob):
        raise DataError(f"dataset: expected {n} label bytes at byte {labels_offset}, "
                        f"file has {len(blob) - labels_offset}")
    images = np.frombuffer(blob, dtype="<f4", count=int(np.prod(dims)), offset=data_start).reshape(dims)
    labels = np.frombuffer(blob, dtype=np.uint8, count=n, offset=labels_offset)
    bad = np.flatnonzero(labels >= n_classes)
    if bad.size:
        raise DataError(f"dataset: label {labels[bad[0]]} out of range 0..{n_classes - 1} "
                        f"at byte {labels_offset + int(bad[0])}")
    domains, expect = [], 0
    for s in subjects:
        sid, start, count = str(s["id"]), int(s["start"]), int(s["count"])
        if count <= 0:
            raise DataError(f"dataset: subject {sid} is empty")
        if start != expect or start + count > n:
            raise DataError(f"dataset: subject {sid} spans samples {start}..{start + count}, "
                            f"expected to start at {expect} within {n}")
        expect = start + count
        domains.append(SubjectDomain(sid, images[start:expect].astype(np.float64),
                                     labels[start:expect].astype(np.int64)))
    if expect != n:
        raise DataError(f"dataset: subjects cover {expect} of {n} samples")
    if len({d.subject_id for d in domains}) != len(domains):
        raise DataError("dataset: duplicate subject ids")
    return domains


def write_dataset(path, domains: list[SubjectDomain], n_classes: int = 4) -> None:
    Path(path).write_bytes(encode_dataset(domains, n_classes))


def load_dataset(path) -> list[SubjectDomain]:
    return decode_dataset(Path(path).read_bytes())


# ---------------------------------------------------------------- checkpoints


def encode_checkpoint(model: CSDASA, meta: dict | None = None) -> bytes:
    blocks = [(name, t.data) for name, t in model.params.items()]
    if model.reference is not None:
        blocks.append(("@reference", model.reference))
    entries, offset = [], 0
    for name, arr in blocks:
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += 8 * arr.size
    relative = [e["offset"] for e in entries]
    header = {"config": model.config.to_dict(), "frozen": sorted(model.frozen),
              "blocks": entries, "meta": meta or {}}

    def place(h, base):
        for e, rel in zip(h["blocks"], relative):
            e["offset"] = base + rel

    payload = [np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in blocks]
    return _pack(CHECKPOINT_MAGIC, header, place, payload)


def decode_checkpoint(blob: bytes) -> tuple[CSDASA, dict]:
    header, cursor = _unpack(blob, CHECKPOINT_MAGIC, "checkpoint")
    try:
        config = ModelConfig.from_dict(header["config"])
        entries = header["blocks"]
    except (KeyError, TypeError) as exc:
        raise DataError(f"checkpoint: malformed header: {exc}") from None
    expected = CSDASA.init(config, seed=0)
    params, reference = {}, None
    for e in entries:
        name, shape, off = e["name"], tuple(int(v) for v in e["shape"]), int(e["offset"])
        count = int(np.prod(shape)) if shape else 1
        if off != cursor or off + 8 * count > len(blob):
            raise DataError(f"checkpoint: block {name!r} at byte {off} (expected {cursor}) "
                            f"overruns or misaligns the file")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
        cursor = off + 8 * count
        if name == "@reference":
            reference = arr
            continue
        if name not in expected.params or expected.params[name].shape != shape:
            raise DataError(f"checkpoint: block {name!r} at byte {off} does not fit the stored config")
        params[name] = Tensor(arr, requires_grad=True, name=name)
    if cursor != len(blob):
        raise DataError(f"checkpoint: {len(blob) - cursor} trailing bytes at byte {cursor}")
    missing = set(expected.params) - set(params)
    if missing:
        raise DataError(f"checkpoint: missing blocks {sorted(missing)}")
    model = CSDASA(config, {n: params[n] for n in expected.params}, reference)
    for g in header.get("frozen", []):
        model.set_frozen(g, True)
    return model, header.get("meta", {})


def save_checkpoint(path, model: CSDASA, meta: dict | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(model, meta))


def load_checkpoint(path) -> tuple[CSDASA, dict]:
    return decode_checkpoint(Path(path).read_bytes())
