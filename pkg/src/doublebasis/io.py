"""Dataset, sample-set and model file formats.

Datasets are line-delimited JSON.  The first line is a metadata record, every
following line one instance::

    {"record": "meta", "format": "doublebasis-dataset", "version": 1, "kind": ...,
     "seed": ..., "stream": ..., "N": ..., "n": ..., "params": {...}, "transform": {...}}
    {"record": "instance", "index": 0, "response": 1.25, "points": [[0.1], [0.7], ...]}

Floats are written with ``repr`` precision so a dataset reloads bit-exactly.

Models use a small binary container::

    magic  b"DBMODEL\\0"            8 bytes
    version                          uint32 little-endian
    header length H                  uint32 little-endian
    header                           H bytes of UTF-8 JSON
    payload                          float64 little-endian arrays, in header order

The header lists every array's name and shape and carries a SHA-256 of the
payload.  Double-Basis models store the weights and the feature-map seed (the
random frequencies are regenerated and checked against a stored checksum);
Kernel-Kernel models store every training coefficient vector.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from doublebasis.basis import BasisConfig, DomainTransform, MultiIndexSet
from doublebasis.errors import DataError
from doublebasis.regress import DoubleBasisModel, KernelKernelModel
from doublebasis.rks import FeatureMap
from doublebasis.synth import Dataset

DATASET_FORMAT = "doublebasis-dataset"
DATASET_VERSION = 1
MODEL_MAGIC = b"DBMODEL\x00"
MODEL_VERSION = 1


def config_digest(config: dict) -> str:
    """Short stable digest of a JSON-compatible configuration."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# datasets


def _response_json(y):
    y = np.asarray(y, dtype=float)
    return float(y) if y.ndim == 0 else [float(v) for v in y]


def write_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    meta = {"record": "meta", "format": DATASET_FORMAT, "version": DATASET_VERSION,
            "kind": ds.kind, "seed": ds.meta.get("seed"), "stream": ds.meta.get("stream"),
            "N": len(ds), "n": ds.meta.get("n"),
            "params": {k: v for k, v in ds.meta.items()
                       if k not in ("kind", "seed", "stream", "N", "n")},
            "transform": ds.transform.to_dict()}
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(meta) + "\n")
        for i, (pts, y) in enumerate(zip(ds.sets, ds.responses)):
            rec = {"record": "instance", "index": i, "response": _response_json(y),
                   "points": np.asarray(pts, dtype=float).tolist()}
            fh.write(json.dumps(rec) + "\n")


def _records(path) -> Iterator[tuple[int, dict]]:
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: record {lineno} is not valid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise DataError(f"{path}: record {lineno} is not a JSON object")
            yield lineno, rec


def _instance_points(rec: dict, lineno: int, path) -> np.ndarray:
    try:
        pts = np.asarray(rec["points"], dtype=float)
    except (KeyError, TypeError, ValueError):
        raise DataError(f"{path}: record {lineno} has missing or non-numeric points") from None
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise DataError(f"{path}: record {lineno} must hold a nonempty (n, l) point array")
    return pts


def read_dataset(path) -> Dataset:
    """Load a dataset written by :func:`write_dataset`."""
    it = _records(path)
    try:
        lineno, meta = next(it)
    except StopIteration:
        raise DataError(f"{path}: empty dataset file") from None
    if meta.get("record") != "meta" or meta.get("format") != DATASET_FORMAT:
        raise DataError(f"{path}: record {lineno} is not a dataset metadata record")
    if meta.get("version") != DATASET_VERSION:
        raise DataError(f"{path}: unsupported dataset version {meta.get('version')!r}")
    sets, responses = [], []
    for lineno, rec in it:
        if rec.get("record") != "instance":
            raise DataError(f"{path}: record {lineno} is not an instance record")
        sets.append(_instance_points(rec, lineno, path))
        if rec.get("response") is None:
            raise DataError(f"{path}: record {lineno} has no response")
        responses.append(rec["response"])
    if not sets:
        raise DataError(f"{path}: dataset has no instances")
    if len({s.shape[1] for s in sets}) != 1:
        raise DataError(f"{path}: instances disagree on point dimension")
    try:
        Y = np.asarray(responses, dtype=float)
        transform = DomainTransform.from_dict(meta["transform"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed responses or transform ({exc})") from None
    info = dict(meta.get("params", {}))
    info.update(kind=meta["kind"], seed=meta.get("seed"), stream=meta.get("stream"),
                N=len(sets), n=meta.get("n"))
    return Dataset(meta["kind"], sets, Y, transform, info)


def read_sample_sets(path) -> list[np.ndarray]:
    """Sample sets for prediction.

    ``.jsonl`` files hold instance records (a dataset file works, responses
    are ignored).  Any other file is whitespace- or comma-delimited rows of
    coordinates, with blank lines separating sets.
    """
    path = Path(path)
    sets: list[np.ndarray] = []
    if path.suffix == ".jsonl":
        sets = [_instance_points(rec, lineno, path) for lineno, rec in _records(path)
                if rec.get("record", "instance") == "instance"]
    else:
        blocks, block = [], []
        with path.open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if line.startswith("#"):
                    continue
                if not line:
                    if block:
                        blocks.append(block)
                        block = []
                    continue
                try:
                    block.append([float(v) for v in line.replace(",", " ").split()])
                except ValueError:
                    raise DataError(f"{path}: line {lineno} is not numeric") from None
        if block:
            blocks.append(block)
        for k, rows in enumerate(blocks, start=1):
            if len({len(r) for r in rows}) != 1:
                raise DataError(f"{path}: sample set {k} has ragged rows")
            sets.append(np.asarray(rows))
    if not sets:
        raise DataError(f"{path}: no sample sets found")
    return sets


# ---------------------------------------------------------------------------
# models


def _index_header(idx: MultiIndexSet) -> dict:
    return {"config": idx.config.to_dict(), "truncation": idx.truncation,
            "indices": idx.indices.tolist()}


def _index_from_header(h: dict) -> MultiIndexSet:
    config = BasisConfig.from_dict(h["config"])
    return MultiIndexSet(np.asarray(h["indices"], dtype=np.int64).reshape(-1, config.dim),
                         float(h["truncation"]), config)


def save_model(model, path, digest: str | None = None) -> None:
    if isinstance(model, DoubleBasisModel):
        header = {"kind": "bb", "index_set": _index_header(model.index_set),
                  "feature_map": model.feature_map.to_dict(), "ridge": model.ridge,
                  "transform": model.transform.to_dict()}
        arrays = {"weights": model.weights, "bound": np.atleast_1d(model.bound)}
        shapes = {"bound": list(np.shape(model.bound))}
    elif isinstance(model, KernelKernelModel):
        header = {"kind": "kk", "index_set": _index_header(model.index_set),
                  "bandwidth": model.bandwidth, "kernel": model.kernel,
                  "transform": model.transform.to_dict()}
        arrays = {"coefficients": model.coefficients, "responses": model.responses}
        shapes = {}
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays.values())
    header["arrays"] = [{"name": k, "shape": list(np.shape(a)), "logical_shape": shapes.get(k)}
                        for k, a in arrays.items()]
    header["payload_sha256"] = hashlib.sha256(payload).hexdigest()
    header["config_digest"] = digest
    header["meta"] = json.loads(json.dumps(model.meta, default=_json_default))
    blob = json.dumps(header).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_VERSION, len(blob)))
        fh.write(blob)
        fh.write(payload)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def load_model(path):
    """Load a model file and verify its checksums."""
    raw = Path(path).read_bytes()
    if raw[:8] != MODEL_MAGIC or len(raw) < 16:
        raise DataError(f"{path}: not a model file")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != MODEL_VERSION:
        raise DataError(f"{path}: unsupported model version {version}")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise DataError(f"{path}: corrupt model header") from None
    payload = raw[16 + hlen:]
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise DataError(f"{path}: payload checksum mismatch")
    arrays, offset = {}, 0
    for spec in header["arrays"]:
        count = int(np.prod(spec["shape"], dtype=np.int64))
        a = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(spec["shape"])
        offset += 8 * count
        if spec.get("logical_shape") is not None:
            a = a.reshape(spec["logical_shape"])
        arrays[spec["name"]] = a.astype(float)
    idx = _index_from_header(header["index_set"])
    transform = DomainTransform.from_dict(header["transform"])
    meta = dict(header.get("meta") or {})
    meta["config_digest"] = header.get("config_digest")
    if header["kind"] == "bb":
        fmap = FeatureMap.from_dict(header["feature_map"])
        bound = arrays["bound"]
        return DoubleBasisModel(idx, fmap, arrays["weights"], float(header["ridge"]),
                                float(bound) if bound.ndim == 0 else bound, transform, meta)
    if header["kind"] == "kk":
        return KernelKernelModel(idx, arrays["coefficients"], arrays["responses"],
                                 float(header["bandwidth"]), header["kernel"], transform, meta)
    raise DataError(f"{path}: unknown model kind {header['kind']!r}")
