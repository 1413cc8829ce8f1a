"""Binary files for models and datasets.

Both formats are one JSON header line followed by raw little-endian data:

* model:   header, then every ``W_i`` (row-major) and ``b_i`` as float64
* dataset: header, then the ``N x d`` image matrix as float64, then ``N``
  int64 labels

Headers carry a format name and version; extra metadata keys are kept.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .diffmodel import Classifier, Dataset

MODEL_FORMAT = "attacksearch-model"
DATASET_FORMAT = "attacksearch-dataset"
VERSION = 1


def _write(path, header: dict, arrays) -> None:
    head = json.dumps(header, sort_keys=True).encode() + b"\n"
    with open(path, "wb") as fh:
        fh.write(head)
        for a in arrays:
            fh.write(np.ascontiguousarray(a).astype(a.dtype.newbyteorder("<"), copy=False).tobytes())


def _read(path, expected_format: str):
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl])
    if header.get("format") != expected_format:
        raise ValueError(f"{path}: not a {expected_format} file")
    if header.get("version") != VERSION:
        raise ValueError(f"{path}: unsupported version {header.get('version')}")
    return header, raw[nl + 1:]


def save_model(model: Classifier, path, metadata: dict | None = None) -> None:
    header = {
        **(metadata or {}),
        "format": MODEL_FORMAT,
        "version": VERSION,
        "dims": model.dims,
        "activations": model.activations,
        "fingerprint": model_fingerprint(model),
    }
    _write(path, header, [p.astype("<f8") for p in model.parameters()])


def load_model(path) -> Classifier:
    header, body = _read(path, MODEL_FORMAT)
    dims = header["dims"]
    flat = np.frombuffer(body, dtype="<f8")
    expected = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    if flat.size != expected:
        raise ValueError(f"{path}: expected {expected} parameters, found {flat.size}")
    weights, biases, pos = [], [], 0
    for a, b in zip(dims[:-1], dims[1:]):
        weights.append(flat[pos:pos + a * b].reshape(a, b).astype(np.float64))
        pos += a * b
        biases.append(flat[pos:pos + b].astype(np.float64))
        pos += b
    return Classifier(dims, weights, biases, header["activations"])


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        return json.loads(fh.readline())


def save_dataset(data: Dataset, path, metadata: dict | None = None) -> None:
    header = {
        **(metadata or {}),
        "format": DATASET_FORMAT,
        "version": VERSION,
        "n": len(data),
        "d": data.dim,
        "n_classes": data.n_classes,
        "split": data.split,
    }
    _write(path, header, [data.images.astype("<f8"), data.labels.astype("<i8")])


def load_dataset(path) -> Dataset:
    header, body = _read(path, DATASET_FORMAT)
    n, d = header["n"], header["d"]
    if len(body) != n * d * 8 + n * 8:
        raise ValueError(f"{path}: payload size does not match header")
    images = np.frombuffer(body[: n * d * 8], dtype="<f8").reshape(n, d).astype(np.float64)
    labels = np.frombuffer(body[n * d * 8:], dtype="<i8").astype(np.int64)
    return Dataset(images, labels, header["split"], header["n_classes"])


def model_fingerprint(model: Classifier) -> str:
    h = hashlib.sha256(json.dumps([model.dims, model.activations]).encode())
    for p in model.parameters():
        h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return h.hexdigest()[:16]
