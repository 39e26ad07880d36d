"""On-disk formats: feature banks, label sidecars, checkpoints and CSV tables.

Feature bank layout (little-endian)::

    magic   4 bytes  b"CMRE"
    version u16      1
    count   u32      N
    dim     u32      D
    payload N*D float32, row-major

A bank at prefix ``p`` lives in ``p.bin`` with labels in ``p.json`` and an
optional ``p.meta.json`` carrying the per-row tensor shape. Stripe sets, if
any, are a second bank at ``p.stripes``.
"""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .enhancement import RunningStats
from .errors import FormatError
from .evalkit import EmbeddingBank
from .losses import THERMAL, VISIBLE
from .toytrain.model import ModelShape, ToyModel
from .toytrain.train import TrainConfig

MAGIC = b"CMRE"
VERSION = 1
HEADER = struct.Struct("<4sHII")

CKPT_MAGIC = b"CMCK"
CKPT_VERSION = 1

_MOD_TO_TEXT = {VISIBLE: "V", THERMAL: "T"}
_TEXT_TO_MOD = {v: k for k, v in _MOD_TO_TEXT.items()}


# -- feature banks -------------------------------------------------------------

def encode_feature_bank(rows) -> bytes:
    a = np.asarray(rows)
    if a.ndim != 2:
        raise FormatError(f"feature bank payload must be N x D, got shape {a.shape}")
    payload = np.ascontiguousarray(a, dtype="<f4")
    return HEADER.pack(MAGIC, VERSION, a.shape[0], a.shape[1]) + payload.tobytes()


def decode_feature_bank(data: bytes) -> np.ndarray:
    if len(data) < HEADER.size:
        raise FormatError("file too short for a feature bank header")
    magic, version, n, d = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    body = data[HEADER.size:]
    if len(body) != 4 * n * d:
        raise FormatError(f"payload is {len(body)} bytes, expected {4 * n * d}")
    return np.frombuffer(body, dtype="<f4").reshape(n, d).copy()


def write_feature_bank(path, rows) -> None:
    Path(path).write_bytes(encode_feature_bank(rows))


def read_feature_bank(path) -> np.ndarray:
    return decode_feature_bank(Path(path).read_bytes())


def write_labels(path, identity, modality, camera) -> None:
    records = [{"id": int(i), "modality": _MOD_TO_TEXT[int(m)], "camera": int(c)}
               for i, m, c in zip(identity, modality, camera)]
    Path(path).write_text(json.dumps(records, indent=1) + "\n")


def read_labels(path):
    records = json.loads(Path(path).read_text())
    if not isinstance(records, list):
        raise FormatError("label sidecar must be a JSON array")
    try:
        identity = np.array([int(r["id"]) for r in records], dtype=np.int64)
        modality = np.array([_TEXT_TO_MOD[r["modality"]] for r in records], dtype=np.int64)
        camera = np.array([int(r["camera"]) for r in records], dtype=np.int64)
    except (KeyError, TypeError) as e:
        raise FormatError(f"malformed label record: {e}") from e
    return identity, modality, camera


def save_bank(prefix, vectors, identity, modality, camera, row_shape=None, stripes=None) -> None:
    prefix = str(prefix)
    vectors = np.asarray(vectors)
    write_feature_bank(prefix + ".bin", vectors.reshape(len(vectors), -1))
    write_labels(prefix + ".json", identity, modality, camera)
    meta = {}
    if row_shape is not None:
        meta["row_shape"] = [int(x) for x in row_shape]
    if stripes is not None:
        stripes = np.asarray(stripes)
        meta["stripe_shape"] = [int(x) for x in stripes.shape[1:]]
        write_feature_bank(prefix + ".stripes.bin", stripes.reshape(len(stripes), -1))
    if meta:
        Path(prefix + ".meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")


def load_meta(prefix) -> dict:
    p = Path(str(prefix) + ".meta.json")
    return json.loads(p.read_text()) if p.exists() else {}


def load_rows(prefix) -> np.ndarray:
    """Bank rows reshaped to ``row_shape`` when the meta file declares one."""
    rows = read_feature_bank(str(prefix) + ".bin").astype(np.float64)
    shape = load_meta(prefix).get("row_shape")
    return rows.reshape(len(rows), *shape) if shape else rows


def load_bank(prefix) -> EmbeddingBank:
    prefix = str(prefix)
    vectors = read_feature_bank(prefix + ".bin").astype(np.float64)
    identity, modality, camera = read_labels(prefix + ".json")
    if len(identity) != len(vectors):
        raise FormatError(f"{prefix}: {len(vectors)} rows but {len(identity)} label records")
    meta = load_meta(prefix)
    stripes = None
    if "stripe_shape" in meta:
        stripes = read_feature_bank(prefix + ".stripes.bin").astype(np.float64)
        stripes = stripes.reshape(len(stripes), *meta["stripe_shape"])
    return EmbeddingBank(vectors, identity, modality, camera, stripes=stripes)


# -- checkpoints -------------------------------------------------------------

def encode_checkpoint(model, cfg) -> bytes:
    names = sorted(model.params)
    header = {
        "version": CKPT_VERSION,
        "config": cfg.to_text(),
        "shape": model.shape.__dict__,
        "params": [[n, list(model.params[n].shape)] for n in names],
        "running": {"momentum": model.running.momentum, "updates": model.running.updates},
    }
    head = json.dumps(header, sort_keys=True).encode()
    arrays = [model.params[n] for n in names] + [model.running.mean, model.running.var]
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    return CKPT_MAGIC + struct.pack("<I", len(head)) + head + payload


def decode_checkpoint(data: bytes):
    if data[:4] != CKPT_MAGIC:
        raise FormatError("not a checkpoint file")
    (hlen,) = struct.unpack_from("<I", data, 4)
    header = json.loads(data[8:8 + hlen])
    if header.get("version") != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {header.get('version')}")
    cfg = TrainConfig.from_text(header["config"])
    model = ToyModel(ModelShape(**header["shape"]), seed=cfg.seed, eps=cfg.eps,
                     bn_momentum=cfg.bn_momentum, bn_weight_mode=cfg.bn_weight_mode)
    offset = 8 + hlen

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape, dtype=np.int64))
        a = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += 8 * count
        return a

    try:
        for name, shape in header["params"]:
            model.params[name] = take(shape)
        d = model.shape.embed_dim
        model.running = RunningStats(take((d,)), take((d,)), header["running"]["momentum"],
                                     header["running"]["updates"])
    except ValueError as e:
        raise FormatError(f"truncated checkpoint: {e}") from e
    if offset != len(data):
        raise FormatError("trailing bytes after checkpoint payload")
    return model, cfg


def write_checkpoint(path, model, cfg) -> None:
    Path(path).write_bytes(encode_checkpoint(model, cfg))


def read_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())


# -- CSV -----------------------------------------------------------------------

def write_csv(path, rows, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r[c]) for c in columns])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v
