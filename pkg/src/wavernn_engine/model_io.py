"""Single-file model storage.

Layout::

    8 bytes   magic  b"WRNNMDL\\0"
    u32 LE    format version
    u32 LE    header length H
    H bytes   UTF-8 JSON header
    payload   tensor records back to back, offsets given in the header

Dense tensors are stored at their native width so a round trip is bit-exact.
Block-sparse tensors store a packed mask (one bit per block) followed by the
retained float16 values. Training masks are stored as packed bits too.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cell import CellConfig, CellParams
from .errors import InputError
from .sparse import BlockShape, BlockSparseMatrix, SparsityMask, compress
from .subscale import CondNetParams, FusedConfig, FusedParams, SubscaleConfig

MAGIC = b"WRNNMDL\0"
VERSION = 1
_DTYPES = {"float16": 16, "float32": 32, "float64": 64}


@dataclass
class Model:
    params: CellParams | FusedParams
    masks: dict[str, SparsityMask] = field(default_factory=dict)
    subscale: SubscaleConfig | None = None
    cond_net: CondNetParams | None = None

    @property
    def kind(self) -> str:
        return "fused" if isinstance(self.params, FusedParams) else "cell"

    def inference_params(self) -> CellParams | FusedParams:
        """Cell weights with every masked matrix compressed to block-sparse float16."""
        if self.kind == "fused" or not self.masks:
            return self.params
        from .train import masks_to_tensors
        p = self.params
        out = {}
        for name, elem in masks_to_tensors(self.masks).items():
            bs = self.masks["R_u" if name == "R" else name].block_shape
            out[name] = compress(getattr(p, name), SparsityMask.from_elements(elem, bs))
        return CellParams(p.config, **{**p.tensors(), **out})


class _Writer:
    def __init__(self):
        self.chunks: list[bytes] = []
        self.offset = 0

    def add(self, data: bytes) -> tuple[int, int]:
        start = self.offset
        self.chunks.append(data)
        self.offset += len(data)
        return start, len(data)


def _dense_record(w: _Writer, name, arr):
    arr = np.asarray(arr)
    if arr.dtype.name not in _DTYPES:
        raise InputError(f"tensor {name} has unsupported dtype {arr.dtype}")
    off, n = w.add(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
    return {"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name,
            "width": _DTYPES[arr.dtype.name], "block_shape": None, "offset": off, "nbytes": n}


def _mask_fields(w: _Writer, mask: SparsityMask):
    off, n = w.add(mask.bits.tobytes())
    return {"block_shape": str(mask.block_shape), "mask_offset": off, "mask_nbytes": n,
            "mask_bits": mask.n_bits}


def _sparse_record(w: _Writer, name, s: BlockSparseMatrix):
    rec = {"name": name, "shape": [s.n_rows, s.n_cols], "dtype": "float16", "width": 16}
    rec.update(_mask_fields(w, s.mask()))
    off, n = w.add(s.values.astype("<f2").tobytes())
    rec.update(offset=off, nbytes=n)
    return rec


def save_model(path, model: Model):
    """Write atomically: a temporary file in the same directory is renamed over ``path``."""
    w = _Writer()
    p = model.params
    tensors = []
    for name, t in p.tensors().items():
        tensors.append(_sparse_record(w, name, t) if isinstance(t, BlockSparseMatrix)
                       else _dense_record(w, name, t))
    masks = []
    for name, m in model.masks.items():
        rec = {"name": name, "shape": [m.n_rows, m.n_cols]}
        rec.update(_mask_fields(w, m))
        masks.append(rec)
    cnet = None
    if model.cond_net is not None:
        cnet = {"B": model.cond_net.B, "dilations": list(model.cond_net.dilations),
                "tensors": [_dense_record(w, k, v) for k, v in model.cond_net.tensors().items()]}
    payload = b"".join(w.chunks)
    header = {
        "kind": model.kind,
        "config": asdict(p.config),
        "subscale": asdict(model.subscale) if model.subscale else None,
        "cond_net": cnet,
        "tensors": tensors,
        "masks": masks,
        "payload_bytes": len(payload),
        "payload_crc32": zlib.crc32(payload),
    }
    hb = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC + struct.pack("<II", VERSION, len(hb)) + hb + payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_dense(payload, rec):
    end = rec["offset"] + rec["nbytes"]
    if end > len(payload):
        raise InputError(f"tensor {rec['name']} runs past the end of the file")
    dt = np.dtype(rec["dtype"]).newbyteorder("<")
    arr = np.frombuffer(payload[rec["offset"]:end], dtype=dt).astype(rec["dtype"])
    return arr.reshape(rec["shape"])


def _read_mask(payload, rec):
    bs = BlockShape.parse(rec["block_shape"])
    bits = np.frombuffer(payload[rec["mask_offset"]:rec["mask_offset"] + rec["mask_nbytes"]],
                         dtype=np.uint8).copy()
    bits.flags.writeable = False
    m = SparsityMask(bs, rec["shape"][0], rec["shape"][1], bits)
    if m.n_bits != rec["mask_bits"] or len(bits) != (m.n_bits + 7) // 8:
        raise InputError(f"mask for {rec['name']} has the wrong size")
    return m


def load_model(path) -> Model:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read model {path}: {exc.strerror}") from None
    if len(data) < 16 or data[:8] != MAGIC:
        raise InputError(f"{path} is not a model file")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise InputError(f"{path}: unsupported format version {version}")
    try:
        header = json.loads(data[16:16 + hlen])
    except (ValueError, UnicodeDecodeError):
        raise InputError(f"{path}: corrupt header") from None
    payload = data[16 + hlen:]
    if len(payload) != header["payload_bytes"] or zlib.crc32(payload) != header["payload_crc32"]:
        raise InputError(f"{path}: payload is truncated or corrupt")

    tensors = {}
    for rec in header["tensors"]:
        if rec["block_shape"] is None:
            tensors[rec["name"]] = _read_dense(payload, rec)
        else:
            vals = _read_dense(payload, {**rec, "shape": [-1]})
            tensors[rec["name"]] = BlockSparseMatrix.from_mask_and_values(
                _read_mask(payload, rec), vals)
    if header["kind"] == "fused":
        params = FusedParams(FusedConfig(**header["config"]), **tensors)
    else:
        params = CellParams(CellConfig(**header["config"]), **tensors)
    masks = {rec["name"]: _read_mask(payload, rec) for rec in header["masks"]}
    sub = SubscaleConfig(**header["subscale"]) if header["subscale"] else None
    cnet = None
    if header["cond_net"]:
        c = header["cond_net"]
        cnet = CondNetParams.from_tensors(
            c["B"], c["dilations"], {r["name"]: _read_dense(payload, r) for r in c["tensors"]})
    return Model(params, masks, sub, cnet)
