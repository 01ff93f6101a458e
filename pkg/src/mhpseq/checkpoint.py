"""Binary model checkpoints.

Layout (all integers little-endian)::

    magic    8 bytes  b"MHPCKPT\\0"
    version  uint16   currently 1
    hlen     uint32   length of the JSON header in bytes
    header   hlen     UTF-8 JSON: family, M, epsilon, dims, meta
    count    uint32   number of tensors
    tensors  count x [name_len uint16, name UTF-8, ndim uint8,
                      ndim x uint32 dims, prod(dims) x float64 '<f8']

Tensors appear in parameter declaration order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ContractViolation
from .models import EncDecModel, Ensemble, GeneratorModel, Seq2SeqModel

MAGIC = b"MHPCKPT\0"
VERSION = 1
FAMILIES = {cls.family: cls for cls in (Seq2SeqModel, EncDecModel, GeneratorModel)}


def _write_tensors(fh, params):
    fh.write(struct.pack("<I", len(params)))
    for name, arr in params.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        fh.write(struct.pack("<H", len(raw)) + raw)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def _read_tensors(fh):
    (count,) = struct.unpack("<I", fh.read(4))
    params = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", fh.read(2))
        name = fh.read(n).decode("utf-8")
        (ndim,) = struct.unpack("<B", fh.read(1))
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    return params


def save_checkpoint(path, model, epsilon=0.0, meta=None):
    if isinstance(model, Ensemble):
        member = model.members[0]
        header = {"family": Ensemble.family, "member_family": member.family,
                  "dims": member.header()}
    else:
        header = {"family": model.family, "dims": model.header()}
    header.update({"M": model.num_hypotheses, "epsilon": float(epsilon), "meta": meta or {}})
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<H", VERSION) + struct.pack("<I", len(raw)) + raw)
        _write_tensors(fh, model.params)


def load_checkpoint(path):
    """Return ``(model, header)``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ContractViolation(f"{path} is not a checkpoint")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != VERSION:
            raise ContractViolation(f"unsupported checkpoint version {version}")
        try:
            (hlen,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(hlen).decode("utf-8"))
            params = _read_tensors(fh)
        except (struct.error, ValueError) as exc:
            raise ContractViolation(f"{path}: truncated or corrupt checkpoint") from exc
    if header["family"] == Ensemble.family:
        cls = FAMILIES[header["member_family"]]
        members = []
        for k in range(header["M"]):
            prefix = f"m{k}."
            members.append(cls.from_header(header["dims"], {n[len(prefix):]: v for n, v in params.items()
                                                           if n.startswith(prefix)}))
        return Ensemble(members), header
    return FAMILIES[header["family"]].from_header(header["dims"], params), header
