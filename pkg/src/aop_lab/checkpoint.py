"""Binary checkpoint format.

All integers and floats little-endian::

    8 bytes   magic b"AOPCKPT1"
    u32       input_dim
    u32       num_classes
    u32       number of hidden layers H
    u32 * H   hidden widths
    i64       seed
    i64       epoch
    u64       P = total parameter count
    f64 * P   parameters, layer by layer: weight matrix (row-major, (out, in)), then bias
    u8        has_mask (0/1)
      u64     W = number of weight entries (biases are never masked)
      u8 * ceil(W/8)  keep bits over the flattened weights, LSB-first within each byte
    u8        has_ema (0/1)
      f64 * P averaged parameters, same order as above
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .netcore import MlpSpec, ParamSet

MAGIC = b"AOPCKPT1"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    spec: MlpSpec
    params: ParamSet
    seed: int
    epoch: int
    mask: Optional[object] = None  # SparsityMask
    ema: Optional[ParamSet] = None


def _template(spec: MlpSpec) -> ParamSet:
    dims = spec.dims
    return ParamSet([np.zeros((o, i)) for i, o in zip(dims[:-1], dims[1:])], [np.zeros(o) for o in dims[1:]])


def save_checkpoint(path, spec: MlpSpec, params: ParamSet, seed: int, epoch: int, mask=None,
                    ema: Optional[ParamSet] = None) -> None:
    out = bytearray(MAGIC)
    out += struct.pack("<III", spec.input_dim, spec.num_classes, len(spec.hidden_widths))
    out += struct.pack(f"<{len(spec.hidden_widths)}I", *spec.hidden_widths)
    out += struct.pack("<qq", int(seed), int(epoch))
    flat = params.flat()
    out += struct.pack("<Q", flat.size)
    out += flat.astype("<f8").tobytes()
    if mask is None:
        out += b"\x00"
    else:
        bits = mask.flat()
        out += b"\x01" + struct.pack("<Q", bits.size)
        out += np.packbits(bits, bitorder="little").tobytes()
    if ema is None:
        out += b"\x00"
    else:
        out += b"\x01" + ema.flat().astype("<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> Checkpoint:
    from .pruning import SparsityMask

    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:8]!r}")
    pos = 8

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, buf, pos)
        pos += struct.calcsize(fmt)
        return vals

    input_dim, num_classes, n_hidden = take("<III")
    widths = take(f"<{n_hidden}I")
    seed, epoch = take("<qq")
    spec = MlpSpec(input_dim, tuple(widths), num_classes)
    template = _template(spec)
    (n_params,) = take("<Q")
    if n_params != template.total_count:
        raise CheckpointError(f"{path}: {n_params} parameters, spec implies {template.total_count}")
    flat = np.frombuffer(buf, dtype="<f8", count=n_params, offset=pos).astype(np.float64)
    pos += 8 * n_params
    params = template.like_from_flat(flat)
    (has_mask,) = take("<B")
    mask = None
    if has_mask:
        (n_bits,) = take("<Q")
        n_bytes = (n_bits + 7) // 8
        bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8, count=n_bytes, offset=pos),
                             count=n_bits, bitorder="little").astype(bool)
        pos += n_bytes
        mask = SparsityMask.from_flat(params, bits)
    (has_ema,) = take("<B")
    ema = None
    if has_ema:
        ema = template.like_from_flat(np.frombuffer(buf, dtype="<f8", count=n_params, offset=pos))
        pos += 8 * n_params
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return Checkpoint(spec, params, seed, epoch, mask, ema)
