"""Checkpoint I/O: one-line JSON header + little-endian float32 blob.

The header records widths, descriptor size, optimizer metadata and the
name/shape/offset of every tensor (encoder, head, then momentum buffers),
in that order.  Training quantizes parameters to float32-representable
values at every epoch boundary before saving, so a saved file reproduces
the in-memory state exactly and resumed runs continue bit-for-bit.
"""

import json
import os

import numpy as np

from ..errors import DatasetIOError
from . import tensor as T
from .encoder import VEC_WIDTHS, WIDTHS, EncoderParams, init_encoder
from .simsiam import SimSiamHead, init_head

CHECKPOINT_VERSION = 1


def _named_tensors(encoder, head, opt_state):
    yield from encoder.named_parameters()
    yield from encoder.named_buffers()
    yield from head.named_parameters()
    for name, buf in opt_state["momentum"].items():
        yield f"momentum.{name}", buf


def _as_array(t):
    return t.data if isinstance(t, T.Tensor) else t


def quantize_f32(encoder, head, opt_state):
    """Round every parameter and momentum buffer to float32-representable
    float64 values, in place (save/load equivalence)."""
    for _, t in encoder.named_parameters():
        t.data = t.data.astype("<f4").astype(np.float64)
    encoder.feat_mean = encoder.feat_mean.astype("<f4").astype(np.float64)
    encoder.feat_scale = encoder.feat_scale.astype("<f4").astype(np.float64)
    for _, t in head.named_parameters():
        t.data = t.data.astype("<f4").astype(np.float64)
    for name in opt_state["momentum"]:
        opt_state["momentum"][name] = (
            opt_state["momentum"][name].astype("<f4").astype(np.float64))


def save_checkpoint(path, encoder, head, opt_state):
    records = []
    chunks = []
    offset = 0
    for name, t in _named_tensors(encoder, head, opt_state):
        arr = _as_array(t)
        records.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.astype("<f4").ravel())
        offset += arr.size
    header = {
        "version": CHECKPOINT_VERSION,
        "kind": "patchdesc-checkpoint",
        "widths": list(WIDTHS),
        "vec_widths": list(VEC_WIDTHS),
        "d_out": encoder.d_out,
        "k_neighbors": encoder.k_neighbors,
        "head_hidden": head.hidden,
        "optimizer": {k: v for k, v in opt_state.items() if k != "momentum"},
        "tensors": records,
    }
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(json.dumps(header).encode() + b"\n")
            fh.write(np.concatenate(chunks).astype("<f4").tobytes())
        os.replace(tmp, path)
    except OSError as exc:
        raise DatasetIOError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path):
    """Returns (encoder, head, opt_state, header)."""
    try:
        with open(path, "rb") as fh:
            header_line = fh.readline()
            blob = fh.read()
    except OSError as exc:
        raise DatasetIOError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as exc:
        raise DatasetIOError(f"{path}: malformed checkpoint header: {exc}") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise DatasetIOError(
            f"{path}: checkpoint version mismatch: expected {CHECKPOINT_VERSION}, "
            f"found {header.get('version')}")
    if tuple(header.get("widths", ())) != WIDTHS:
        raise DatasetIOError(
            f"{path}: width config mismatch: expected {list(WIDTHS)}, "
            f"found {header.get('widths')}")
    data = np.frombuffer(blob, dtype="<f4")

    encoder = init_encoder(np.random.default_rng(0), d_out=int(header["d_out"]),
                           k_neighbors=int(header["k_neighbors"]))
    head = init_head(np.random.default_rng(0), d_in=int(header["d_out"]),
                     hidden=int(header["head_hidden"]))
    opt_state = {"momentum": {}}
    opt_state.update(header.get("optimizer", {}))

    available = {}
    expected = dict((name, _as_array(t).shape)
                    for name, t in list(encoder.named_parameters())
                    + list(encoder.named_buffers())
                    + list(head.named_parameters()))
    for rec in header["tensors"]:
        shape = tuple(rec["shape"])
        size = int(np.prod(shape)) if shape else 1
        lo = rec["offset"]
        if lo + size > data.size:
            raise DatasetIOError(
                f"{path}: truncated checkpoint (tensor {rec['name']} needs "
                f"{lo + size} floats, blob has {data.size})")
        available[rec["name"]] = data[lo:lo + size].reshape(shape).astype(np.float64)
        base = rec["name"].removeprefix("momentum.")
        if base in expected and shape != expected[base]:
            raise DatasetIOError(
                f"{path}: tensor {rec['name']}: expected shape {expected[base]}, "
                f"found {shape}")

    for name, t in list(encoder.named_parameters()) + list(head.named_parameters()):
        if name not in available:
            raise DatasetIOError(f"{path}: checkpoint is missing tensor {name}")
        t.data = available[name]
    for name in ("out.feat_mean", "out.feat_scale"):
        if name not in available:
            raise DatasetIOError(f"{path}: checkpoint is missing tensor {name}")
    encoder.feat_mean = available["out.feat_mean"]
    encoder.feat_scale = available["out.feat_scale"]
    for name in available:
        if name.startswith("momentum."):
            opt_state["momentum"][name.removeprefix("momentum.")] = available[name]
    return encoder, head, opt_state, header
