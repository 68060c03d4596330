"""Descriptor encoder.

Four operator blocks with scalar widths (64, 64, 128, 256); each block
mixes a scalar stream (per-point features) and a tangent vector stream
through the patch gradient/divergence/curl operators.  The per-point
outputs of all blocks are concatenated (512 channels), mean- and
max-pooled over the patch, and a final linear layer maps the pooled
1024-vector to the descriptor (default 2048 dims).

Input features are a constant channel plus the z coordinate in the
canonical frame; the vector stream starts at zero.  Patch points are
lexicographically sorted before alignment, which makes the whole
pipeline bitwise permutation-invariant.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from ..errors import ConfigurationError
from ..deltaops import build_operators
from ..geomcore.align import canonical_align_points
from . import tensor as T

WIDTHS = (64, 64, 128, 256)
VEC_WIDTHS = (16, 16, 32, 64)  # vector stream: width / 4
POINT_FEATURE_DIM = sum(WIDTHS)  # 512
MIN_PATCH_SIZE = 16


@dataclass
class BlockParams:
    w1: T.Tensor
    b1: T.Tensor
    w2: T.Tensor
    b2: T.Tensor
    ln_gain: T.Tensor
    ln_bias: T.Tensor
    wv: T.Tensor
    wg: T.Tensor
    bg: T.Tensor

    def named(self, prefix):
        for name in ("w1", "b1", "w2", "b2", "ln_gain", "ln_bias", "wv", "wg", "bg"):
            yield f"{prefix}.{name}", getattr(self, name)


@dataclass
class EncoderParams:
    blocks: list
    w_out: T.Tensor
    b_out: T.Tensor
    # frozen standardization of the pooled features, fitted once on a
    # calibration sample at init and stored in checkpoints; removes the
    # large feature common mode without any batch-dependent statistics
    feat_mean: np.ndarray = None
    feat_scale: np.ndarray = None
    d_out: int = 2048
    k_neighbors: int = 20

    def __post_init__(self):
        pooled = 2 * POINT_FEATURE_DIM
        if self.feat_mean is None:
            self.feat_mean = np.zeros(pooled)
        if self.feat_scale is None:
            self.feat_scale = np.ones(pooled)

    def named_parameters(self):
        for i, block in enumerate(self.blocks):
            yield from block.named(f"block{i}")
        yield "out.w", self.w_out
        yield "out.b", self.b_out

    def named_buffers(self):
        yield "out.feat_mean", self.feat_mean
        yield "out.feat_scale", self.feat_scale

    def parameters(self):
        return [t for _, t in self.named_parameters()]


def init_encoder(rng, d_out=2048, k_neighbors=20):
    """Fresh random encoder weights (He init for relu layers)."""
    def param(*shape, scale):
        return T.Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)

    blocks = []
    c_s, c_v = 2, 1  # constant+z scalar channels, zero vector field
    for width, v_width in zip(WIDTHS, VEC_WIDTHS):
        feat_in = 2 * c_s + 2 * c_v
        blocks.append(BlockParams(
            w1=param(feat_in, width, scale=np.sqrt(2.0 / feat_in)),
            b1=T.Tensor(np.zeros(width), requires_grad=True),
            w2=param(width, width, scale=np.sqrt(2.0 / width)),
            b2=T.Tensor(np.zeros(width), requires_grad=True),
            ln_gain=T.Tensor(np.ones(width), requires_grad=True),
            ln_bias=T.Tensor(np.zeros(width), requires_grad=True),
            wv=param(c_s + c_v, v_width, scale=np.sqrt(1.0 / (c_s + c_v))),
            wg=param(width, v_width, scale=np.sqrt(1.0 / width)),
            bg=T.Tensor(np.zeros(v_width), requires_grad=True),
        ))
        c_s, c_v = width, v_width
    pooled = 2 * POINT_FEATURE_DIM
    w_out = param(pooled, d_out, scale=np.sqrt(1.0 / pooled))
    b_out = T.Tensor(np.zeros(d_out), requires_grad=True)
    return EncoderParams(blocks=blocks, w_out=w_out, b_out=b_out,
                         d_out=d_out, k_neighbors=k_neighbors)


@dataclass
class PackedBatch:
    """Several patches packed into one graph forward."""

    points: np.ndarray          # (P, 3) concatenated
    starts: np.ndarray          # (B,)
    lengths: np.ndarray         # (B,)
    gradient: sparse.csr_matrix
    divergence: sparse.csr_matrix
    curl: sparse.csr_matrix
    even: np.ndarray
    odd: np.ndarray
    rep: np.ndarray             # [0,0,1,1,...]: point index per interleaved row

    @property
    def n_points(self):
        return len(self.points)


def prepare_points(points):
    """Canonical ordering + alignment: lexicographic sort then align."""
    points = np.asarray(points, dtype=np.float64)
    order = np.lexsort((points[:, 2], points[:, 1], points[:, 0]))
    aligned, _, _ = canonical_align_points(points[order])
    return aligned


def pack_patches(point_arrays, k_neighbors=20):
    """Build per-patch operators and assemble block-diagonal sparse maps."""
    grads, divs, curls = [], [], []
    for pts in point_arrays:
        if len(pts) < MIN_PATCH_SIZE:
            raise ConfigurationError(
                f"patch with {len(pts)} points is below the minimum {MIN_PATCH_SIZE}")
        ops, _ = build_operators(pts, k=min(k_neighbors, len(pts) - 1))
        grads.append(ops.gradient)
        divs.append(ops.divergence)
        curls.append(ops.curl)
    points = np.concatenate(point_arrays, axis=0)
    lengths = np.array([len(p) for p in point_arrays], dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    even = 2 * np.arange(len(points))
    return PackedBatch(
        points=points, starts=starts, lengths=lengths,
        gradient=sparse.block_diag(grads, format="csr"),
        divergence=sparse.block_diag(divs, format="csr"),
        curl=sparse.block_diag(curls, format="csr"),
        even=even, odd=even + 1,
        rep=np.repeat(np.arange(len(points)), 2),
    )


def _block_forward(block, s, v, packed):
    g = T.spmm(packed.gradient, s)
    gx = T.gather_rows(g, packed.even)
    gy = T.gather_rows(g, packed.odd)
    gmag = (gx * gx + gy * gy + 1e-12).sqrt()
    dv = T.spmm(packed.divergence, v)
    cv = T.spmm(packed.curl, v)
    feats = T.concat([s, gmag, dv, cv], axis=1)
    hidden = (feats @ block.w1 + block.b1).relu()
    s_out = T.layernorm(hidden @ block.w2 + block.b2, block.ln_gain, block.ln_bias)
    v_mix = T.concat([g, v], axis=1) @ block.wv
    gate = (s_out @ block.wg + block.bg).sigmoid()
    v_out = v_mix * T.gather_rows(gate, packed.rep)
    return s_out, v_out


def pooled_features(packed, params):
    """Per-patch pooled (mean|max) block features, before standardization."""
    n = packed.n_points
    s = T.Tensor(np.column_stack([np.ones(n), packed.points[:, 2]]))
    v = T.Tensor(np.zeros((2 * n, 1)))
    outputs = []
    for block in params.blocks:
        s, v = _block_forward(block, s, v, packed)
        outputs.append(s)
    feats = T.concat(outputs, axis=1)
    return T.concat([
        T.segment_mean(feats, packed.starts, packed.lengths),
        T.segment_max(feats, packed.starts, packed.lengths),
    ], axis=1)


def encode_packed(packed, params):
    """Descriptors for a packed batch; returns a (B, d_out) Tensor."""
    pooled = pooled_features(packed, params)
    standardized = (pooled - params.feat_mean) * (1.0 / params.feat_scale)
    return standardized @ params.w_out + params.b_out


def calibrate_encoder(params, point_arrays, batch_size=128):
    """Fit the frozen pooled-feature standardization on a sample of patches.

    Deterministic given the sample; stored with the parameters so saved
    models encode identically after reload.
    """
    rows = []
    for lo in range(0, len(point_arrays), batch_size):
        packed = pack_patches(point_arrays[lo:lo + batch_size], params.k_neighbors)
        rows.append(pooled_features(packed, params).data)
    feats = np.concatenate(rows, axis=0)
    params.feat_mean = feats.mean(axis=0)
    params.feat_scale = np.maximum(feats.std(axis=0), 1e-6)


def encode_patches(point_arrays, params, auto_align=True, batch_size=128):
    """Descriptors for a list of raw point arrays; returns (N, d_out) floats."""
    prepared = [prepare_points(p) if auto_align else np.asarray(p, dtype=np.float64)
                for p in point_arrays]
    rows = []
    for lo in range(0, len(prepared), batch_size):
        packed = pack_patches(prepared[lo:lo + batch_size], params.k_neighbors)
        rows.append(encode_packed(packed, params).data)
    return np.concatenate(rows, axis=0)


def encode_patch(patch, params, auto_align=True):
    """Descriptor of one PatchCloud (or raw (N,3) array)."""
    points = patch.points if hasattr(patch, "points") else np.asarray(patch)
    return encode_patches([points], params, auto_align=auto_align)[0]
