"""SimSiam-style projector/predictor head and symmetric negative-cosine loss."""

from dataclasses import dataclass

import numpy as np

from ..errors import NumericalError, ShapeError
from . import tensor as T


def batch_standardize(x, eps=1e-5):
    """Per-feature standardization over the batch axis, gradient-flowing.

    The head-side analogue of BatchNorm's role in contrastive training:
    once the batch mean/variance are part of the graph, inflating a
    feature direction shared by every sample cannot reduce the loss, so
    representation collapse loses its easiest path.  Used only inside the
    training head; descriptors never depend on batch statistics.
    """
    mu = x.mean(axis=0, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=0, keepdims=True)
    return centered * (var + eps).pow_const(-0.5)


@dataclass
class SimSiamHead:
    """Projector (d_in -> h -> h) and predictor (h -> h/4 -> h).

    Hidden activations are batch-standardized with gradient flow; the
    projector output is standardized without an affine term.
    """

    pj_w1: T.Tensor
    pj_b1: T.Tensor
    pj_gain: T.Tensor
    pj_bias: T.Tensor
    pj_w2: T.Tensor
    pj_b2: T.Tensor
    pr_w1: T.Tensor
    pr_b1: T.Tensor
    pr_gain: T.Tensor
    pr_bias: T.Tensor
    pr_w2: T.Tensor
    pr_b2: T.Tensor
    hidden: int = 512

    def named_parameters(self):
        for name in ("pj_w1", "pj_b1", "pj_gain", "pj_bias", "pj_w2", "pj_b2",
                     "pr_w1", "pr_b1", "pr_gain", "pr_bias", "pr_w2", "pr_b2"):
            yield f"head.{name}", getattr(self, name)

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def project(self, x):
        h = batch_standardize(x @ self.pj_w1 + self.pj_b1)
        h = (h * self.pj_gain + self.pj_bias).relu()
        return batch_standardize(h @ self.pj_w2 + self.pj_b2)

    def predict(self, z):
        h = batch_standardize(z @ self.pr_w1 + self.pr_b1)
        h = (h * self.pr_gain + self.pr_bias).relu()
        return h @ self.pr_w2 + self.pr_b2


def init_head(rng, d_in=2048, hidden=512):
    bottleneck = hidden // 4

    def param(*shape, scale):
        return T.Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)

    def zeros(*shape):
        return T.Tensor(np.zeros(shape), requires_grad=True)

    def ones(*shape):
        return T.Tensor(np.ones(shape), requires_grad=True)

    return SimSiamHead(
        pj_w1=param(d_in, hidden, scale=np.sqrt(2.0 / d_in)),
        pj_b1=zeros(hidden), pj_gain=ones(hidden), pj_bias=zeros(hidden),
        pj_w2=param(hidden, hidden, scale=np.sqrt(1.0 / hidden)),
        pj_b2=zeros(hidden),
        pr_w1=param(hidden, bottleneck, scale=np.sqrt(2.0 / hidden)),
        pr_b1=zeros(bottleneck), pr_gain=ones(bottleneck), pr_bias=zeros(bottleneck),
        pr_w2=param(bottleneck, hidden, scale=np.sqrt(1.0 / bottleneck)),
        pr_b2=zeros(hidden),
        hidden=hidden,
    )


def _negative_cosine(p, target):
    return -((T.l2_normalize(p) * T.l2_normalize(target)).sum(axis=1).mean())


def simsiam_loss(x1, x2, head, use_stop_gradient=True):
    """0.5 D(p1, sg(z2)) + 0.5 D(p2, sg(z1)) with D the negative mean cosine.

    Bounded in [-1, 1]; -1 iff every (p, target) pair is positively
    collinear.  `use_stop_gradient=False` exists only for the collapse
    ablation.
    """
    if x1.shape != x2.shape:
        raise ShapeError(f"descriptor batches differ: {x1.shape} vs {x2.shape}")
    z1 = head.project(x1)
    z2 = head.project(x2)
    for z in (z1, z2):
        norms = np.linalg.norm(z.data, axis=1)
        if np.any(norms == 0.0):
            raise NumericalError("zero-norm projection in simsiam loss")
    p1 = head.predict(z1)
    p2 = head.predict(z2)
    t1 = T.stop_gradient(z1) if use_stop_gradient else z1
    t2 = T.stop_gradient(z2) if use_stop_gradient else z2
    return _negative_cosine(p1, t2) * 0.5 + _negative_cosine(p2, t1) * 0.5


def cosine_matrix(a, b):
    """Pairwise cosine similarity between rows of two float arrays."""
    an = a / np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1e-12)
    bn = b / np.maximum(np.linalg.norm(b, axis=1, keepdims=True), 1e-12)
    return an @ bn.T


def matching_accuracy(desc_a, desc_b):
    """Fraction of rows of desc_a whose best cosine match in desc_b is the
    same row index (argmax takes the lower index on ties)."""
    sim = cosine_matrix(desc_a, desc_b)
    return float(np.mean(sim.argmax(axis=1) == np.arange(len(desc_a))))


def mean_pairwise_cosine(descriptors):
    """Mean cosine over all unordered pairs of rows; the collapse statistic."""
    n = len(descriptors)
    if n < 2:
        raise ShapeError("need at least 2 descriptors")
    sim = cosine_matrix(descriptors, descriptors)
    return float((sim.sum() - np.trace(sim)) / (n * (n - 1)))
