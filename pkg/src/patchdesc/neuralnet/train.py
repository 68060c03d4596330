"""Contrastive training loop and the batch-matching validator.

SGD with momentum and cosine learning-rate decay over sampled-pair
batches.  Every patch is lexicographically sorted and canonically
aligned before encoding.  All randomness derives from (seed, epoch), so
a run is reproducible and a run resumed from the float32-quantized
epoch checkpoint continues on the exact trajectory of an uninterrupted
run (single-threaded).
"""

import os
import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, NumericalError
from .checkpoint import quantize_f32, save_checkpoint
from .encoder import (calibrate_encoder, encode_packed, encode_patches, init_encoder,
                      pack_patches, prepare_points)
from .simsiam import init_head, matching_accuracy, mean_pairwise_cosine, simsiam_loss


@dataclass
class TrainConfig:
    batch_pairs: int = 256
    epochs: int = 1
    learning_rate: float | None = None  # default: 0.05 * batch_pairs / 256
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    d_out: int = 2048
    k_neighbors: int = 20
    head_hidden: int = 512
    use_stop_gradient: bool = True
    # refresh the frozen pooled-feature standardization on a fixed sample
    # every N steps (and at each epoch start); 0 disables refreshes
    recalibrate_every: int = 100
    calibration_sample: int = 256

    def validate(self):
        if self.batch_pairs < 2:
            raise ConfigurationError("batch_pairs must be >= 2 (the validator needs distractors)")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        return self

    @property
    def base_lr(self):
        if self.learning_rate is not None:
            return self.learning_rate
        return 0.05 * self.batch_pairs / 256.0


@dataclass
class TrainResult:
    encoder: object
    head: object
    opt_state: dict
    log: list = field(default_factory=list)  # dicts: epoch, loss, val_acc


def init_model(config):
    rng = np.random.default_rng([config.seed, 101])
    encoder = init_encoder(rng, d_out=config.d_out, k_neighbors=config.k_neighbors)
    head = init_head(rng, d_in=config.d_out, hidden=config.head_hidden)
    return encoder, head


def _sgd_step(named_params, buffers, lr, momentum, weight_decay):
    for name, p in named_params:
        grad = p.grad
        if grad is None:
            continue
        if weight_decay and p.data.ndim >= 2:
            grad = grad + weight_decay * p.data
        buf = buffers[name]
        buf *= momentum
        buf += grad
        p.data -= lr * buf
        p.grad = None


def prepare_pairs(pairs):
    """Sort + canonically align both members of every pair once."""
    return [(prepare_points(p.a.points), prepare_points(p.b.points)) for p in pairs]


def train(pairs, config, out_dir=None, val_pairs=None, encoder=None, head=None,
          opt_state=None, log_fn=None, prepared=None):
    """Train over PatchPairs; returns TrainResult.

    Pass encoder/head/opt_state from a loaded checkpoint to resume; the
    epoch counter lives in opt_state and config.epochs is the total target.
    Checkpoints (epoch_%04d.ckpt) are written per epoch when out_dir is set.
    A non-finite loss aborts with the failing epoch/batch; the last epoch
    checkpoint remains on disk.
    """
    config.validate()
    if len(pairs) < config.batch_pairs:
        raise ConfigurationError(
            f"dataset has {len(pairs)} pairs, fewer than batch_pairs={config.batch_pairs}")
    if encoder is None or head is None:
        encoder, head = init_model(config)
    if opt_state is None:
        opt_state = {"momentum": {}, "epoch": 0}
    opt_state.setdefault("momentum", {})
    start_epoch = int(opt_state.get("epoch", 0))

    named = list(encoder.named_parameters()) + list(head.named_parameters())
    buffers = opt_state["momentum"]
    for name, p in named:
        if name not in buffers:
            buffers[name] = np.zeros_like(p.data)

    if prepared is None:
        prepared = prepare_pairs(pairs)
    calibration_set = [p[0] for p in prepared[:config.calibration_sample]]
    n_batches = len(prepared) // config.batch_pairs
    total_steps = max(config.epochs * n_batches, 1)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    log = []
    for epoch in range(start_epoch, config.epochs):
        order = np.random.default_rng([config.seed, 997, epoch]).permutation(len(prepared))
        epoch_loss = 0.0
        tic = time.time()
        for b in range(n_batches):
            if b == 0 or (config.recalibrate_every
                          and b % config.recalibrate_every == 0):
                calibrate_encoder(encoder, calibration_set)
            idx = order[b * config.batch_pairs:(b + 1) * config.batch_pairs]
            pts_a = [prepared[i][0] for i in idx]
            pts_b = [prepared[i][1] for i in idx]
            try:
                desc_a = encode_packed(pack_patches(pts_a, config.k_neighbors), encoder)
                desc_b = encode_packed(pack_patches(pts_b, config.k_neighbors), encoder)
                loss = simsiam_loss(desc_a, desc_b, head,
                                    use_stop_gradient=config.use_stop_gradient)
                loss_val = float(loss.data)
                if not np.isfinite(loss_val):
                    raise NumericalError("non-finite loss")
                loss.backward()
            except NumericalError as exc:
                raise NumericalError(
                    f"training aborted at epoch {epoch} batch {b}: {exc}") from exc
            step = epoch * n_batches + b
            lr = config.base_lr * 0.5 * (1.0 + np.cos(np.pi * step / total_steps))
            _sgd_step(named, buffers, lr, config.momentum, config.weight_decay)
            epoch_loss += loss_val
        opt_state["epoch"] = epoch + 1
        quantize_f32(encoder, head, opt_state)
        if out_dir:
            save_checkpoint(os.path.join(out_dir, f"epoch_{epoch:04d}.ckpt"),
                            encoder, head, opt_state)
        row = {"epoch": epoch, "loss": epoch_loss / max(n_batches, 1),
               "val_acc": float("nan"), "seconds": time.time() - tic}
        if val_pairs is not None:
            row["val_acc"] = validate_matching(val_pairs, encoder)
        log.append(row)
        if log_fn:
            log_fn(row)
    return TrainResult(encoder=encoder, head=head, opt_state=opt_state, log=log)


def validate_matching(pairs, encoder, batch_size=128):
    """Top-1 matching accuracy over one batch of pairs: each source patch
    must pick its own partner among all target patches by cosine."""
    if len(pairs) < 2:
        raise ConfigurationError("validation needs at least 2 pairs")
    desc_a = encode_patches([p.a.points for p in pairs], encoder, batch_size=batch_size)
    desc_b = encode_patches([p.b.points for p in pairs], encoder, batch_size=batch_size)
    return matching_accuracy(desc_a, desc_b)


def collapse_statistic(pairs, encoder, sample=256, batch_size=128):
    """Mean pairwise cosine among descriptors of distinct surfaces."""
    take = pairs[:sample]
    desc = encode_patches([p.a.points for p in take], encoder, batch_size=batch_size)
    return mean_pairwise_cosine(desc)
