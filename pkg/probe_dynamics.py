"""Hyperparameter probe for the contrastive training dynamics (scratch)."""
import sys
import time

import numpy as np

from patchdesc import patchgen as pg
from patchdesc import neuralnet as nn
from patchdesc.neuralnet.encoder import calibrate_encoder
from patchdesc.neuralnet.train import _sgd_step

cfg = pg.GenConfig(degree_min=2, degree_max=4, n_min=32, n_max=96)
pairs = pg.generate_dataset(7, 600, cfg)
prepared = nn.prepare_pairs(pairs)
val_pairs = pg.generate_dataset(1234, 64, cfg)


def run(lr, momentum, batch, steps, pred_lr_mult=1.0, pred_wd=True, seed=3, use_sg=True):
    tc = nn.TrainConfig(batch_pairs=batch, epochs=1, seed=seed, learning_rate=lr,
                        use_stop_gradient=use_sg)
    enc, head = nn.init_model(tc)
    calibrate_encoder(enc, [p[0] for p in prepared[:256]])
    enc_named = list(enc.named_parameters())
    pj_named = [(n, p) for n, p in head.named_parameters() if n.startswith("head.pj")]
    pr_named = [(n, p) for n, p in head.named_parameters() if n.startswith("head.pr")]
    bufs = {n: np.zeros_like(p.data) for n, p in enc_named + pj_named + pr_named}
    rng = np.random.default_rng(seed)
    hist = []
    for step in range(steps):
        idx = rng.integers(0, len(prepared), batch)
        pa = [prepared[i][0] for i in idx]
        pb = [prepared[i][1] for i in idx]
        da = nn.encode_packed(nn.pack_patches(pa, 20), enc)
        db = nn.encode_packed(nn.pack_patches(pb, 20), enc)
        loss = nn.simsiam_loss(da, db, head, use_stop_gradient=use_sg)
        loss.backward()
        _sgd_step(enc_named + pj_named, bufs, lr, momentum, 1e-4)
        _sgd_step(pr_named, bufs, lr * pred_lr_mult, momentum,
                  1e-4 if pred_wd else 0.0)
        if step % 50 == 49 or step == 0:
            mpc = nn.mean_pairwise_cosine(da.data)
            pair_cos = float(np.mean(np.sum(
                da.data / np.linalg.norm(da.data, axis=1, keepdims=True)
                * db.data / np.linalg.norm(db.data, axis=1, keepdims=True), axis=1)))
            hist.append((step, float(loss.data), mpc, pair_cos))
    acc = nn.validate_matching(val_pairs, enc)
    return hist, acc


def main():
    configs = [
        dict(lr=0.002, momentum=0.9, batch=32, steps=200),
        dict(lr=0.005, momentum=0.9, batch=32, steps=200),
        dict(lr=0.005, momentum=0.0, batch=32, steps=200),
        dict(lr=0.01, momentum=0.9, batch=32, steps=200, pred_lr_mult=10.0, pred_wd=False),
        dict(lr=0.002, momentum=0.9, batch=32, steps=200, pred_lr_mult=10.0, pred_wd=False),
    ]
    for c in configs:
        t0 = time.time()
        hist, acc = run(**c)
        line = " | ".join(f"s{s}: L={l:.3f} mpc={m:.3f} pair={p:.3f}" for s, l, m, p in hist)
        print(f"{c} -> acc@64={acc:.3f} ({time.time()-t0:.0f}s)\n   {line}", flush=True)


if __name__ == "__main__":
    main()
