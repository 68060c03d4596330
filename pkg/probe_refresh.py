"""Probe training dynamics with periodic standardization refresh (scratch)."""
import time

import numpy as np

from patchdesc import patchgen as pg
from patchdesc import neuralnet as nn
from patchdesc.neuralnet.encoder import calibrate_encoder
from patchdesc.neuralnet.train import _sgd_step

cfg = pg.GenConfig(degree_min=2, degree_max=4, n_min=32, n_max=96)
pairs = pg.generate_dataset(7, 600, cfg)
prepared = nn.prepare_pairs(pairs)
calib = [p[0] for p in prepared[:256]]
val_pairs = pg.generate_dataset(1234, 64, cfg)
probe_set = [p[0] for p in prepared[:200]]


def run(lr, momentum, batch, steps, refresh, seed=3, use_sg=True, wd=1e-4):
    tc = nn.TrainConfig(batch_pairs=batch, epochs=1, seed=seed, learning_rate=lr,
                        use_stop_gradient=use_sg)
    enc, head = nn.init_model(tc)
    named = list(enc.named_parameters()) + list(head.named_parameters())
    bufs = {n: np.zeros_like(p.data) for n, p in named}
    rng = np.random.default_rng(seed)
    hist = []
    for step in range(steps):
        if step % refresh == 0:
            calibrate_encoder(enc, calib)
        idx = rng.integers(0, len(prepared), batch)
        da = nn.encode_packed(nn.pack_patches([prepared[i][0] for i in idx], 20), enc)
        db = nn.encode_packed(nn.pack_patches([prepared[i][1] for i in idx], 20), enc)
        loss = nn.simsiam_loss(da, db, head, use_stop_gradient=use_sg)
        loss.backward()
        _sgd_step(named, bufs, lr, momentum, wd)
        if step in (0, 49, 99, 149, 199, steps - 1):
            mpc = nn.mean_pairwise_cosine(da.data)
            hist.append((step, float(loss.data), mpc))
    mpc200 = nn.mean_pairwise_cosine(
        nn.encode_patches(probe_set, enc, auto_align=False))
    acc = nn.validate_matching(val_pairs, enc)
    return hist, acc, mpc200


def main():
    for c in [
        dict(lr=0.002, momentum=0.9, batch=32, steps=200, refresh=50),
        dict(lr=0.005, momentum=0.0, batch=32, steps=200, refresh=50),
        dict(lr=0.01, momentum=0.0, batch=32, steps=200, refresh=50),
        dict(lr=0.005, momentum=0.0, batch=32, steps=200, refresh=50, use_sg=False),
    ]:
        t0 = time.time()
        hist, acc, mpc200 = run(**c)
        line = " | ".join(f"s{s}: L={l:.3f} mpc={m:.3f}" for s, l, m in hist)
        print(f"{c}\n   acc@64={acc:.3f} mpc@end(fresh200)={mpc200:.4f} "
              f"({time.time()-t0:.0f}s)\n   {line}", flush=True)


if __name__ == "__main__":
    main()
