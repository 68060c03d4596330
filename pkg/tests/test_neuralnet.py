import numpy as np
import pytest

from patchdesc import patchgen as pg
from patchdesc import neuralnet as nn
from patchdesc.errors import ConfigurationError, DatasetIOError, NumericalError
from patchdesc.neuralnet import tensor as T
from patchdesc.neuralnet.simsiam import SimSiamHead, batch_standardize
from conftest import random_rotation


def tiny_pairs(n_pairs, seed=5, n_min=24, n_max=48):
    cfg = pg.GenConfig(degree_min=2, degree_max=3, n_min=n_min, n_max=n_max)
    return pg.generate_dataset(seed, n_pairs, cfg)


@pytest.fixture(scope="module")
def encoder():
    return nn.init_encoder(np.random.default_rng(3), d_out=2048, k_neighbors=20)


class TestEncoder:
    def test_descriptor_shape_and_finite(self, rng, encoder):
        poly = pg.sample_polynomial(rng, (2, 3), 1.0)
        patch = pg.sample_patch(poly, 64, 1.0, rng)
        desc = nn.encode_patch(patch, encoder)
        assert desc.shape == (2048,)
        assert np.all(np.isfinite(desc))

    def test_widths_contract(self, encoder):
        assert nn.WIDTHS == (64, 64, 128, 256)
        assert nn.POINT_FEATURE_DIM == 512
        assert encoder.w_out.shape == (1024, 2048)

    def test_permutation_invariance_bitwise(self, rng, encoder):
        poly = pg.sample_polynomial(rng, (2, 4), 1.0)
        patch = pg.sample_patch(poly, 80, 1.0, rng)
        desc1 = nn.encode_patch(patch, encoder)
        perm = rng.permutation(80)
        desc2 = nn.encode_patch(patch.points[perm], encoder)
        assert np.array_equal(desc1, desc2)

    def test_rigid_motion_invariance(self, rng, encoder):
        hits = 0
        for _ in range(8):
            poly = pg.sample_polynomial(rng, (2, 4), 1.0)
            patch = pg.sample_patch(poly, 72, 1.0, rng)
            aligned = nn.prepare_points(patch.points)
            if np.min(np.abs(np.mean(aligned**3, axis=0))) < 1e-6:
                continue  # sign convention inactive; skip degenerate draws
            desc1 = nn.encode_patch(patch, encoder)
            moved = patch.points @ random_rotation(rng).T + rng.uniform(-3, 3, 3)
            desc2 = nn.encode_patch(moved, encoder)
            rel = np.linalg.norm(desc1 - desc2) / np.linalg.norm(desc1)
            assert rel < 1e-5
            hits += 1
        assert hits >= 3

    def test_translation_invariance(self, rng, encoder):
        poly = pg.sample_polynomial(rng, (2, 3), 1.0)
        patch = pg.sample_patch(poly, 64, 1.0, rng)
        desc1 = nn.encode_patch(patch, encoder)
        desc2 = nn.encode_patch(patch.points + np.array([10.0, -5.0, 2.0]), encoder)
        rel = np.linalg.norm(desc1 - desc2) / np.linalg.norm(desc1)
        assert rel < 1e-8

    def test_batch_equals_individual(self, rng, encoder):
        patches = [pg.sample_patch(pg.sample_polynomial(rng, (2, 3), 1.0),
                                   40, 1.0, rng).points for _ in range(4)]
        batch = nn.encode_patches(patches, encoder)
        single = np.stack([nn.encode_patch(p, encoder) for p in patches])
        assert np.allclose(batch, single, rtol=1e-12, atol=1e-12)

    def test_min_size_rejected(self, rng, encoder):
        pts = rng.normal(size=(15, 3))
        with pytest.raises(ConfigurationError):
            nn.encode_patches([pts], encoder, auto_align=False)


def small_head(rng, d_in=6, hidden=4):
    def p(*shape, scale=0.5):
        return T.Tensor(rng.normal(0, scale, shape), requires_grad=True)
    return SimSiamHead(
        pj_w1=p(d_in, hidden), pj_b1=p(hidden), pj_gain=p(hidden), pj_bias=p(hidden),
        pj_w2=p(hidden, hidden), pj_b2=p(hidden),
        pr_w1=p(hidden, 2), pr_b1=p(2), pr_gain=p(2), pr_bias=p(2),
        pr_w2=p(2, hidden), pr_b2=p(hidden), hidden=hidden)


class TestSimsiamLoss:
    def test_bounds(self, rng):
        head = small_head(rng)
        x1 = T.Tensor(rng.normal(size=(8, 6)))
        x2 = T.Tensor(rng.normal(size=(8, 6)))
        loss = nn.simsiam_loss(x1, x2, head)
        assert -1.0 <= float(loss.data) <= 1.0

    def test_negative_cosine_extremes(self, rng):
        from patchdesc.neuralnet.simsiam import _negative_cosine
        v = rng.normal(size=(5, 4))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        same = _negative_cosine(T.Tensor(v), T.stop_gradient(T.Tensor(v)))
        assert float(same.data) == pytest.approx(-1.0, abs=1e-12)
        w = np.zeros_like(v)
        w[:, [2, 3]] = v[:, [0, 1]]
        w[:, [0, 1]] = 0.0
        orth = _negative_cosine(T.Tensor(np.hstack([v[:, :2], np.zeros((5, 2))])),
                                T.Tensor(np.hstack([np.zeros((5, 2)), v[:, :2]])))
        assert float(orth.data) == pytest.approx(0.0, abs=1e-12)

    def test_full_loss_finite_difference(self, rng):
        head = small_head(rng)
        x1_base = rng.normal(size=(5, 6))
        x2_base = rng.normal(size=(5, 6))

        def loss_value():
            return float(nn.simsiam_loss(T.Tensor(x1_base), T.Tensor(x2_base),
                                         head).data)

        x1 = T.Tensor(x1_base, requires_grad=True)
        x2 = T.Tensor(x2_base, requires_grad=True)
        loss = nn.simsiam_loss(x1, x2, head)
        loss.backward()
        h = 1e-6
        for base, leaf in [(x1_base, x1), (x2_base, x2)]:
            flat = base.reshape(-1)
            num = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = loss_value()
                flat[i] = orig - h
                dn = loss_value()
                flat[i] = orig
                num[i] = (up - dn) / (2 * h)
            num = num.reshape(base.shape)
            scale = np.maximum(np.abs(num), 1e-2)
            assert np.max(np.abs(leaf.grad - num) / scale) < 1e-4
        # head parameter gradients too
        for name, param in head.named_parameters():
            got = param.grad
            flat = param.data.reshape(-1)
            num = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = loss_value()
                flat[i] = orig - h
                dn = loss_value()
                flat[i] = orig
                num[i] = (up - dn) / (2 * h)
            num = num.reshape(param.data.shape)
            scale = np.maximum(np.abs(num), 1e-2)
            assert np.max(np.abs(got - num) / scale) < 1e-4, name

    def test_stop_gradient_branch_zero(self, rng):
        head = small_head(rng)
        x1 = T.Tensor(rng.normal(size=(6, 6)))
        x2 = T.Tensor(rng.normal(size=(6, 6)), requires_grad=True)
        z2 = head.project(x2)
        p1 = head.predict(head.project(x1))
        from patchdesc.neuralnet.simsiam import _negative_cosine
        loss = _negative_cosine(p1, T.stop_gradient(z2))
        loss.backward()
        assert x2.grad is None  # the only path from x2 was stopped

    def test_zero_norm_rejected(self, rng):
        head = small_head(rng)
        for _, p in head.named_parameters():
            p.data *= 0.0
        x = T.Tensor(rng.normal(size=(4, 6)))
        with pytest.raises(NumericalError):
            nn.simsiam_loss(x, x, head)

    def test_batch_standardize_stats(self, rng):
        x = T.Tensor(rng.normal(3.0, 2.0, size=(32, 5)), requires_grad=True)
        y = batch_standardize(x)
        assert np.allclose(y.data.mean(axis=0), 0.0, atol=1e-10)
        assert np.allclose(y.data.std(axis=0), 1.0, atol=1e-2)


class TestMatchingMetrics:
    def test_identical_pairs_accuracy_one(self, rng):
        d = rng.normal(size=(16, 32))
        assert nn.matching_accuracy(d, d) == 1.0

    def test_constant_descriptors_tie_rule(self, rng):
        d = np.tile(rng.normal(size=32), (8, 1))
        # every row argmaxes to index 0; only source 0 is "correct"
        assert nn.matching_accuracy(d, d) == pytest.approx(1.0 / 8)

    def test_mean_pairwise_cosine_extremes(self, rng):
        same = np.tile(rng.normal(size=16), (10, 1))
        assert nn.mean_pairwise_cosine(same) == pytest.approx(1.0, abs=1e-12)
        orth = np.eye(8)
        assert nn.mean_pairwise_cosine(orth) == pytest.approx(0.0, abs=1e-12)


class TestTraining:
    def eval_loss(self, pairs, encoder, head, batch):
        prepared = nn.prepare_pairs(pairs)
        total = 0.0
        n_batches = len(prepared) // batch
        for b in range(n_batches):
            chunk = prepared[b * batch:(b + 1) * batch]
            da = nn.encode_packed(nn.pack_patches([c[0] for c in chunk], 20), encoder)
            db = nn.encode_packed(nn.pack_patches([c[1] for c in chunk], 20), encoder)
            total += float(nn.simsiam_loss(da, db, head).data)
        return total / n_batches

    def test_one_epoch_improves_loss(self):
        pairs = tiny_pairs(24)
        config = nn.TrainConfig(batch_pairs=8, epochs=1, seed=2,
                                learning_rate=0.01, recalibrate_every=0,
                                calibration_sample=48)
        encoder0, head0 = nn.init_model(config)
        from patchdesc.neuralnet.encoder import calibrate_encoder
        calibrate_encoder(encoder0, [nn.prepare_points(p.a.points) for p in pairs])
        init_loss = self.eval_loss(pairs, encoder0, head0, 8)
        result = nn.train(pairs, config)
        final_loss = self.eval_loss(pairs, result.encoder, result.head, 8)
        assert final_loss < init_loss

    def test_same_seed_identical_checkpoints(self, tmp_path):
        pairs = tiny_pairs(12)
        config = nn.TrainConfig(batch_pairs=4, epochs=1, seed=9,
                                learning_rate=0.005, calibration_sample=24)
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        nn.train(pairs, config, out_dir=out1)
        nn.train(pairs, config, out_dir=out2)
        b1 = (out1 / "epoch_0000.ckpt").read_bytes()
        b2 = (out2 / "epoch_0000.ckpt").read_bytes()
        assert b1 == b2

    def test_resume_matches_uninterrupted(self, tmp_path):
        pairs = tiny_pairs(12)
        base = dict(batch_pairs=4, seed=4, learning_rate=0.005,
                    calibration_sample=24)
        out_full = tmp_path / "full"
        nn.train(pairs, nn.TrainConfig(epochs=2, **base), out_dir=out_full)

        out_half = tmp_path / "half"
        nn.train(pairs, nn.TrainConfig(epochs=1, **base), out_dir=out_half)
        encoder, head, opt_state, _ = nn.load_checkpoint(out_half / "epoch_0000.ckpt")
        nn.train(pairs, nn.TrainConfig(epochs=2, **base), out_dir=out_half,
                 encoder=encoder, head=head, opt_state=opt_state)
        assert ((out_full / "epoch_0001.ckpt").read_bytes()
                == (out_half / "epoch_0001.ckpt").read_bytes())

    def test_batch_pairs_one_rejected(self):
        with pytest.raises(ConfigurationError):
            nn.TrainConfig(batch_pairs=1).validate()

    def test_dataset_too_small_rejected(self):
        pairs = tiny_pairs(4)
        with pytest.raises(ConfigurationError):
            nn.train(pairs, nn.TrainConfig(batch_pairs=8, epochs=1, seed=0))

    def test_nan_loss_aborts_with_location(self):
        pairs = tiny_pairs(8)
        config = nn.TrainConfig(batch_pairs=4, epochs=1, seed=1,
                                learning_rate=1e14, calibration_sample=16)
        with pytest.raises(NumericalError, match=r"epoch 0 batch \d+"):
            nn.train(pairs, config)

    def test_validate_matching_runs(self):
        pairs = tiny_pairs(8)
        config = nn.TrainConfig(batch_pairs=4, epochs=1, seed=2)
        encoder, _ = nn.init_model(config)
        acc = nn.validate_matching(pairs, encoder)
        assert 0.0 <= acc <= 1.0


class TestCheckpoint:
    def trained(self, tmp_path):
        pairs = tiny_pairs(8)
        config = nn.TrainConfig(batch_pairs=4, epochs=1, seed=6,
                                learning_rate=0.005, calibration_sample=16)
        return nn.train(pairs, config, out_dir=tmp_path), pairs

    def test_save_load_encode_bitwise(self, tmp_path):
        result, pairs = self.trained(tmp_path)
        encoder2, _, _, _ = nn.load_checkpoint(tmp_path / "epoch_0000.ckpt")
        d1 = nn.encode_patch(pairs[0].a, result.encoder)
        d2 = nn.encode_patch(pairs[0].a, encoder2)
        assert np.array_equal(d1, d2)

    def test_truncated_rejected(self, tmp_path):
        result, _ = self.trained(tmp_path)
        path = tmp_path / "epoch_0000.ckpt"
        data = path.read_bytes()
        path.write_bytes(data[:len(data) // 2])
        with pytest.raises(DatasetIOError, match="truncated"):
            nn.load_checkpoint(path)

    def test_width_mismatch_rejected(self, tmp_path):
        import json
        result, _ = self.trained(tmp_path)
        path = tmp_path / "epoch_0000.ckpt"
        with open(path, "rb") as fh:
            header = json.loads(fh.readline())
            blob = fh.read()
        header["widths"] = [64, 64, 128, 512]
        with open(path, "wb") as fh:
            fh.write(json.dumps(header).encode() + b"\n")
            fh.write(blob)
        with pytest.raises(DatasetIOError, match="width"):
            nn.load_checkpoint(path)

    def test_version_mismatch_rejected(self, tmp_path):
        import json
        result, _ = self.trained(tmp_path)
        path = tmp_path / "epoch_0000.ckpt"
        with open(path, "rb") as fh:
            header = json.loads(fh.readline())
            blob = fh.read()
        header["version"] = 99
        with open(path, "wb") as fh:
            fh.write(json.dumps(header).encode() + b"\n")
            fh.write(blob)
        with pytest.raises(DatasetIOError, match="version"):
            nn.load_checkpoint(path)
