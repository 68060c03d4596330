"""Command-line entry points.

Commands: gen-data, train, validate, cluster-eval, transition-eval,
match, error-curve.  All outputs land inside the command's --out
directory; metrics/plot data are CSV.  Exit codes: 0 ok, 2 configuration
error, 3 I/O error, 4 numerical/degenerate error.

Config file: optional flat key=value text (via --config); '#' starts a
comment; keys are the long flag names with '-' replaced by '_'.  Command
line flags override file values.
"""

import argparse
import os
import sys

import numpy as np

from .errors import (ConfigurationError, DatasetIOError, DegenerateInputError,
                     NumericalError, PatchdescError, ShapeError, TopologyError)

QUADRIC_LABELS = ("spherical", "parabolic", "hyperbolic", "planar")


def read_config_file(path):
    values = {}
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigurationError(
                        f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
                key, value = line.split("=", 1)
                values[key.strip().replace("-", "_")] = value.strip()
    except OSError as exc:
        raise DatasetIOError(f"cannot read config file {path}: {exc}") from exc
    return values


def resolve(args, name, default=None, cast=None, required=False):
    """Precedence: CLI flag > config file > default."""
    value = getattr(args, name, None)
    if value is None:
        value = getattr(args, "_config_values", {}).get(name)
        if value is not None and cast is not None:
            try:
                value = cast(value)
            except ValueError as exc:
                raise ConfigurationError(
                    f"config value for {name} is not a {cast.__name__}: {value!r}"
                ) from exc
    if value is None:
        value = default
    if value is None and required:
        raise ConfigurationError(f"missing required option --{name.replace('_', '-')}")
    return value


def _outdir(args):
    out = resolve(args, "out", required=True)
    os.makedirs(out, exist_ok=True)
    return out


# ---- commands ------------------------------------------------------------


def cmd_gen_data(args):
    from . import patchgen as pg

    n_pairs = resolve(args, "pairs", cast=int, required=True)
    seed = resolve(args, "seed", cast=int, required=True)
    out = _outdir(args)
    config = pg.GenConfig(
        degree_min=resolve(args, "degree_min", 2, int),
        degree_max=resolve(args, "degree_max", 4, int),
        coeff_scale=resolve(args, "coeff_scale", 1.0, float),
        n_min=resolve(args, "n_min", 128, int),
        n_max=resolve(args, "n_max", 512, int),
        domain_radius=resolve(args, "domain_radius", 1.0, float),
    )
    pairs = pg.generate_dataset(seed, n_pairs, config,
                                threads=resolve(args, "threads", 1, int))
    pg.write_dataset(pairs, out, seed=seed, config=config)
    print(f"wrote {len(pairs)} pairs (seed {seed}) to {out}")
    return 0


def _load_dataset(path):
    from . import patchgen as pg

    manifest, pairs = pg.read_dataset(path)
    return manifest, pairs


def cmd_train(args):
    from . import patchgen as pg
    from . import neuralnet as nn

    seed = resolve(args, "seed", cast=int, required=True)
    data_dir = resolve(args, "data", required=True)
    out = _outdir(args)
    epochs = resolve(args, "epochs", 1, int)
    batch_pairs = resolve(args, "batch_pairs", 64, int)
    val_count = resolve(args, "val_count", 64, int)
    config = nn.TrainConfig(
        batch_pairs=batch_pairs, epochs=epochs, seed=seed,
        learning_rate=resolve(args, "lr", None, float),
        k_neighbors=resolve(args, "k_neighbors", 20, int),
        d_out=resolve(args, "d_out", 2048, int),
        recalibrate_every=resolve(args, "recalibrate_every", 100, int),
    )
    _, pairs = _load_dataset(data_dir)
    if val_count >= len(pairs):
        raise ConfigurationError(
            f"val_count={val_count} leaves no training pairs (dataset has {len(pairs)})")
    train_pairs = pairs[:len(pairs) - val_count] if val_count else pairs
    val_pairs = pairs[len(pairs) - val_count:] if val_count else None

    encoder = head = opt_state = None
    resume = resolve(args, "resume")
    if resume:
        encoder, head, opt_state, _ = nn.load_checkpoint(resume)
        print(f"resuming from {resume} (epoch {opt_state.get('epoch', 0)})")

    log_path = os.path.join(out, "log.csv")
    rows = []

    def log_fn(row):
        rows.append(row)
        with open(log_path, "w") as fh:
            fh.write("epoch,loss,val_acc\n")
            for r in rows:
                fh.write(f"{r['epoch']},{r['loss']:.6g},{r['val_acc']:.6g}\n")
        print(f"epoch {row['epoch']}: loss {row['loss']:.4f} "
              f"val_acc {row['val_acc']:.4f} ({row['seconds']:.0f}s)")

    nn.train(train_pairs, config, out_dir=out, val_pairs=val_pairs,
             encoder=encoder, head=head, opt_state=opt_state, log_fn=log_fn)
    print(f"checkpoints and log.csv in {out}")
    return 0


def cmd_validate(args):
    from . import neuralnet as nn

    ckpt = resolve(args, "checkpoint", required=True)
    data_dir = resolve(args, "data", required=True)
    batch = resolve(args, "batch", 64, int)
    seed = resolve(args, "seed", 0, int)
    encoder, _, _, _ = nn.load_checkpoint(ckpt)
    _, pairs = _load_dataset(data_dir)
    if batch < 2:
        raise ConfigurationError("validation batch must be >= 2")
    if batch > len(pairs):
        raise ConfigurationError(
            f"batch={batch} exceeds dataset size {len(pairs)}")
    chosen = np.random.default_rng(seed).choice(len(pairs), size=batch, replace=False)
    acc = nn.validate_matching([pairs[i] for i in chosen], encoder)
    print(f"matching accuracy: {acc:.4f} (batch {batch}, chance {1.0 / batch:.4f})")
    return 0


def _quadric_eval_patches(seed, per_class, n_points, noise_sigma, curvature_scale):
    from . import patchgen as pg

    patches, labels = [], []
    rng = np.random.default_rng([seed, 11])
    for label in QUADRIC_LABELS:
        for _ in range(per_class):
            poly = pg.quadric_family(label, curvature_scale, rng)
            patch = pg.sample_patch(poly, n_points, 1.0, rng, include_origin=True)
            patches.append(pg.add_z_noise(patch, noise_sigma, rng))
            labels.append(label)
    return patches, labels


def _classical_descriptor_rows(patches, kinds=("hks", "wks", "shot"), eig_k=64):
    from . import baselines as bl

    out = {kind: [] for kind in kinds}
    for patch in patches:
        if "hks" in kinds or "wks" in kinds:
            basis, origin = bl.patch_spectral_basis(patch, k=eig_k)
            if "hks" in kinds:
                out["hks"].append(bl.hks(basis, origin, bl.hks_default_times(basis)))
            if "wks" in kinds:
                energies, sigma = bl.wks_default_params(basis)
                out["wks"].append(bl.wks(basis, origin, energies, sigma))
        if "shot" in kinds:
            out["shot"].append(bl.patch_shot(patch).values[0])
    return {kind: np.array(rows) for kind, rows in out.items()}


def cmd_cluster_eval(args):
    from . import baselines as bl
    from . import neuralnet as nn

    ckpt = resolve(args, "checkpoint", required=True)
    out = _outdir(args)
    seed = resolve(args, "seed", cast=int, required=True)
    per_class = resolve(args, "per_class", 100, int)
    n_points = resolve(args, "points", 256, int)
    noise_sigma = resolve(args, "noise_sigma", 0.21, float)
    curvature_scale = resolve(args, "curvature_scale", 0.6, float)

    encoder, _, _, _ = nn.load_checkpoint(ckpt)
    patches, labels = _quadric_eval_patches(seed, per_class, n_points,
                                            noise_sigma, curvature_scale)
    descriptors = {"neural": nn.encode_patches([p.points for p in patches], encoder)}
    descriptors.update(_classical_descriptor_rows(patches))

    emb_path = os.path.join(out, "cluster_embeddings.csv")
    sil_path = os.path.join(out, "cluster_silhouettes.csv")
    sil = {}
    with open(emb_path, "w") as fh:
        fh.write("method,pc1,pc2,label\n")
        for method, rows in descriptors.items():
            projected, _ = bl.descriptor_pca(rows, out_dim=2)
            sil[method] = bl.silhouette_score(projected, np.array(labels))
            for p2, label in zip(projected, labels):
                fh.write(f"{method},{p2[0]:.9g},{p2[1]:.9g},{label}\n")
    with open(sil_path, "w") as fh:
        fh.write("method,silhouette\n")
        for method, score in sil.items():
            fh.write(f"{method},{score:.6g}\n")
    for method, score in sil.items():
        print(f"silhouette[{method}] = {score:.4f}")
    print(f"wrote {emb_path} and {sil_path}")
    return 0


def cmd_transition_eval(args):
    from . import baselines as bl
    from . import patchgen as pg
    from . import neuralnet as nn
    from .neuralnet.simsiam import cosine_matrix

    ckpt = resolve(args, "checkpoint", required=True)
    out = _outdir(args)
    seed = resolve(args, "seed", cast=int, required=True)
    steps = resolve(args, "steps", 50, int)
    n_points = resolve(args, "points", 256, int)
    if steps < 2:
        raise ConfigurationError("transition needs at least 2 steps")

    encoder, _, _, _ = nn.load_checkpoint(ckpt)
    rng = np.random.default_rng([seed, 23])
    p_start = pg.quadric_family("hyperbolic", 1.0, rng)
    p_end = pg.quadric_family("spherical", 1.0, rng)
    ts = np.linspace(0.0, 1.0, steps)
    patches = []
    for t in ts:
        poly = pg.interpolate_polys(p_start, p_end, t)
        patches.append(pg.sample_patch(poly, n_points, 1.0, rng, include_origin=True))

    descriptors = {"neural": nn.encode_patches([p.points for p in patches], encoder)}
    descriptors.update(_classical_descriptor_rows(patches))

    path_csv = os.path.join(out, "transition_path.csv")
    cos_csv = os.path.join(out, "transition_consecutive.csv")
    with open(path_csv, "w") as fh:
        fh.write("method,t,pc1,pc2\n")
        for method, rows in descriptors.items():
            projected, _ = bl.descriptor_pca(rows, out_dim=2)
            for t, p2 in zip(ts, projected):
                fh.write(f"{method},{t:.6g},{p2[0]:.9g},{p2[1]:.9g}\n")
    with open(cos_csv, "w") as fh:
        fh.write("method,t,cos_to_next\n")
        for method, rows in descriptors.items():
            sim = cosine_matrix(rows, rows)
            consecutive = np.diag(sim, k=1)
            for t, c in zip(ts[:-1], consecutive):
                fh.write(f"{method},{t:.6g},{c:.9g}\n")
            off = sim[np.triu_indices(len(rows), k=2)]
            print(f"{method}: mean consecutive cos {consecutive.mean():.4f}, "
                  f"mean non-adjacent cos {off.mean():.4f}")
    print(f"wrote {path_csv} and {cos_csv}")
    return 0


def _mesh_basis(mesh, k):
    from .geomcore.spectral import spectral_basis

    return spectral_basis(mesh, min(k, mesh.n_vertices - 2))


def cmd_match(args):
    from . import correspond as cor
    from . import neuralnet as nn
    from .geomcore.mesh import read_mesh

    ckpt = resolve(args, "checkpoint", required=True)
    out = _outdir(args)
    mesh_a = read_mesh(resolve(args, "mesh_a", required=True))
    mesh_b = read_mesh(resolve(args, "mesh_b", required=True))
    k_patch = resolve(args, "k_patch", 64, int)
    encoder, _, _, _ = nn.load_checkpoint(ckpt)

    feat_a = cor.dense_descriptors(mesh_a, encoder, k=k_patch)
    feat_b = cor.dense_descriptors(mesh_b, encoder, k=k_patch)
    pmap = cor.nn_match(feat_a.values, feat_b.values, metric="cosine")

    if resolve(args, "zoomout", False, bool):
        spectral_k = resolve(args, "spectral_k", 100, int)
        basis_a = _mesh_basis(mesh_a, spectral_k)
        basis_b = _mesh_basis(mesh_b, spectral_k)
        k_max = min(basis_a.k, basis_b.k)
        pmap = cor.zoomout(basis_a, basis_b, pmap,
                           k0=resolve(args, "zoomout_k0", 10, int),
                           step=resolve(args, "zoomout_step", 5, int),
                           k_max=k_max)
    map_path = os.path.join(out, "map.txt")
    cor.write_pointmap(map_path, pmap)
    print(f"wrote {map_path} ({len(pmap)} correspondences)")

    gt_path = resolve(args, "gt")
    if gt_path:
        gt = cor.read_pointmap(gt_path)
        curve = cor.geodesic_error_curve(pmap, gt, mesh_b)
        curve_path = os.path.join(out, "error_curve.csv")
        cor.write_error_curve_csv(curve_path, curve)
        print(f"mean geodesic error (x100): {100.0 * curve.mean_error:.4f}")
        print(f"wrote {curve_path}")
    return 0


def cmd_error_curve(args):
    from . import correspond as cor
    from .geomcore.mesh import read_mesh

    out = _outdir(args)
    pmap = cor.read_pointmap(resolve(args, "map", required=True))
    gt = cor.read_pointmap(resolve(args, "gt", required=True))
    mesh_b = read_mesh(resolve(args, "mesh_b", required=True))
    curve = cor.geodesic_error_curve(pmap, gt, mesh_b)
    curve_path = os.path.join(out, "error_curve.csv")
    cor.write_error_curve_csv(curve_path, curve)
    print(f"mean geodesic error (x100): {100.0 * curve.mean_error:.4f}")
    print(f"wrote {curve_path}")
    return 0


# ---- parser ---------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="patchdesc",
        description="Sampling-invariant local surface descriptors: data "
                    "generation, training, evaluation, correspondence.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="global RNG seed")
        p.add_argument("--threads", type=int, help="worker threads (default 1)")

    p = sub.add_parser("gen-data", help="generate a synthetic pair dataset")
    common(p)
    p.add_argument("--pairs", type=int, help="number of patch pairs")
    p.add_argument("--degree-min", type=int, dest="degree_min")
    p.add_argument("--degree-max", type=int, dest="degree_max")
    p.add_argument("--coeff-scale", type=float, dest="coeff_scale")
    p.add_argument("--n-min", type=int, dest="n_min")
    p.add_argument("--n-max", type=int, dest="n_max")
    p.add_argument("--domain-radius", type=float, dest="domain_radius")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the descriptor encoder")
    common(p)
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-pairs", type=int, dest="batch_pairs")
    p.add_argument("--lr", type=float)
    p.add_argument("--k-neighbors", type=int, dest="k_neighbors")
    p.add_argument("--d-out", type=int, dest="d_out")
    p.add_argument("--val-count", type=int, dest="val_count")
    p.add_argument("--recalibrate-every", type=int, dest="recalibrate_every")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("validate", help="batch matching accuracy of a checkpoint")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--batch", type=int)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("cluster-eval", help="quadric-class clustering comparison")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--per-class", type=int, dest="per_class")
    p.add_argument("--points", type=int)
    p.add_argument("--noise-sigma", type=float, dest="noise_sigma")
    p.add_argument("--curvature-scale", type=float, dest="curvature_scale")
    p.set_defaults(func=cmd_cluster_eval)

    p = sub.add_parser("transition-eval", help="descriptor path along a "
                                               "hyperbolic-to-spherical sweep")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--steps", type=int)
    p.add_argument("--points", type=int)
    p.set_defaults(func=cmd_transition_eval)

    p = sub.add_parser("match", help="dense descriptor matching of two meshes")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--mesh-a", dest="mesh_a")
    p.add_argument("--mesh-b", dest="mesh_b")
    p.add_argument("--k-patch", type=int, dest="k_patch")
    p.add_argument("--zoomout", action="store_const", const=True, default=None)
    p.add_argument("--spectral-k", type=int, dest="spectral_k")
    p.add_argument("--zoomout-k0", type=int, dest="zoomout_k0")
    p.add_argument("--zoomout-step", type=int, dest="zoomout_step")
    p.add_argument("--gt", help="ground-truth point map file")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("error-curve", help="geodesic error curve from map files")
    common(p)
    p.add_argument("--map", help="predicted point map file")
    p.add_argument("--gt", help="ground-truth point map file")
    p.add_argument("--mesh-b", dest="mesh_b", help="target mesh (OFF/PLY)")
    p.set_defaults(func=cmd_error_curve)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "config", None):
        args._config_values = read_config_file(args.config)
    else:
        args._config_values = {}
    try:
        return args.func(args)
    except (ConfigurationError, ShapeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DatasetIOError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, DegenerateInputError, TopologyError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4
    except PatchdescError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
