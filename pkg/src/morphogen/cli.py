"""Command-line surface: train, generate, cluster, embed, perturb, render.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every command writes
a run manifest sufficient to reproduce its outputs bit-exactly (rerun the
recorded argv; the manifest lists the checksums the rerun must reproduce).
"""

from __future__ import annotations

import os

_raw_threads = os.environ.get("MORPHOGEN_THREADS", "").strip()
if _raw_threads:
    # cap the BLAS pools; must happen before numpy loads them
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _raw_threads)

import argparse
import json
import sys
import time
import zlib
from pathlib import Path

import numpy as np

from . import __version__, dataset, generator, network, perturb, pgm, taxonomy, trainer
from .errors import EmptyInput, MorphogenError

IMAGE_SIZE = 28
USAGE_EXIT = 2
FAILURE_EXIT = 1


class UsageError(Exception):
    """Bad arguments or unsafe output targets; maps to exit code 2."""


def _existing_file(flag: str):
    def check(value: str) -> Path:
        p = Path(value)
        if not p.is_file():
            raise argparse.ArgumentTypeError(f"{flag}: file not found: {value}")
        return p

    return check


def _existing_dir(flag: str):
    def check(value: str) -> Path:
        p = Path(value)
        if not p.is_dir():
            raise argparse.ArgumentTypeError(f"{flag}: directory not found: {value}")
        return p

    return check


def _prepare_out_dir(path: Path, force: bool) -> Path:
    if path.exists() and not force:
        raise UsageError(f"--out: {path} already exists (pass --force to reuse)")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _crc32_file(path: Path) -> str:
    return f"{zlib.crc32(path.read_bytes()) & 0xFFFFFFFF:08x}"


def _write_manifest(
    out_dir: Path,
    command: str,
    argv: list[str],
    config: dict,
    seeds: dict,
    dataset_checksums: dict,
    checkpoint_checksum: str | None,
    output_files: list[Path],
    diagnostic_files: list[Path] = (),
) -> Path:
    manifest = {
        "command": command,
        "argv": argv,
        "config": config,
        "seeds": seeds,
        "dataset_checksums": dataset_checksums,
        "checkpoint_checksum": checkpoint_checksum,
        "tool_version": __version__,
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "outputs": {
            str(p.relative_to(out_dir)): _crc32_file(p) for p in sorted(output_files)
        },
        "diagnostics": [str(p.relative_to(out_dir)) for p in sorted(diagnostic_files)],
    }
    path = out_dir / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def render_grid(images: list[np.ndarray] | np.ndarray, columns: int, path: str | Path) -> np.ndarray:
    """Row-major PGM montage with 2px separators at intensity 128; trailing
    cells are blank (intensity 0). Returns the montage as a float image."""
    images = [np.asarray(im, dtype=np.float64) for im in images]
    if not images:
        raise EmptyInput("render_grid needs at least one image")
    if columns < 1:
        raise ValueError(f"columns {columns} must be >= 1")
    h, w = images[0].shape
    rows = (len(images) + columns - 1) // columns
    sep = 2
    grid = np.zeros((rows * h + (rows - 1) * sep, columns * w + (columns - 1) * sep))
    for r in range(rows - 1):
        grid[h + r * (h + sep) : h + r * (h + sep) + sep, :] = 128.0 / 255.0
    for c in range(columns - 1):
        grid[:, w + c * (w + sep) : w + c * (w + sep) + sep] = 128.0 / 255.0
    for i, im in enumerate(images):
        r, c = divmod(i, columns)
        grid[r * (h + sep) : r * (h + sep) + h, c * (w + sep) : c * (w + sep) + w] = np.clip(im, 0.0, 1.0)
    pgm.write_pgm(grid, path)
    return grid


def _load_digits(images_path: Path, labels_path: Path | None, take: int | None) -> dataset.Dataset:
    data = dataset.load_dataset(images_path, labels_path)
    if take is not None and take < len(data):
        data = dataset.Dataset(
            images=data.images[:take],
            labels=None if data.labels is None else data.labels[:take],
            split_tag=data.split_tag,
        )
    return data


# -- train ---------------------------------------------------------------------


def cmd_train(args: argparse.Namespace, argv: list[str]) -> int:
    out = _prepare_out_dir(args.out, args.force)
    data = _load_digits(args.images, args.labels, args.take)
    train_d, val_d = dataset.split(data, args.val_fraction, args.seed + 2)

    arch = network.ArchConfig(
        sparsity=network.SparsityConfig(
            spatial_winners_per_map=args.winners, lifetime_rate=args.lifetime_rate
        ),
        rng_seed=args.seed,
    )
    cfg = trainer.TrainConfig(
        epochs=args.epochs,
        minibatch_size=args.batch,
        learning_rate=args.lr,
        lr_decay=args.lr_decay,
        shuffle_seed=args.seed + 1,
        checkpoint_every=args.checkpoint_every,
    )
    print(f"training on {len(train_d)} images ({len(val_d)} held out)")
    params, log = trainer.train(train_d, arch, cfg, validation=val_d, checkpoint_dir=out / "checkpoints")
    ckpt = out / "checkpoint.mrph"
    trainer.write_checkpoint_atomic(params, ckpt)
    log_path = out / "training_log.csv"
    log_path.write_text(log.to_csv())
    for r in log.records:
        print(f"epoch {r.epoch:3d}  train {r.train_mse:10.4f}  val {r.val_mse:10.4f}  lr {r.lr:.6f}")

    _write_manifest(
        out,
        "train",
        argv,
        config={
            "arch": json.loads(arch.to_canonical_json()),
            "train": {
                "epochs": cfg.epochs, "minibatch_size": cfg.minibatch_size,
                "learning_rate": cfg.learning_rate, "lr_decay": cfg.lr_decay,
                "checkpoint_every": cfg.checkpoint_every,
            },
            "val_fraction": args.val_fraction,
            "take": args.take,
        },
        seeds={"base": args.seed, "arch": args.seed, "shuffle": args.seed + 1, "split": args.seed + 2},
        dataset_checksums={
            "images": _crc32_file(args.images),
            **({"labels": _crc32_file(args.labels)} if args.labels else {}),
        },
        checkpoint_checksum=network.checkpoint_checksum(params),
        output_files=[ckpt],
        diagnostic_files=[log_path],
    )
    print(f"checkpoint {ckpt} ({network.checkpoint_checksum(params)})")
    return 0


# -- generate --------------------------------------------------------------------


def _load_checkpoint(path: Path) -> network.ModelParams:
    return network.deserialize(path.read_bytes())


def cmd_generate(args: argparse.Namespace, argv: list[str]) -> int:
    out = _prepare_out_dir(args.out, args.force)
    params = _load_checkpoint(args.checkpoint)
    seed_cfg = generator.SeedConfig(
        distribution=args.distribution,
        bernoulli_on_probability=args.on_probability,
        rng_seed=args.seed,
    )
    conv_cfg = generator.ConvergenceConfig(
        tolerance=args.tolerance, max_iterations=args.max_iterations
    )
    gset = generator.generate_batch(params, args.count, seed_cfg, conv_cfg)
    generator.save_generated_set(gset, out)
    converged = sum(item.converged for item in gset.items)
    print(f"{converged}/{len(gset.items)} trajectories converged")

    outputs = sorted(out.glob("final_*.pgm")) + [out / "codes.bin", out / "codes.json", out / "set_manifest.json"]
    if args.trajectory:
        for item in gset.items:
            traj = generator.iterate(params, generator.sample_seed(seed_cfg, item.seed_index), conv_cfg)
            strip = out / f"trajectory_{item.seed_index:05d}.pgm"
            render_grid(traj.steps, columns=len(traj.steps), path=strip)
            outputs.append(strip)

    _write_manifest(
        out,
        "generate",
        argv,
        config={
            "count": args.count,
            "seed_config": {
                "distribution": seed_cfg.distribution,
                "bernoulli_on_probability": seed_cfg.bernoulli_on_probability,
            },
            "convergence": {
                "tolerance": conv_cfg.tolerance, "max_iterations": conv_cfg.max_iterations,
            },
        },
        seeds={"base": args.seed, "seed_rng": args.seed},
        dataset_checksums={},
        checkpoint_checksum=gset.model_checksum,
        output_files=outputs,
    )
    return 0


# -- cluster ---------------------------------------------------------------------


def _mixed_codes(
    params: network.ModelParams,
    generated_dir: Path,
    images_path: Path,
    labels_path: Path,
    take: int | None,
) -> tuple[taxonomy.CodeMatrix, np.ndarray]:
    """Codes for labeled digits followed by generated finals, plus the images
    aligned row-for-row (used for montage rendering)."""
    digits = _load_digits(images_path, labels_path, take)
    gset = generator.load_generated_set(generated_dir)
    digit_codes = taxonomy.extract_features(params, digits.images, digits.labels)
    gen_rows = np.stack([item.code for item in gset.items]).astype(np.float32)
    gen_codes = taxonomy.CodeMatrix(
        rows=gen_rows,
        labels=np.full(len(gset.items), taxonomy.GENERATED, dtype=np.int16),
    )
    codes = taxonomy.CodeMatrix.concatenate([digit_codes, gen_codes])
    images = np.concatenate(
        [digits.images, np.stack([item.final for item in gset.items])], axis=0
    )
    return codes, images


def cmd_cluster(args: argparse.Namespace, argv: list[str]) -> int:
    out = _prepare_out_dir(args.out, args.force)
    params = _load_checkpoint(args.checkpoint)
    codes, images = _mixed_codes(params, args.generated, args.images, args.labels, args.take)
    print(f"clustering {codes.rows.shape[0]} codes (k={args.k}, {args.restarts} restarts)")
    clustering = taxonomy.kmeans(
        codes, k=args.k, restarts=args.restarts, rng_seed=args.seed, max_iters=args.max_iters
    )
    report = taxonomy.build_report(clustering, codes, new_type_threshold=args.threshold)
    novelty = taxonomy.novelty_scores(codes)

    report_json = {
        "k": clustering.k,
        "objective": clustering.objective,
        "iterations_run": clustering.iterations_run,
        "new_type_threshold": report.new_type_threshold,
        "new_type_count": report.new_type_count,
        "clusters": [
            {
                "index": c.index,
                "size": c.size,
                "generated_fraction": c.generated_fraction,
                "histogram": c.histogram,
                "new_type": c.is_new_type,
                "medoid_row": c.medoid_row,
            }
            for c in report.clusters
        ],
        "median_novelty": {
            "generated": float(np.median(novelty[codes.generated_mask]))
            if codes.generated_mask.any() else None,
            "digits": float(np.median(novelty[~codes.generated_mask]))
            if (~codes.generated_mask).any() else None,
        },
    }
    report_path = out / "cluster_report.json"
    report_path.write_text(json.dumps(report_json, indent=2))

    outputs = [report_path]
    for c in report.clusters:
        if not c.is_new_type:
            continue
        members = np.where(clustering.assignments == c.index)[0][:64]
        montage = out / f"newtype_cluster_{c.index:03d}.pgm"
        render_grid([images[i] for i in members], columns=8, path=montage)
        outputs.append(montage)
    print(f"{report.new_type_count} new-type clusters")

    _write_manifest(
        out, "cluster", argv,
        config={"k": args.k, "restarts": args.restarts, "threshold": args.threshold,
                "max_iters": args.max_iters, "take": args.take},
        seeds={"base": args.seed, "kmeans": args.seed},
        dataset_checksums={"images": _crc32_file(args.images), "labels": _crc32_file(args.labels)},
        checkpoint_checksum=network.checkpoint_checksum(params),
        output_files=outputs,
    )
    return 0


# -- embed -----------------------------------------------------------------------


_SCATTER_SIZE = 1024
_DOT = 1  # half-width of the 3x3 dot


def _scatter_raster(coords: np.ndarray, labels: np.ndarray, path: Path) -> None:
    """Fig-4-style raster: digits in per-class gray levels, generated in white."""
    img = np.zeros((_SCATTER_SIZE, _SCATTER_SIZE))
    span = coords.max(axis=0) - coords.min(axis=0)
    scale = (_SCATTER_SIZE - 24) / max(float(span.max()), 1e-12)
    offset = coords.min(axis=0)
    for (u, v), label in zip(coords, labels):
        x = int(12 + (u - offset[0]) * scale)
        y = int(12 + (v - offset[1]) * scale)
        gray = 1.0 if label == taxonomy.GENERATED else (40 + 18 * int(label)) / 255.0
        img[max(0, y - _DOT) : y + _DOT + 1, max(0, x - _DOT) : x + _DOT + 1] = gray
    pgm.write_pgm(img, path)


def cmd_embed(args: argparse.Namespace, argv: list[str]) -> int:
    out = _prepare_out_dir(args.out, args.force)
    params = _load_checkpoint(args.checkpoint)
    codes, _images = _mixed_codes(params, args.generated, args.images, args.labels, args.take)
    print(f"embedding {codes.rows.shape[0]} codes (perplexity {args.perplexity})")
    emb = taxonomy.embed_2d(
        codes, perplexity=args.perplexity, iterations=args.iterations, rng_seed=args.seed
    )
    csv_path = out / "embedding.csv"
    with csv_path.open("w") as fh:
        fh.write("id,origin,label,u,v\n")
        for i, ((u, v), label) in enumerate(zip(emb.coords, codes.labels)):
            origin = "generated" if label == taxonomy.GENERATED else "digit"
            fh.write(f"{i},{origin},{int(label)},{u!r},{v!r}\n")
    scatter_path = out / "embedding.pgm"
    _scatter_raster(emb.coords, codes.labels, scatter_path)
    print(f"final KL divergence {emb.kl_divergence:.4f}")

    _write_manifest(
        out, "embed", argv,
        config={"perplexity": args.perplexity, "iterations": args.iterations, "take": args.take,
                "kl_divergence": emb.kl_divergence},
        seeds={"base": args.seed, "embedding": args.seed},
        dataset_checksums={"images": _crc32_file(args.images), "labels": _crc32_file(args.labels)},
        checkpoint_checksum=network.checkpoint_checksum(params),
        output_files=[csv_path, scatter_path],
    )
    return 0


# -- perturb ---------------------------------------------------------------------


def cmd_perturb(args: argparse.Namespace, argv: list[str]) -> int:
    out = _prepare_out_dir(args.out, args.force)
    params = _load_checkpoint(args.checkpoint)
    data = _load_digits(args.images, args.labels, args.take)
    pixel_cfg = perturb.PerturbConfig(
        mutation_rate=args.mutation_rate, mutation_scale=args.pixel_scale,
        crossover_mode=args.crossover, rng_seed=args.seed, space="pixel",
    )
    code_cfg = perturb.PerturbConfig(
        mutation_rate=args.mutation_rate, mutation_scale=args.code_scale,
        crossover_mode=args.crossover, rng_seed=args.seed, space="code",
    )
    print(f"breeding {args.count} offspring per space at mutation rate {args.mutation_rate}")
    report = perturb.compare_spaces(
        params, data, pixel_cfg, code_cfg, n_offspring=args.count
    )
    pixel_grid = out / "offspring_pixel.pgm"
    code_grid = out / "offspring_code.pgm"
    render_grid(list(report.pixel.sample_images), columns=8, path=pixel_grid)
    render_grid(list(report.code.sample_images), columns=8, path=code_grid)
    report_path = out / "perturb_report.json"
    report_path.write_text(json.dumps({
        "mutation_rate": report.mutation_rate,
        "pixel": {"mean_residual": report.pixel.mean_residual,
                  "mean_novelty": report.pixel.mean_novelty,
                  "sample_count": report.pixel.sample_count},
        "code": {"mean_residual": report.code.mean_residual,
                 "mean_novelty": report.code.mean_novelty,
                 "sample_count": report.code.sample_count},
    }, indent=2))
    print(f"mean residual: pixel {report.pixel.mean_residual:.2f} vs code {report.code.mean_residual:.2f}")

    _write_manifest(
        out, "perturb", argv,
        config={"mutation_rate": args.mutation_rate, "pixel_scale": args.pixel_scale,
                "code_scale": args.code_scale, "crossover": args.crossover,
                "count": args.count, "take": args.take},
        seeds={"base": args.seed, "operators": args.seed},
        dataset_checksums={"images": _crc32_file(args.images), "labels": _crc32_file(args.labels)},
        checkpoint_checksum=network.checkpoint_checksum(params),
        output_files=[report_path, pixel_grid, code_grid],
    )
    return 0


# -- render ----------------------------------------------------------------------


def cmd_render(args: argparse.Namespace, argv: list[str]) -> int:
    files = sorted(args.input.glob("final_*.pgm")) or sorted(args.input.glob("*.pgm"))
    if not files:
        raise UsageError(f"--input: no PGM images under {args.input}")
    images = [pgm.read_pgm(f) for f in files[: args.limit]]
    out_dir = args.out.parent if args.out.parent != Path("") else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.out.exists() and not args.force:
        raise UsageError(f"--out: {args.out} already exists (pass --force to overwrite)")
    render_grid(images, columns=args.columns, path=args.out)
    print(f"wrote {args.out} ({len(images)} panels)")
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="morphogen",
        description="Train a sparse convolutional autoencoder on digit images, "
        "generate new symbols at its fixed points, and catalog the new types.",
    )
    parser.add_argument("--version", action="version", version=f"morphogen {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=0, help="master RNG seed (default 0)")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--force", action="store_true", help="reuse an existing output directory")

    p = sub.add_parser("train", help="train the autoencoder on an IDX corpus")
    p.add_argument("--images", type=_existing_file("--images"), required=True)
    p.add_argument("--labels", type=_existing_file("--labels"), default=None)
    p.add_argument("--take", type=int, default=None, help="use only the first N images")
    p.add_argument("--val-fraction", type=float, default=0.1, dest="val_fraction")
    p.add_argument("--epochs", type=int, default=trainer.TrainConfig.epochs)
    p.add_argument("--batch", type=int, default=trainer.TrainConfig.minibatch_size)
    p.add_argument("--lr", type=float, default=trainer.TrainConfig.learning_rate)
    p.add_argument("--lr-decay", type=float, default=trainer.TrainConfig.lr_decay, dest="lr_decay")
    p.add_argument("--winners", type=int, default=1, help="spatial winners per feature map")
    p.add_argument("--lifetime-rate", type=float, default=0.2, dest="lifetime_rate")
    p.add_argument("--checkpoint-every", type=int, default=5, dest="checkpoint_every")
    add_common(p)

    p = sub.add_parser("generate", help="iterate the net from random seeds to fixed points")
    p.add_argument("--checkpoint", type=_existing_file("--checkpoint"), required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--distribution", choices=["bernoulli", "uniform"], default="bernoulli")
    p.add_argument("--on-probability", type=float, default=0.12, dest="on_probability")
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--max-iterations", type=int, default=100, dest="max_iterations")
    p.add_argument("--trajectory", action="store_true", help="also write per-seed trajectory strips")
    add_common(p)

    p = sub.add_parser("cluster", help="k-means typing of generated + known codes")
    p.add_argument("--checkpoint", type=_existing_file("--checkpoint"), required=True)
    p.add_argument("--generated", type=_existing_dir("--generated"), required=True)
    p.add_argument("--images", type=_existing_file("--images"), required=True)
    p.add_argument("--labels", type=_existing_file("--labels"), required=True)
    p.add_argument("--take", type=int, default=2000, help="number of digit images to mix in")
    p.add_argument("--k", type=int, default=30)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--max-iters", type=int, default=100, dest="max_iters")
    p.add_argument("--threshold", type=float, default=0.9, help="new-type generated fraction")
    add_common(p)

    p = sub.add_parser("embed", help="2-D stochastic neighbor embedding of the codes")
    p.add_argument("--checkpoint", type=_existing_file("--checkpoint"), required=True)
    p.add_argument("--generated", type=_existing_dir("--generated"), required=True)
    p.add_argument("--images", type=_existing_file("--images"), required=True)
    p.add_argument("--labels", type=_existing_file("--labels"), required=True)
    p.add_argument("--take", type=int, default=2000)
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=500)
    add_common(p)

    p = sub.add_parser("perturb", help="crossover/mutation in pixel vs code space")
    p.add_argument("--checkpoint", type=_existing_file("--checkpoint"), required=True)
    p.add_argument("--images", type=_existing_file("--images"), required=True)
    p.add_argument("--labels", type=_existing_file("--labels"), required=True)
    p.add_argument("--take", type=int, default=2000)
    p.add_argument("--count", type=int, default=200, help="offspring per space")
    p.add_argument("--mutation-rate", type=float, default=0.2, dest="mutation_rate")
    p.add_argument("--pixel-scale", type=float, default=0.5, dest="pixel_scale")
    p.add_argument("--code-scale", type=float, default=1.0, dest="code_scale",
                   help="relative to the std of active code entries")
    p.add_argument("--crossover", choices=["uniform", "single-point"], default="uniform")
    add_common(p)

    p = sub.add_parser("render", help="montage PGM images into a grid")
    p.add_argument("--input", type=_existing_dir("--input"), required=True)
    p.add_argument("--columns", type=int, default=10)
    p.add_argument("--limit", type=int, default=100)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--force", action="store_true")
    return parser


_HANDLERS = {
    "train": cmd_train,
    "generate": cmd_generate,
    "cluster": cmd_cluster,
    "embed": cmd_embed,
    "perturb": cmd_perturb,
    "render": cmd_render,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors already
        return int(exc.code or 0)
    try:
        return _HANDLERS[args.command](args, argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except MorphogenError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return FAILURE_EXIT


if __name__ == "__main__":
    sys.exit(main())
