"""Generate new symbols: seed a random image and iterate the trained net to a
fixed point, keeping the whole trajectory."""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import network, pgm
from .errors import NonFiniteImage
from .network import ModelParams

IMAGE_SIZE = 28


@dataclass(frozen=True)
class SeedConfig:
    """How x_0 is drawn. Bernoulli at the on-pixel density of digit images is
    the default; uniform kept for ablation."""

    distribution: str = "bernoulli"  # bernoulli | uniform
    bernoulli_on_probability: float = 0.12
    rng_seed: int = 0

    def validate(self) -> None:
        if self.distribution not in ("bernoulli", "uniform"):
            raise ValueError(f"unknown seed distribution {self.distribution!r}")
        if not 0.0 < self.bernoulli_on_probability < 1.0:
            raise ValueError(
                f"bernoulli probability {self.bernoulli_on_probability} outside (0,1)"
            )


@dataclass(frozen=True)
class ConvergenceConfig:
    tolerance: float = 1e-6  # mean squared per-pixel step size
    max_iterations: int = 100

    def validate(self) -> None:
        if not self.tolerance > 0:
            raise ValueError(f"tolerance {self.tolerance} must be > 0")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations {self.max_iterations} must be >= 1")


@dataclass
class GenerationTrajectory:
    """x_0 ... x_K with per-step distances and convergence diagnostics."""

    steps: list[np.ndarray]
    step_distances: list[float]
    converged: bool
    iterations: int

    @property
    def final(self) -> np.ndarray:
        return self.steps[-1]


@dataclass
class GeneratedItem:
    final: np.ndarray  # (28, 28) in [0,1]
    code: np.ndarray  # flattened top-layer representation, float32
    converged: bool
    iterations: int
    last_step_distance: float
    seed_index: int


@dataclass
class GeneratedSet:
    items: list[GeneratedItem]
    model_checksum: str
    seed_config: SeedConfig
    convergence_config: ConvergenceConfig


def sample_seed(cfg: SeedConfig, index: int = 0) -> np.ndarray:
    """Draw seed image number `index`; deterministic per (rng_seed, index)."""
    cfg.validate()
    rng = np.random.default_rng([cfg.rng_seed, index])
    if cfg.distribution == "uniform":
        return rng.random((IMAGE_SIZE, IMAGE_SIZE))
    draws = rng.random((IMAGE_SIZE, IMAGE_SIZE))
    return (draws < cfg.bernoulli_on_probability).astype(np.float64)


def _apply_model(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """One application of f: forward with spatial WTA, clamped to [0,1]."""
    recon = network.forward(params, x, sparsify=True).reconstruction
    return np.clip(recon, 0.0, 1.0)


def iterate(params: ModelParams, x0: np.ndarray, cfg: ConvergenceConfig) -> GenerationTrajectory:
    """Apply f until the mean squared per-pixel step drops below tolerance or
    max_iterations is reached. Raises NonFiniteImage (with the partial
    trajectory attached) if an iterate leaves the finite domain."""
    cfg.validate()
    x = np.asarray(x0, dtype=np.float64)
    n_pixels = x.size
    steps = [x.copy()]
    dists: list[float] = []
    converged = False
    for _ in range(cfg.max_iterations):
        nxt = _apply_model(params, x)
        if not np.all(np.isfinite(nxt)):
            partial = GenerationTrajectory(
                steps=steps, step_distances=dists, converged=False,
                iterations=len(dists),
            )
            raise NonFiniteImage("iterate left the finite image domain",
                                 trajectory=partial)
        d = network.distortion(nxt, x)
        steps.append(nxt)
        dists.append(d)
        x = nxt
        if d / n_pixels < cfg.tolerance:
            converged = True
            break
    return GenerationTrajectory(
        steps=steps, step_distances=dists, converged=converged, iterations=len(dists)
    )


def generate_batch(
    params: ModelParams,
    n: int,
    seed_cfg: SeedConfig,
    conv_cfg: ConvergenceConfig,
) -> GeneratedSet:
    """n independent trajectories from seeds (rng_seed, 0..n-1); finals paired
    with their codes. Non-converged (or non-finite) items are kept, flagged."""
    if n < 1:
        raise ValueError(f"n {n} must be >= 1")
    checksum = network.checkpoint_checksum(params)
    items: list[GeneratedItem] = []
    for i in range(n):
        x0 = sample_seed(seed_cfg, i)
        try:
            traj = iterate(params, x0, conv_cfg)
        except NonFiniteImage as exc:
            traj = exc.trajectory
        final = traj.final
        code = network.encode_rows(params, final[None])[0]
        items.append(
            GeneratedItem(
                final=final,
                code=code,
                converged=traj.converged,
                iterations=traj.iterations,
                last_step_distance=traj.step_distances[-1] if traj.step_distances else 0.0,
                seed_index=i,
            )
        )
    return GeneratedSet(
        items=items,
        model_checksum=checksum,
        seed_config=seed_cfg,
        convergence_config=conv_cfg,
    )


def save_generated_set(gset: GeneratedSet, out_dir: str | Path) -> None:
    """Directory layout: final_%05d.pgm images, codes.bin (float32 rows) with
    codes.json header, and set_manifest.json describing the run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for item in gset.items:
        pgm.write_pgm(item.final, out / f"final_{item.seed_index:05d}.pgm")
    codes = np.stack([item.code for item in gset.items]).astype("<f4")
    (out / "codes.bin").write_bytes(codes.tobytes())
    (out / "codes.json").write_text(
        json.dumps(
            {"dtype": "<f4", "shape": list(codes.shape), "order": "C"}, indent=2
        )
    )
    manifest = {
        "model_checksum": gset.model_checksum,
        "seed_config": {
            "distribution": gset.seed_config.distribution,
            "bernoulli_on_probability": gset.seed_config.bernoulli_on_probability,
            "rng_seed": gset.seed_config.rng_seed,
        },
        "convergence_config": {
            "tolerance": gset.convergence_config.tolerance,
            "max_iterations": gset.convergence_config.max_iterations,
        },
        "items": [
            {
                "seed_index": item.seed_index,
                "converged": item.converged,
                "iterations": item.iterations,
                "last_step_distance": item.last_step_distance,
            }
            for item in gset.items
        ],
    }
    (out / "set_manifest.json").write_text(json.dumps(manifest, indent=2))


def load_generated_set(in_dir: str | Path) -> GeneratedSet:
    """Inverse of save_generated_set."""
    src = Path(in_dir)
    manifest = json.loads((src / "set_manifest.json").read_text())
    header = json.loads((src / "codes.json").read_text())
    codes = np.frombuffer((src / "codes.bin").read_bytes(), dtype=header["dtype"])
    codes = codes.reshape(header["shape"])
    items = []
    for meta, code in zip(manifest["items"], codes):
        idx = meta["seed_index"]
        final = pgm.read_pgm(src / f"final_{idx:05d}.pgm")
        items.append(
            GeneratedItem(
                final=final,
                code=np.array(code),
                converged=meta["converged"],
                iterations=meta["iterations"],
                last_step_distance=meta["last_step_distance"],
                seed_index=idx,
            )
        )
    sc = manifest["seed_config"]
    cc = manifest["convergence_config"]
    return GeneratedSet(
        items=items,
        model_checksum=manifest["model_checksum"],
        seed_config=SeedConfig(
            distribution=sc["distribution"],
            bernoulli_on_probability=sc["bernoulli_on_probability"],
            rng_seed=sc["rng_seed"],
        ),
        convergence_config=ConvergenceConfig(
            tolerance=cc["tolerance"], max_iterations=cc["max_iterations"]
        ),
    )
