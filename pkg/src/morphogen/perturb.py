"""Crossover and mutation applied in pixel space versus learned-code space,
with a report quantifying which space keeps offspring coherent."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import network, taxonomy
from .dataset import Dataset
from .errors import DimensionMismatch, EmptyDataset
from .network import ModelParams


@dataclass(frozen=True)
class PerturbConfig:
    mutation_rate: float = 0.2  # fraction of entries perturbed
    mutation_scale: float = 0.5  # half-width of the uniform noise
    crossover_mode: str = "uniform"  # uniform | single-point
    rng_seed: int = 0
    space: str = "pixel"  # pixel | code

    def validate(self) -> None:
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError(f"mutation_rate {self.mutation_rate} outside [0,1]")
        if self.mutation_scale <= 0:
            raise ValueError(f"mutation_scale {self.mutation_scale} must be > 0")
        if self.crossover_mode not in ("uniform", "single-point"):
            raise ValueError(f"unknown crossover mode {self.crossover_mode!r}")
        if self.space not in ("pixel", "code"):
            raise ValueError(f"unknown space {self.space!r}")


@dataclass
class SpaceStats:
    mean_residual: float
    mean_novelty: float
    sample_count: int
    sample_images: np.ndarray  # (m, h, w) offspring for the report grids


@dataclass
class ComparisonReport:
    pixel: SpaceStats
    code: SpaceStats
    mutation_rate: float


def crossover(a: np.ndarray, b: np.ndarray, cfg: PerturbConfig,
              rng: np.random.Generator | None = None) -> np.ndarray:
    """Uniform: each entry from a or b with probability 1/2. Single-point:
    prefix from a up to a random cut, suffix from b (cut 0 gives b)."""
    cfg.validate()
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionMismatch(f"parents differ: {a.shape} vs {b.shape}")
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    if cfg.crossover_mode == "uniform":
        take_a = rng.random(a.size) < 0.5
        return np.where(take_a, a, b)
    cut = int(rng.integers(0, a.size + 1))
    return np.concatenate([a[:cut], b[cut:]])


def mutate(x: np.ndarray, cfg: PerturbConfig,
           rng: np.random.Generator | None = None) -> np.ndarray:
    """Add uniform noise in [-scale, scale] to ceil(rate*dim) randomly chosen
    entries. Pixel space clamps the result to [0,1]; code space leaves values
    free but zero entries stay zero (the sparsity pattern is part of the code)."""
    cfg.validate()
    x = np.asarray(x, dtype=np.float64).ravel()
    n_mutate = math.ceil(cfg.mutation_rate * x.size)
    if n_mutate == 0:
        return x.copy()
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    chosen = rng.choice(x.size, size=n_mutate, replace=False)
    noise = rng.uniform(-cfg.mutation_scale, cfg.mutation_scale, size=n_mutate)
    out = x.copy()
    if cfg.space == "code":
        keep = out[chosen] != 0.0
        out[chosen] += noise * keep
    else:
        out[chosen] += noise
        np.clip(out, 0.0, 1.0, out=out)
    return out


def _offspring_rng(seed: int, space: str, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, 0 if space == "pixel" else 1, index])


def compare_spaces(
    params: ModelParams,
    data: Dataset,
    pixel_cfg: PerturbConfig,
    code_cfg: PerturbConfig,
    n_offspring: int = 200,
    grid_samples: int = 64,
) -> ComparisonReport:
    """Breed offspring from random parent pairs in both spaces and measure
    coherence as the model's own reconstruction residual distortion(z, f(z)),
    plus novelty against the labeled parents.

    The code-space mutation scale is relative: it multiplies the standard
    deviation of the active (nonzero) entries seen in the parent codes.
    """
    pixel_cfg.validate()
    code_cfg.validate()
    n = len(data)
    if n < 2:
        raise EmptyDataset("need at least two images to breed")
    if data.labels is None:
        raise EmptyDataset("need labeled data for novelty scoring")
    image_shape = data.images.shape[1:]
    c_top = params.decoder_filter.shape[0]

    pair_rng = np.random.default_rng([pixel_cfg.rng_seed, 9])
    pairs = [tuple(pair_rng.choice(n, size=2, replace=False)) for _ in range(n_offspring)]

    parent_idx = sorted({i for pair in pairs for i in pair})
    parent_codes = network.encode_rows(
        params, data.images[parent_idx], dtype=np.float64
    )
    code_of = {img_i: parent_codes[row_i] for row_i, img_i in enumerate(parent_idx)}
    active = parent_codes[parent_codes != 0.0]
    active_std = float(active.std()) if active.size else 1.0
    code_cfg_abs = PerturbConfig(
        mutation_rate=code_cfg.mutation_rate,
        mutation_scale=code_cfg.mutation_scale * max(active_std, 1e-12),
        crossover_mode=code_cfg.crossover_mode,
        rng_seed=code_cfg.rng_seed,
        space="code",
    )

    pixel_children = np.empty((n_offspring,) + image_shape)
    code_children = np.empty((n_offspring,) + image_shape)
    for s, (ia, ib) in enumerate(pairs):
        rng_p = _offspring_rng(pixel_cfg.rng_seed, "pixel", s)
        child = mutate(
            crossover(data.images[ia].ravel(), data.images[ib].ravel(), pixel_cfg, rng_p),
            pixel_cfg, rng_p,
        )
        pixel_children[s] = child.reshape(image_shape)

        rng_c = _offspring_rng(code_cfg.rng_seed, "code", s)
        child_code = mutate(
            crossover(code_of[ia], code_of[ib], code_cfg_abs, rng_c), code_cfg_abs, rng_c
        )
        decoded = network.decode(params, child_code.reshape(c_top, *image_shape))
        code_children[s] = np.clip(decoded, 0.0, 1.0)

    def stats(children: np.ndarray) -> SpaceStats:
        residuals = np.empty(n_offspring)
        for s in range(n_offspring):
            recon = network.forward(params, children[s], sparsify=True).reconstruction
            residuals[s] = network.distortion(children[s], recon)
        reference = taxonomy.extract_features(params, data.images, data.labels)
        child_codes = taxonomy.extract_features(params, children)
        novelty = taxonomy.novelty_scores(child_codes, reference=reference)
        return SpaceStats(
            mean_residual=float(residuals.mean()),
            mean_novelty=float(novelty.mean()),
            sample_count=n_offspring,
            sample_images=children[:grid_samples].copy(),
        )

    return ComparisonReport(
        pixel=stats(pixel_children),
        code=stats(code_children),
        mutation_rate=pixel_cfg.mutation_rate,
    )
