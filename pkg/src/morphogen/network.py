"""The autoencoder: three convolutional coders with winner-take-all sparsity
and a single linear decoding layer, plus exact backpropagation and SGD.

Conventions fixed here and relied on everywhere else:

* all convolutions are stride-1, same-size, zero-padded cross-correlations;
* a rectifier follows each coder, the decoder output is linear;
* spatial WTA keeps the top-k activations per feature map, ties broken by
  lowest row-major index;
* lifetime sparsity (minibatch only) keeps a filter alive for the top
  fraction of samples, ranked by the filter's max activation, ties broken
  by lowest sample index;
* gradients flow only through surviving winners (masks are constants per
  pass).

Internally activations are channel-last (batch, h, w, c), filter banks are
(c_in, k, k, c_out), and post-WTA maps travel as winner lists; the public API
speaks (c, h, w) feature maps.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from ._kernels import (
    conv_forward,
    conv_forward_at,
    conv_grad_input_at,
    conv_grad_weights,
    conv_grad_weights_at,
    relu_topk,
)
from .errors import (
    BadCheckpoint,
    ChecksumFailure,
    InvalidArch,
    InvalidEpsilon,
    NonFiniteLoss,
    ShapeMismatch,
    VersionMismatch,
)

CHECKPOINT_MAGIC = b"MRPH"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class SparsityConfig:
    spatial_winners_per_map: int = 1
    lifetime_rate: float = 0.2

    def validate(self) -> None:
        if self.spatial_winners_per_map < 1:
            raise InvalidArch("spatial_winners_per_map must be >= 1")
        if not 0.0 < self.lifetime_rate <= 1.0:
            raise InvalidArch(f"lifetime_rate {self.lifetime_rate} outside (0,1]")


@dataclass(frozen=True)
class ArchConfig:
    """Filter geometry. Defaults: coders 16/32/64 maps of 5x5 at stride 1,
    decoder 11x11, one spatial winner per map."""

    coder_layers: tuple[tuple[int, int, int], ...] = ((16, 5, 1), (32, 5, 1), (64, 5, 1))
    decoder_filter_size: int = 11
    sparsity: SparsityConfig = field(default_factory=SparsityConfig)
    rng_seed: int = 0
    allow_nonstandard_depth: bool = False

    def validate(self) -> None:
        if len(self.coder_layers) != 3 and not self.allow_nonstandard_depth:
            raise InvalidArch(
                f"{len(self.coder_layers)} coder layers; the model uses 3 "
                "(set allow_nonstandard_depth to override)"
            )
        if not self.coder_layers:
            raise InvalidArch("need at least one coder layer")
        for count, size, stride in self.coder_layers:
            if count < 1:
                raise InvalidArch(f"filter count {count} must be >= 1")
            if size < 3 or size % 2 == 0:
                raise InvalidArch(f"filter size {size} must be odd and >= 3")
            if stride != 1:
                raise InvalidArch("only stride 1 is supported (maps stay input-sized)")
        if self.decoder_filter_size < 3 or self.decoder_filter_size % 2 == 0:
            raise InvalidArch(
                f"decoder filter size {self.decoder_filter_size} must be odd and >= 3"
            )
        self.sparsity.validate()

    def to_canonical_json(self) -> str:
        return json.dumps(
            {
                "coder_layers": [list(layer) for layer in self.coder_layers],
                "decoder_filter_size": self.decoder_filter_size,
                "sparsity": {
                    "spatial_winners_per_map": self.sparsity.spatial_winners_per_map,
                    "lifetime_rate": self.sparsity.lifetime_rate,
                },
                "rng_seed": self.rng_seed,
                "allow_nonstandard_depth": self.allow_nonstandard_depth,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @staticmethod
    def from_canonical_json(text: str) -> "ArchConfig":
        obj = json.loads(text)
        return ArchConfig(
            coder_layers=tuple(tuple(layer) for layer in obj["coder_layers"]),
            decoder_filter_size=obj["decoder_filter_size"],
            sparsity=SparsityConfig(
                spatial_winners_per_map=obj["sparsity"]["spatial_winners_per_map"],
                lifetime_rate=obj["sparsity"]["lifetime_rate"],
            ),
            rng_seed=obj["rng_seed"],
            allow_nonstandard_depth=obj.get("allow_nonstandard_depth", False),
        )


@dataclass
class ModelParams:
    """All weights of the net. Filter banks are (c_in, k, k, c_out), biases
    (c_out,); the decoder maps the top layer to a single image channel."""

    arch: ArchConfig
    coder_filters: list[np.ndarray]
    coder_biases: list[np.ndarray]
    decoder_filter: np.ndarray  # (c_top, kd, kd, 1)
    decoder_bias: np.ndarray  # (1,)

    def arrays(self) -> list[np.ndarray]:
        """Canonical flattening order (also the checkpoint payload order)."""
        out: list[np.ndarray] = []
        for w, b in zip(self.coder_filters, self.coder_biases):
            out.append(w)
            out.append(b)
        out.append(self.decoder_filter)
        out.append(self.decoder_bias)
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            arch=self.arch,
            coder_filters=[w.copy() for w in self.coder_filters],
            coder_biases=[b.copy() for b in self.coder_biases],
            decoder_filter=self.decoder_filter.copy(),
            decoder_bias=self.decoder_bias.copy(),
        )


@dataclass
class GradientVector:
    """Same shapes as ModelParams, entries d(loss)/d(weight)."""

    coder_filters: list[np.ndarray]
    coder_biases: list[np.ndarray]
    decoder_filter: np.ndarray
    decoder_bias: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.coder_filters, self.coder_biases):
            out.append(w)
            out.append(b)
        out.append(self.decoder_filter)
        out.append(self.decoder_bias)
        return out


@dataclass
class Activations:
    """Per-layer post-sparsity feature maps (c, h, w) and the decoded image."""

    maps: list[np.ndarray]
    reconstruction: np.ndarray  # (h, w), unclamped


@dataclass
class _BatchContext:
    """Everything backward needs from a sparse forward pass.

    Post-WTA maps are winner lists: in_pos/in_vals describe each layer's
    output as fed to the next layer (lifetime zeroing already applied to the
    values); grad_pos keeps only live winners (value > 0 and kept), which is
    where gradient may flow. dense_maps is populated on the sparsity-off path
    only.
    """

    x: np.ndarray  # (b, h, w, 1)
    in_pos: list[np.ndarray]  # (b, c, k) int64
    in_vals: list[np.ndarray]  # (b, c, k) float64
    grad_pos: list[np.ndarray]  # (b, c, k) int64, -1 = dead
    reconstruction: np.ndarray  # (b, h, w, 1)
    dense_maps: list[np.ndarray] | None = None


def init_params(config: ArchConfig) -> ModelParams:
    """Zero-mean uniform filters with std 1/sqrt(fan_in); biases zero.

    For the coders, fan_in counts the inputs a unit can actually see: the
    full c_in*K*K window for the first (dense-input) layer, but only the k
    winners per input map for the sparse-input layers above it (counting the
    dense window there shrinks activations by an order of magnitude per layer
    and stalls learning). The decoder keeps the dense-window rule: its output
    then starts near zero and training grows reconstruction atoms instead of
    first having to shrink large initial junk, which traps the net in a
    small-weights plateau.
    """
    config.validate()
    rng = np.random.default_rng(config.rng_seed)
    winners = config.sparsity.spatial_winners_per_map
    filters: list[np.ndarray] = []
    biases: list[np.ndarray] = []
    c_in = 1
    for layer, (count, size, _stride) in enumerate(config.coder_layers):
        fan_in = c_in * size * size if layer == 0 else winners * c_in
        limit = math.sqrt(3.0 / fan_in)
        filters.append(rng.uniform(-limit, limit, size=(c_in, size, size, count)))
        biases.append(np.zeros(count))
        c_in = count
    kd = config.decoder_filter_size
    limit = math.sqrt(3.0 / (c_in * kd * kd))
    decoder = rng.uniform(-limit, limit, size=(c_in, kd, kd, 1))
    return ModelParams(
        arch=config,
        coder_filters=filters,
        coder_biases=biases,
        decoder_filter=decoder,
        decoder_bias=np.zeros(1),
    )


def _lifetime_keep(scores: np.ndarray, rate: float) -> np.ndarray:
    """Per filter, keep the top ceil(rate*batch) samples by score. Ties go to
    the lowest sample index. scores and the returned mask are (batch, c)."""
    nb, c = scores.shape
    n_keep = min(nb, max(1, math.ceil(rate * nb)))
    order = np.argsort(-scores, axis=0, kind="stable")
    keep = np.zeros((nb, c), dtype=bool)
    np.put_along_axis(keep, order[:n_keep, :], True, axis=0)
    return keep


def _topk_by_value(maps: np.ndarray, k: int) -> np.ndarray:
    """Zero all but the k largest entries per map (ties: lowest row-major
    index). maps is (b, c, h, w); no rectifier here."""
    nb, c, height, width = maps.shape
    hw = height * width
    if k >= hw:
        return maps.copy()
    flat = maps.reshape(nb, c, hw)
    if k == 1:
        pos = flat.argmax(axis=2)[:, :, None]
    else:
        pos = np.argsort(-flat, axis=2, kind="stable")[:, :, :k]
    out = np.zeros_like(flat)
    np.put_along_axis(out, pos, np.take_along_axis(flat, pos, axis=2), axis=2)
    return out.reshape(nb, c, height, width)


def apply_wta(maps: np.ndarray, config: SparsityConfig) -> np.ndarray:
    """Winner-take-all on feature maps.

    2-D input is a single map, 3-D is (maps, h, w): spatial sparsity only.
    4-D input is a minibatch (batch, maps, h, w): spatial plus lifetime.
    """
    config.validate()
    maps = np.asarray(maps, dtype=np.float64)
    k = config.spatial_winners_per_map
    if maps.ndim == 2:
        return _topk_by_value(maps[None, None], k)[0, 0]
    if maps.ndim == 3:
        return _topk_by_value(maps[None], k)[0]
    if maps.ndim == 4:
        y = _topk_by_value(maps, k)
        scores = y.reshape(y.shape[0], y.shape[1], -1).max(axis=2)
        keep = _lifetime_keep(scores, config.lifetime_rate)
        return y * keep[:, :, None, None]
    raise ShapeMismatch(f"expected 2-4 dims, got shape {maps.shape}")


def _forward_batch(
    params: ModelParams,
    batch: np.ndarray,
    *,
    sparsify: bool = True,
    lifetime_rate: float | None = None,
) -> _BatchContext:
    """Run the net on a (batch, h, w) stack. lifetime_rate is only honored
    when sparsify is on (training minibatches)."""
    if batch.ndim != 3:
        raise ShapeMismatch(f"expected (batch, h, w), got {batch.shape}")
    winners = params.arch.sparsity.spatial_winners_per_map
    x = np.ascontiguousarray(batch[:, :, :, None], dtype=np.float64)
    nb, height, width, _ = x.shape
    hw = height * width

    if not sparsify:
        dense: list[np.ndarray] = []
        cur = x
        for w, b in zip(params.coder_filters, params.coder_biases):
            cur = np.maximum(conv_forward(cur, w, b), 0.0)
            dense.append(cur)
        recon = conv_forward(cur, params.decoder_filter, params.decoder_bias)
        return _BatchContext(
            x=x, in_pos=[], in_vals=[], grad_pos=[], reconstruction=recon,
            dense_maps=dense,
        )

    in_pos: list[np.ndarray] = []
    in_vals: list[np.ndarray] = []
    grad_pos: list[np.ndarray] = []
    pos = vals = None
    for layer, (w, b) in enumerate(zip(params.coder_filters, params.coder_biases)):
        if layer == 0:
            a = conv_forward(x, w, b)
        else:
            a = conv_forward_at(pos, vals, w, b, height, width)
        pos, vals = relu_topk(a, min(winners, hw))
        if lifetime_rate is not None:
            keep = _lifetime_keep(vals[:, :, 0], lifetime_rate)
            vals = vals * keep[:, :, None]
        live = np.where(vals > 0.0, pos, -1)
        in_pos.append(pos)
        in_vals.append(vals)
        grad_pos.append(np.ascontiguousarray(live))
    recon = conv_forward_at(pos, vals, params.decoder_filter, params.decoder_bias,
                            height, width)
    return _BatchContext(
        x=x, in_pos=in_pos, in_vals=in_vals, grad_pos=grad_pos, reconstruction=recon
    )


def _materialize_maps(ctx: _BatchContext, channels: list[int], hw: int) -> list[np.ndarray]:
    """Dense (b, c, hw) maps from the winner lists (sparse path only)."""
    out = []
    for pos, vals, c in zip(ctx.in_pos, ctx.in_vals, channels):
        nb = pos.shape[0]
        flat = np.zeros((nb, c, hw))
        np.put_along_axis(
            flat, np.maximum(pos, 0), np.where(pos >= 0, np.maximum(vals, 0.0), 0.0), axis=2
        )
        out.append(flat)
    return out


def forward(params: ModelParams, x: np.ndarray, sparsify: bool = True) -> Activations:
    """Evaluate the net on one image: coders (+ rectifier, + spatial WTA when
    sparsify is on), then the linear decoder."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D image, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ShapeMismatch("image contains non-finite pixels")
    height, width = x.shape
    ctx = _forward_batch(params, x[None], sparsify=sparsify)
    if ctx.dense_maps is not None:
        maps = [np.moveaxis(m[0], -1, 0) for m in ctx.dense_maps]
    else:
        channels = [w.shape[3] for w in params.coder_filters]
        maps = [
            m[0].reshape(c, height, width)
            for m, c in zip(_materialize_maps(ctx, channels, height * width), channels)
        ]
    return Activations(maps=maps, reconstruction=ctx.reconstruction[0, :, :, 0])


def encode(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Top-layer post-WTA representation of an image, shape (c_top, h, w)."""
    return forward(params, x, sparsify=True).maps[-1]


def encode_rows(params: ModelParams, batch: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Flattened top-layer codes for a (n, h, w) image stack, one row per
    image, laid out as (c, h, w) row-major. Spatial WTA on, lifetime off."""
    nb, height, width = batch.shape
    ctx = _forward_batch(params, batch, sparsify=True)
    pos = ctx.in_pos[-1]
    vals = ctx.in_vals[-1]
    c = pos.shape[1]
    flat = np.zeros((nb, c, height * width), dtype=dtype)
    np.put_along_axis(
        flat, np.maximum(pos, 0),
        np.where(pos >= 0, np.maximum(vals, 0.0), 0.0).astype(dtype), axis=2,
    )
    return flat.reshape(nb, c * height * width)


def decode(params: ModelParams, code: np.ndarray) -> np.ndarray:
    """Decode a top-layer representation back to an (unclamped) image."""
    code = np.asarray(code, dtype=np.float64)
    c_top = params.decoder_filter.shape[0]
    if code.ndim != 3 or code.shape[0] != c_top:
        raise ShapeMismatch(f"expected ({c_top}, h, w) code, got {code.shape}")
    cl = np.ascontiguousarray(np.moveaxis(code, 0, -1))[None]
    out = conv_forward(cl, params.decoder_filter, params.decoder_bias)
    return out[0, :, :, 0]


def distortion(x: np.ndarray, x_prime: np.ndarray) -> float:
    """Squared Euclidean pixel distance between two images."""
    x = np.asarray(x, dtype=np.float64)
    x_prime = np.asarray(x_prime, dtype=np.float64)
    if x.shape != x_prime.shape:
        raise ShapeMismatch(f"shapes {x.shape} and {x_prime.shape} differ")
    d = x - x_prime
    return float(np.dot(d.ravel(), d.ravel()))


def _backward_from_ctx(
    params: ModelParams, ctx: _BatchContext, *, mean: bool
) -> tuple[GradientVector, float]:
    """Exact gradients of the (mean) reconstruction distortion w.r.t. all
    parameters, straight-through on the WTA winners."""
    if ctx.dense_maps is not None:
        raise ShapeMismatch("backward needs a sparse (WTA) forward pass")
    nb, height, width, _ = ctx.x.shape
    resid = ctx.reconstruction - ctx.x
    losses = (resid * resid).sum(axis=(1, 2, 3))
    if not np.all(np.isfinite(losses)):
        raise NonFiniteLoss("reconstruction loss is not finite")
    g = np.ascontiguousarray(2.0 * resid)

    kd = params.arch.decoder_filter_size
    c_top = params.decoder_filter.shape[0]
    gw_dec = conv_grad_weights_at(
        ctx.in_pos[-1], ctx.in_vals[-1], g, c_top, kd, kd, height, width
    )
    gb_dec = g.sum(axis=(0, 1, 2))
    gcur, gsum = conv_grad_input_at(
        g, params.decoder_filter, ctx.grad_pos[-1], height, width
    )

    n_layers = len(params.coder_filters)
    gw_layers: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb_layers: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for layer in reversed(range(n_layers)):
        gb_layers[layer] = gsum
        w = params.coder_filters[layer]
        if layer > 0:
            gw_layers[layer] = conv_grad_weights_at(
                ctx.in_pos[layer - 1], ctx.in_vals[layer - 1], gcur,
                w.shape[0], w.shape[1], w.shape[2], height, width,
            )
            gcur, gsum = conv_grad_input_at(
                gcur, w, ctx.grad_pos[layer - 1], height, width
            )
        else:
            gw_layers[layer] = conv_grad_weights(ctx.x, gcur, w.shape[1], w.shape[2])

    scale = 1.0 / nb if mean else 1.0
    if scale != 1.0:
        for arr in gw_layers + gb_layers:
            arr *= scale
        gw_dec *= scale
        gb_dec *= scale
    loss = float(losses.mean() if mean else losses.sum())
    grad = GradientVector(
        coder_filters=gw_layers,
        coder_biases=gb_layers,
        decoder_filter=gw_dec,
        decoder_bias=gb_dec,
    )
    return grad, loss


def backward(params: ModelParams, x: np.ndarray) -> tuple[GradientVector, float]:
    """Gradient of distortion(x, reconstruction) w.r.t. all parameters, plus
    the loss itself. Spatial WTA active, lifetime sparsity not (single sample)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D image, got shape {x.shape}")
    ctx = _forward_batch(params, x[None], sparsify=True)
    return _backward_from_ctx(params, ctx, mean=True)


def sgd_step(params: ModelParams, grad: GradientVector, learning_rate: float) -> ModelParams:
    """w <- w - learning_rate * grad, elementwise. Returns new params."""
    if learning_rate <= 0:
        raise ValueError(f"learning rate {learning_rate} must be > 0")
    p_arrays = params.arrays()
    g_arrays = grad.arrays()
    if len(p_arrays) != len(g_arrays) or any(
        p.shape != g.shape for p, g in zip(p_arrays, g_arrays)
    ):
        raise ShapeMismatch("gradient shapes do not match parameter shapes")
    new = [p - learning_rate * g for p, g in zip(p_arrays, g_arrays)]
    n_layers = len(params.coder_filters)
    return ModelParams(
        arch=params.arch,
        coder_filters=[new[2 * i] for i in range(n_layers)],
        coder_biases=[new[2 * i + 1] for i in range(n_layers)],
        decoder_filter=new[2 * n_layers],
        decoder_bias=new[2 * n_layers + 1],
    )


def _mask_signature(ctx: _BatchContext) -> tuple[bytes, ...]:
    return tuple(pos.tobytes() for pos in ctx.grad_pos)


def gradient_check(
    params: ModelParams,
    x: np.ndarray,
    epsilon: float,
    parameter_samples: int = 200,
    rng_seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients
    over a seeded sample of parameters, skipping parameters whose winner mask
    is unstable under the +-epsilon probes."""
    if not (np.isfinite(epsilon) and epsilon > 0):
        raise InvalidEpsilon(f"epsilon {epsilon} must be a positive real")
    x = np.asarray(x, dtype=np.float64)
    work = params.copy()
    grad, _ = backward(work, x)
    base_sig = _mask_signature(_forward_batch(work, x[None], sparsify=True))

    p_arrays = work.arrays()
    g_arrays = grad.arrays()
    sizes = [a.size for a in p_arrays]
    total = sum(sizes)
    offsets = np.cumsum([0] + sizes)
    rng = np.random.default_rng(rng_seed)
    picks = rng.choice(total, size=min(parameter_samples, total), replace=False)

    worst = 0.0
    for flat_index in picks:
        arr_i = int(np.searchsorted(offsets, flat_index, side="right") - 1)
        local = int(flat_index - offsets[arr_i])
        target = p_arrays[arr_i].reshape(-1)
        saved = target[local]

        target[local] = saved + epsilon
        ctx_plus = _forward_batch(work, x[None], sparsify=True)
        target[local] = saved - epsilon
        ctx_minus = _forward_batch(work, x[None], sparsify=True)
        target[local] = saved

        if _mask_signature(ctx_plus) != base_sig or _mask_signature(ctx_minus) != base_sig:
            continue  # winner set moved; the loss is not differentiable here
        loss_plus = float(((ctx_plus.reconstruction - ctx_plus.x) ** 2).sum())
        loss_minus = float(((ctx_minus.reconstruction - ctx_minus.x) ** 2).sum())
        numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
        analytic = float(g_arrays[arr_i].reshape(-1)[local])
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst


def serialize(params: ModelParams) -> bytes:
    """Checkpoint container: MRPH magic, u16 version, arch as canonical JSON,
    little-endian float64 payload, trailing CRC32."""
    config_text = params.arch.to_canonical_json().encode("utf-8")
    body = bytearray()
    body += CHECKPOINT_MAGIC
    body += struct.pack("<H", CHECKPOINT_VERSION)
    body += struct.pack("<I", len(config_text))
    body += config_text
    for arr in params.arrays():
        body += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    return bytes(body)


def _param_shapes(arch: ArchConfig) -> list[tuple[int, ...]]:
    shapes: list[tuple[int, ...]] = []
    c_in = 1
    for count, size, _stride in arch.coder_layers:
        shapes.append((c_in, size, size, count))
        shapes.append((count,))
        c_in = count
    kd = arch.decoder_filter_size
    shapes.append((c_in, kd, kd, 1))
    shapes.append((1,))
    return shapes


def deserialize(blob: bytes) -> ModelParams:
    """Inverse of serialize. Checksum is verified before anything else so any
    corrupted byte surfaces as ChecksumFailure."""
    if len(blob) < 14:
        raise BadCheckpoint(f"container too short ({len(blob)} bytes)")
    (stored,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored:
        raise ChecksumFailure("checkpoint bytes fail their checksum")
    if blob[:4] != CHECKPOINT_MAGIC:
        raise BadCheckpoint(f"bad magic {blob[:4]!r}")
    (version,) = struct.unpack("<H", blob[4:6])
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"format version {version}, expected {CHECKPOINT_VERSION}")
    (config_len,) = struct.unpack("<I", blob[6:10])
    config_end = 10 + config_len
    arch = ArchConfig.from_canonical_json(blob[10:config_end].decode("utf-8"))
    arch.validate()

    payload = np.frombuffer(blob[config_end:-4], dtype="<f8")
    shapes = _param_shapes(arch)
    expected = sum(int(np.prod(s)) for s in shapes)
    if payload.size != expected:
        raise BadCheckpoint(
            f"payload holds {payload.size} values, arch needs {expected}"
        )
    arrays: list[np.ndarray] = []
    cursor = 0
    for shape in shapes:
        n = int(np.prod(shape))
        arrays.append(payload[cursor : cursor + n].reshape(shape).astype(np.float64))
        cursor += n
    n_layers = len(arch.coder_layers)
    return ModelParams(
        arch=arch,
        coder_filters=[arrays[2 * i] for i in range(n_layers)],
        coder_biases=[arrays[2 * i + 1] for i in range(n_layers)],
        decoder_filter=arrays[2 * n_layers],
        decoder_bias=arrays[2 * n_layers + 1],
    )


def checkpoint_checksum(params: ModelParams) -> str:
    """Stable hex id of a checkpoint, used to stamp generated sets."""
    return f"{zlib.crc32(serialize(params)) & 0xFFFFFFFF:08x}"
