"""Declarative network builders and forward evaluation.

Three architectures share one layer vocabulary: the noise-to-waveform
generator (dense + stacked upsampling convs), the phase-shuffled critic
(strided convs down to one unbounded score per clip), and the
encoder-decoder refiner whose skip connections add each encoder layer's
input onto the shape-matched decoder output.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterError, ShapeError, Tensor

KERNEL_WIDTH = 25
STRIDE = 4
Z_DIM = 100
CLIP_LEN = 16_384
DEFAULT_SHUFFLE = 2
INIT_STD = 0.02


@dataclass
class LayerSpec:
    kind: str  # dense | conv | tconv | relu | lrelu | tanh | reshape | phase_shuffle
    kernel: int = 0
    stride: int = 1
    in_channels: int = 0
    out_channels: int = 0
    shuffle_n: int = 0
    target: tuple[int, ...] = ()  # per-sample shape, reshape only


@dataclass
class NetworkSpec:
    role: str  # generator | discriminator | autoencoder
    layers: list[LayerSpec]
    skips: list[tuple[int, int]] = field(default_factory=list)  # (src layer, dst layer)
    model_dim: int = 1

    def to_dict(self) -> dict:
        return {"role": self.role, "model_dim": self.model_dim,
                "skips": [list(p) for p in self.skips],
                "layers": [asdict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        layers = [LayerSpec(**{**l, "target": tuple(l.get("target", ()))})
                  for l in d["layers"]]
        return cls(role=d["role"], layers=layers,
                   skips=[tuple(p) for p in d["skips"]], model_dim=d["model_dim"])


ModelParams = dict[str, Tensor]


# ---------------------------------------------------------------------------
# builders


def build_generator(model_dim: int, z_dim: int = Z_DIM) -> NetworkSpec:
    """Noise vector -> dense to [16, 16d] -> five upsampling convs -> [16384, 1]."""
    if model_dim < 1:
        raise ParameterError(f"model_dim must be >= 1, got {model_dim}")
    d = model_dim
    layers = [
        LayerSpec("dense", in_channels=z_dim, out_channels=16 * 16 * d),
        LayerSpec("relu"),
        LayerSpec("reshape", target=(16, 16 * d)),
    ]
    chans = [16 * d, 8 * d, 4 * d, 2 * d, d, 1]
    for i in range(5):
        layers.append(LayerSpec("tconv", kernel=KERNEL_WIDTH, stride=STRIDE,
                                in_channels=chans[i], out_channels=chans[i + 1]))
        layers.append(LayerSpec("relu" if i < 4 else "tanh"))
    return NetworkSpec(role="generator", layers=layers, model_dim=d)


def build_discriminator(model_dim: int, shuffle_n: int = DEFAULT_SHUFFLE) -> NetworkSpec:
    """[16384, 1] -> five strided convs with leaky activations and phase
    shuffling -> dense -> one unbounded score per row (Wasserstein critic)."""
    if model_dim < 1:
        raise ParameterError(f"model_dim must be >= 1, got {model_dim}")
    if shuffle_n < 0:
        raise ParameterError(f"shuffle_n must be >= 0, got {shuffle_n}")
    d = model_dim
    chans = [1, d, 2 * d, 4 * d, 8 * d, 16 * d]
    layers: list[LayerSpec] = []
    for i in range(5):
        layers.append(LayerSpec("conv", kernel=KERNEL_WIDTH, stride=STRIDE,
                                in_channels=chans[i], out_channels=chans[i + 1]))
        layers.append(LayerSpec("lrelu"))
        if i < 4:
            layers.append(LayerSpec("phase_shuffle", shuffle_n=shuffle_n))
    layers.append(LayerSpec("reshape", target=(16 * 16 * d,)))
    layers.append(LayerSpec("dense", in_channels=16 * 16 * d, out_channels=1))
    return NetworkSpec(role="discriminator", layers=layers, model_dim=d)


def build_autoencoder(model_dim: int) -> NetworkSpec:
    """Four downsampling convs to a [64, 8d] bottleneck, four upsampling convs
    back to [16384, 1].  Each encoder layer's input is added onto the output
    of the decoder layer with the identical activation shape."""
    if model_dim < 1:
        raise ParameterError(f"model_dim must be >= 1, got {model_dim}")
    d = model_dim
    enc = [1, d, 2 * d, 4 * d, 8 * d]
    layers: list[LayerSpec] = []
    for i in range(4):
        layers.append(LayerSpec("conv", kernel=KERNEL_WIDTH, stride=STRIDE,
                                in_channels=enc[i], out_channels=enc[i + 1]))
        layers.append(LayerSpec("relu"))
    dec = [8 * d, 4 * d, 2 * d, d, 1]
    for i in range(4):
        layers.append(LayerSpec("tconv", kernel=KERNEL_WIDTH, stride=STRIDE,
                                in_channels=dec[i], out_channels=dec[i + 1]))
        layers.append(LayerSpec("relu" if i < 3 else "tanh"))
    # conv layer i sits at index 2i; decoder tconv j at index 8 + 2j
    skips = [(0, 14), (2, 12), (4, 10), (6, 8)]
    return NetworkSpec(role="autoencoder", layers=layers, skips=skips, model_dim=d)


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> ModelParams:
    """Weights ~ Normal(0, 0.02), biases zero."""
    params: ModelParams = {}
    for i, layer in enumerate(spec.layers):
        if layer.kind == "dense":
            w = rng.normal(0, INIT_STD, (layer.in_channels, layer.out_channels))
            params[f"layer{i:02d}.weight"] = Tensor(w.astype(np.float32), tracked=True)
            params[f"layer{i:02d}.bias"] = Tensor(
                np.zeros(layer.out_channels, dtype=np.float32), tracked=True)
        elif layer.kind in ("conv", "tconv"):
            k = rng.normal(0, INIT_STD, (layer.kernel, layer.in_channels, layer.out_channels))
            params[f"layer{i:02d}.weight"] = Tensor(k.astype(np.float32), tracked=True)
            params[f"layer{i:02d}.bias"] = Tensor(
                np.zeros(layer.out_channels, dtype=np.float32), tracked=True)
    return params


# ---------------------------------------------------------------------------
# phase shuffle


def phase_shuffle(x: Tensor, n: int, rng: np.random.Generator) -> Tensor:
    """Shift each (batch, channel) series by a uniform draw from {-n..n},
    mirroring at both boundaries.  Shape-preserving; n=0 is the identity."""
    if n < 0:
        raise ParameterError(f"shuffle width must be >= 0, got {n}")
    if n == 0:
        return x
    B, L, C = x.shape
    if L <= n:
        raise ParameterError(f"series length {L} must exceed shuffle width {n}")
    shifts = rng.integers(-n, n + 1, size=(B, 1, C))
    idx = np.arange(L)[None, :, None] + shifts
    idx = np.where(idx < 0, -idx, idx)
    idx = np.where(idx >= L, 2 * L - 2 - idx, idx)
    return ad.take_length(x, idx)


# ---------------------------------------------------------------------------
# forward evaluation


def forward(spec: NetworkSpec, params: ModelParams, x, rng: np.random.Generator | None = None) -> Tensor:
    """Evaluate the layer stack, adding skip sources onto their destination
    layer outputs before that layer's activation."""
    t = x if isinstance(x, Tensor) else Tensor(x)
    src_for_dst = {dst: src for src, dst in spec.skips}
    skip_sources = set(src for src, _ in spec.skips)
    saved: dict[int, Tensor] = {}
    for i, layer in enumerate(spec.layers):
        if i in skip_sources:
            saved[i] = t
        try:
            t = _apply_layer(layer, params, f"layer{i:02d}", t, rng)
        except (ShapeError, ParameterError) as exc:
            raise type(exc)(f"layer {i} ({layer.kind}): {exc}") from None
        if i in src_for_dst:
            s = saved[src_for_dst[i]]
            if s.shape != t.shape:
                raise ShapeError(f"layer {i}: skip source shape {s.shape} does not "
                                 f"match destination shape {t.shape}")
            t = ad.add(t, s)
    return t


def _apply_layer(layer: LayerSpec, params: ModelParams, pname: str, t: Tensor,
                 rng: np.random.Generator | None) -> Tensor:
    kind = layer.kind
    if kind == "dense":
        return ad.dense(t, params[f"{pname}.weight"], params[f"{pname}.bias"])
    if kind == "conv":
        out = ad.conv1d(t, params[f"{pname}.weight"], layer.stride)
        return ad.add(out, params[f"{pname}.bias"])
    if kind == "tconv":
        out = ad.conv1d_transpose(t, params[f"{pname}.weight"], layer.stride)
        return ad.add(out, params[f"{pname}.bias"])
    if kind == "relu":
        return ad.relu(t)
    if kind == "lrelu":
        return ad.lrelu(t)
    if kind == "tanh":
        return ad.tanh_act(t)
    if kind == "reshape":
        return ad.reshape(t, (t.shape[0],) + layer.target)
    if kind == "phase_shuffle":
        if layer.shuffle_n == 0:
            return t
        if rng is None:
            raise ParameterError("phase shuffle requires an rng")
        return phase_shuffle(t, layer.shuffle_n, rng)
    raise ParameterError(f"unknown layer kind {kind!r}")


def critic_scores(spec: NetworkSpec, params: ModelParams, x,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Forward through a discriminator, flattened to one score per row."""
    out = forward(spec, params, x, rng)
    return ad.reshape(out, (out.shape[0],))


# ---------------------------------------------------------------------------
# symbolic shape tracing


def entry_shape(spec: NetworkSpec) -> tuple[int, ...]:
    """Per-sample input shape the canonical configuration expects."""
    if spec.role == "generator":
        return (spec.layers[0].in_channels,)
    return (CLIP_LEN, 1)


def shape_trace(spec: NetworkSpec, entry: tuple[int, ...] | None = None) -> list[tuple[int, ...]]:
    """Per-sample activation shape after each layer, without parameters."""
    shape = tuple(entry) if entry is not None else entry_shape(spec)
    trace = [shape]
    for i, layer in enumerate(spec.layers):
        kind = layer.kind
        if kind == "dense":
            if shape != (layer.in_channels,):
                raise ShapeError(f"layer {i} (dense): expected ({layer.in_channels},), "
                                 f"got {shape}")
            shape = (layer.out_channels,)
        elif kind == "conv":
            if len(shape) != 2 or shape[1] != layer.in_channels:
                raise ShapeError(f"layer {i} (conv): expected [L, {layer.in_channels}], "
                                 f"got {shape}")
            shape = (-(-shape[0] // layer.stride), layer.out_channels)
        elif kind == "tconv":
            if len(shape) != 2 or shape[1] != layer.in_channels:
                raise ShapeError(f"layer {i} (tconv): expected [L, {layer.in_channels}], "
                                 f"got {shape}")
            shape = (shape[0] * layer.stride, layer.out_channels)
        elif kind == "reshape":
            if int(np.prod(shape)) != int(np.prod(layer.target)):
                raise ShapeError(f"layer {i} (reshape): cannot reshape {shape} "
                                 f"to {layer.target}")
            shape = layer.target
        trace.append(shape)
    return trace


# ---------------------------------------------------------------------------
# progressive chaining


class Pipeline:
    """Stage 1 consumes a noise vector; each later stage consumes the
    previous stage's audio output."""

    def __init__(self, stages: list[tuple[NetworkSpec, ModelParams]]):
        if not stages:
            raise ParameterError("pipeline needs at least one stage")
        self.stages = list(stages)
        shape = entry_shape(stages[0][0])
        for i, (spec, _) in enumerate(self.stages):
            try:
                shape = shape_trace(spec, shape)[-1]
            except ShapeError as exc:
                raise ShapeError(f"stage {i} is incompatible with its input: {exc}") from None

    @property
    def z_dim(self) -> int:
        return self.stages[0][0].layers[0].in_channels

    def run(self, z, rng: np.random.Generator | None = None,
            keep_intermediate: bool = False):
        t = z if isinstance(z, Tensor) else Tensor(z)
        outputs = []
        for spec, params in self.stages:
            t = forward(spec, params, t, rng)
            outputs.append(t)
        return (t, outputs) if keep_intermediate else t


def chain(stages: list[tuple[NetworkSpec, ModelParams]]) -> Pipeline:
    return Pipeline(stages)
