"""Two-stream spatiotemporal feature extractor.

Each stream is a small I3D-style stack: a 3-D convolution stem followed by
inception blocks, each optionally followed by a squeeze-and-excitation block.
Only spatial axes are pooled at the head, so every retained timestep yields
one ``feature_dim``-wide row.

Tensors are laid out ``[T, H, W, C]``; kernels ``[kT, kH, kW, Cin, Cout]``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tensor, ops
from .autodiff.tensor import as_tensor, record
from .errors import ContractError, DimensionError
from . import params as P

RGB_CHANNELS = 3
FLOW_CHANNELS = 2
# sqrt(6) turns the 1/sqrt(fan_in) bound into He-uniform, which keeps
# activation variance roughly constant through ReLU convolutions
RELU_GAIN = 6 ** 0.5


def _triple(v) -> tuple:
    if isinstance(v, (int, np.integer)):
        return (int(v),) * 3
    v = tuple(int(x) for x in v)
    if len(v) != 3:
        raise ContractError(f"expected 3 values, got {v}")
    return v


def conv_output_extent(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


# --------------------------------------------------------------------------
# primitives


def conv3d(x, kernel, bias=None, stride=1, padding=0) -> Tensor:
    """3-D cross-correlation with zero padding, plus optional per-channel bias."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 5:
        raise DimensionError(f"conv3d expects [T,H,W,C] input and 5-D kernel, got {x.shape}, {kernel.shape}")
    if kernel.shape[3] != x.shape[3]:
        raise DimensionError(f"conv3d: kernel expects {kernel.shape[3]} input channels, input has {x.shape[3]}")
    st = _triple(stride)
    if padding == "same":
        pad = tuple(k // 2 for k in kernel.shape[:3])
    else:
        pad = _triple(padding)
    ks = kernel.shape[:3]
    padded = [x.shape[i] + 2 * pad[i] for i in range(3)]
    if any(ks[i] > padded[i] for i in range(3)):
        raise DimensionError(f"conv3d: kernel {ks} larger than padded input {tuple(padded)}")
    o = tuple(conv_output_extent(x.shape[i], ks[i], st[i], pad[i]) for i in range(3))
    cout = kernel.shape[4]

    xp = np.pad(x.data, [(pad[0], pad[0]), (pad[1], pad[1]), (pad[2], pad[2]), (0, 0)])
    K = kernel.data
    offsets = list(itertools.product(range(ks[0]), range(ks[1]), range(ks[2])))

    def window(dt, dh, dw):
        return (slice(dt, dt + st[0] * (o[0] - 1) + 1, st[0]),
                slice(dh, dh + st[1] * (o[1] - 1) + 1, st[1]),
                slice(dw, dw + st[2] * (o[2] - 1) + 1, st[2]))

    out = np.zeros(o + (cout,))
    for dt, dh, dw in offsets:
        out += xp[window(dt, dh, dw)] @ K[dt, dh, dw]
    inputs = (x, kernel)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise DimensionError(f"conv3d: bias shape {bias.shape} != ({cout},)")
        out += bias.data
        inputs = (x, kernel, bias)

    def bw(g):
        gk = np.zeros_like(K) if kernel.requires_grad else None
        gxp = np.zeros_like(xp) if x.requires_grad else None
        g2 = g.reshape(-1, cout)
        for dt, dh, dw in offsets:
            w = window(dt, dh, dw)
            if gk is not None:
                gk[dt, dh, dw] = xp[w].reshape(-1, xp.shape[3]).T @ g2
            if gxp is not None:
                gxp[w] += g @ K[dt, dh, dw].T
        gx = None
        if gxp is not None:
            gx = gxp[pad[0]:pad[0] + x.shape[0], pad[1]:pad[1] + x.shape[1], pad[2]:pad[2] + x.shape[2]]
        grads = (gx, gk)
        if bias is not None:
            grads += (g.sum(axis=(0, 1, 2)),)
        return grads

    return record(out, inputs, bw)


def max_pool3d(x, size=3, stride=1, padding="same") -> Tensor:
    """Max pooling over ``[T, H, W]``; padded cells never win.

    Ties route the gradient to the first window offset in row-major order.
    """
    x = as_tensor(x)
    ks = _triple(size)
    st = _triple(stride)
    pad = tuple(k // 2 for k in ks) if padding == "same" else _triple(padding)
    o = tuple(conv_output_extent(x.shape[i], ks[i], st[i], pad[i]) for i in range(3))
    if any(n < 1 for n in o):
        raise DimensionError(f"max_pool3d: window {ks} too large for {x.shape}")
    xp = np.pad(x.data, [(pad[0], pad[0]), (pad[1], pad[1]), (pad[2], pad[2]), (0, 0)],
                constant_values=-np.inf)
    offsets = list(itertools.product(range(ks[0]), range(ks[1]), range(ks[2])))

    def window(dt, dh, dw):
        return (slice(dt, dt + st[0] * (o[0] - 1) + 1, st[0]),
                slice(dh, dh + st[1] * (o[1] - 1) + 1, st[1]),
                slice(dw, dw + st[2] * (o[2] - 1) + 1, st[2]))

    best = np.full(o + (x.shape[3],), -np.inf)
    arg = np.zeros(best.shape, dtype=np.int64)
    for k, off in enumerate(offsets):
        cand = xp[window(*off)]
        better = cand > best
        best = np.where(better, cand, best)
        arg[better] = k

    def bw(g):
        gxp = np.zeros_like(xp)
        for k, off in enumerate(offsets):
            gxp[window(*off)] += np.where(arg == k, g, 0.0)
        return (gxp[pad[0]:pad[0] + x.shape[0], pad[1]:pad[1] + x.shape[1], pad[2]:pad[2] + x.shape[2]],)

    return record(best, (x,), bw)


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class InceptionSpec:
    """Branch widths: 1x1x1; 1x1x1 -> 3x3x3; 1x1x1 -> 3x3x3; pool -> 1x1x1."""

    b0: int
    b1_reduce: int
    b1: int
    b2_reduce: int
    b2: int
    b3: int

    @property
    def out_channels(self) -> int:
        return self.b0 + self.b1 + self.b2 + self.b3


@dataclass(frozen=True)
class StreamConfig:
    in_channels: int = RGB_CHANNELS
    spatial_size: int = 32
    stem_channels: int = 8
    stem_kernel: tuple = (3, 3, 3)
    stem_stride: tuple = (1, 2, 2)
    inception: tuple = field(default_factory=lambda: (InceptionSpec(4, 4, 8, 2, 2, 2),
                                                      InceptionSpec(4, 4, 8, 2, 2, 2)))
    se_ratio: int = 4
    use_se: bool = True
    feature_dim: int = 64
    conv_gain: float = RELU_GAIN

    def __post_init__(self):
        if self.conv_gain <= 0:
            raise ContractError("conv_gain must be positive")
        if self.feature_dim <= 0 or self.in_channels <= 0 or self.stem_channels <= 0:
            raise ContractError("stream extents must be positive")
        if self.spatial_size <= 0:
            raise ContractError("spatial_size must be positive")
        if self.use_se:
            for spec in self.inception:
                if self.se_ratio <= 0 or spec.out_channels % self.se_ratio:
                    raise ContractError(
                        f"SE ratio {self.se_ratio} must divide channel count {spec.out_channels}")

    @property
    def num_inception_blocks(self) -> int:
        return len(self.inception)

    def output_length(self, n_frames: int) -> int:
        """Temporal extent after the stem; inception blocks preserve it."""
        kt, st = self.stem_kernel[0], self.stem_stride[0]
        return conv_output_extent(n_frames, kt, st, kt // 2)

    def min_frames(self) -> int:
        n = 1
        while self.output_length(n) < 1:
            n += 1
        return n

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "spatial_size": self.spatial_size,
            "stem_channels": self.stem_channels,
            "stem_kernel": list(self.stem_kernel),
            "stem_stride": list(self.stem_stride),
            "inception": [[s.b0, s.b1_reduce, s.b1, s.b2_reduce, s.b2, s.b3] for s in self.inception],
            "se_ratio": self.se_ratio,
            "use_se": self.use_se,
            "feature_dim": self.feature_dim,
            "conv_gain": self.conv_gain,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StreamConfig":
        d = dict(d)
        d["stem_kernel"] = tuple(d["stem_kernel"])
        d["stem_stride"] = tuple(d["stem_stride"])
        d["inception"] = tuple(InceptionSpec(*s) for s in d["inception"])
        return cls(**d)


def paper_scale_config(in_channels: int = RGB_CHANNELS) -> StreamConfig:
    """224x224 input and 400-wide features; branch widths follow I3D's Mixed_3b."""
    return StreamConfig(
        in_channels=in_channels,
        spatial_size=224,
        stem_channels=64,
        stem_kernel=(7, 7, 7),
        stem_stride=(1, 2, 2),
        inception=(InceptionSpec(64, 96, 128, 16, 32, 32), InceptionSpec(128, 128, 192, 32, 96, 64)),
        se_ratio=16,
        feature_dim=400,
    )


# --------------------------------------------------------------------------
# clips


@dataclass
class VideoClip:
    """Paired RGB frames ``[n, H, W, 3]`` and flow frames ``[n-1, H, W, 2]``."""

    rgb: np.ndarray
    flow: np.ndarray

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        self.flow = np.asarray(self.flow, dtype=np.float64)
        if self.rgb.ndim != 4 or self.rgb.shape[3] != RGB_CHANNELS:
            raise DimensionError(f"rgb frames must be [n,H,W,3], got {self.rgb.shape}")
        if self.flow.ndim != 4 or self.flow.shape[3] != FLOW_CHANNELS:
            raise DimensionError(f"flow frames must be [n-1,H,W,2], got {self.flow.shape}")
        if self.rgb.shape[0] < 2:
            raise ContractError(f"a clip needs at least 2 frames, got {self.rgb.shape[0]}")
        if self.flow.shape[0] != self.rgb.shape[0] - 1:
            raise ContractError(
                f"flow must have n-1={self.rgb.shape[0] - 1} frames, got {self.flow.shape[0]}")
        if self.flow.shape[1:3] != self.rgb.shape[1:3]:
            raise DimensionError("rgb and flow spatial sizes differ")

    @property
    def n(self) -> int:
        return self.rgb.shape[0]

    def window(self, start: int, end: int) -> "VideoClip":
        """Frames ``start..end`` inclusive and the flow between them."""
        return VideoClip(self.rgb[start:end + 1], self.flow[start:end])


# --------------------------------------------------------------------------
# blocks


def init_stream(rng: np.random.Generator, cfg: StreamConfig, prefix: str) -> P.Params:
    p: P.Params = {}
    kt, kh, kw = cfg.stem_kernel
    fan = kt * kh * kw * cfg.in_channels
    p[f"{prefix}.stem.kernel"] = P.uniform(rng, (kt, kh, kw, cfg.in_channels, cfg.stem_channels), fan,
                                           f"{prefix}.stem.kernel", cfg.conv_gain)
    p[f"{prefix}.stem.bias"] = P.zeros((cfg.stem_channels,), f"{prefix}.stem.bias")
    cin = cfg.stem_channels
    for i, spec in enumerate(cfg.inception):
        p.update(init_inception(rng, cin, spec, f"{prefix}.inc{i}", cfg.conv_gain))
        if cfg.use_se:
            p.update(init_se(rng, spec.out_channels, cfg.se_ratio, f"{prefix}.se{i}"))
        cin = spec.out_channels
    p[f"{prefix}.proj.weight"] = P.uniform(rng, (cin, cfg.feature_dim), cin, f"{prefix}.proj.weight")
    p[f"{prefix}.proj.bias"] = P.zeros((cfg.feature_dim,), f"{prefix}.proj.bias")
    return p


def init_inception(rng, cin: int, spec: InceptionSpec, prefix: str, gain: float = 1.0) -> P.Params:
    shapes = {
        "b0": (1, 1, 1, cin, spec.b0),
        "b1a": (1, 1, 1, cin, spec.b1_reduce),
        "b1b": (3, 3, 3, spec.b1_reduce, spec.b1),
        "b2a": (1, 1, 1, cin, spec.b2_reduce),
        "b2b": (3, 3, 3, spec.b2_reduce, spec.b2),
        "b3": (1, 1, 1, cin, spec.b3),
    }
    out = {}
    for key, shape in shapes.items():
        name = f"{prefix}.{key}.kernel"
        out[name] = P.uniform(rng, shape, int(np.prod(shape[:4])), name, gain)
    return out


def init_se(rng, channels: int, ratio: int, prefix: str) -> P.Params:
    if ratio <= 0 or channels % ratio:
        raise ContractError(f"SE ratio {ratio} must divide {channels}")
    red = channels // ratio
    return {
        f"{prefix}.w1": P.uniform(rng, (red, channels), channels, f"{prefix}.w1"),
        f"{prefix}.w2": P.uniform(rng, (channels, red), red, f"{prefix}.w2"),
    }


def inception_block(x, p, prefix: str) -> Tensor:
    """Four ReLU branches concatenated on channels; extents preserved."""
    k = lambda name: p[f"{prefix}.{name}.kernel"]  # noqa: E731
    b0 = ops.relu(conv3d(x, k("b0")))
    b1 = ops.relu(conv3d(ops.relu(conv3d(x, k("b1a"))), k("b1b"), padding="same"))
    b2 = ops.relu(conv3d(ops.relu(conv3d(x, k("b2a"))), k("b2b"), padding="same"))
    b3 = ops.relu(conv3d(max_pool3d(x), k("b3")))
    branches = (b0, b1, b2, b3)
    if len({b.shape[:3] for b in branches}) != 1:
        raise DimensionError(f"inception branch extents differ: {[b.shape for b in branches]}")
    return ops.concat(branches, axis=-1)


def se_apply(u, w1, w2) -> Tensor:
    """Squeeze (global mean over T,H,W), excite, and rescale channels of ``u``."""
    u, w1, w2 = as_tensor(u), as_tensor(w1), as_tensor(w2)
    c = u.shape[-1]
    if w1.shape[1] != c or w2.shape != (c, w1.shape[0]):
        raise DimensionError(f"SE weights {w1.shape}/{w2.shape} do not fit {c} channels")
    z = ops.reshape(ops.mean(u, axes=(0, 1, 2)), (c, 1))
    s = ops.sigmoid(ops.matmul(w2, ops.relu(ops.matmul(w1, z))))
    return ops.mul(u, ops.reshape(s, (c,)))


def excitation(z: np.ndarray, w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """Channel gates for a squeezed descriptor, without recording."""
    return 1.0 / (1.0 + np.exp(-(w2 @ np.maximum(w1 @ z, 0.0))))


def stream_forward(frames, p, cfg: StreamConfig, prefix: str) -> Tensor:
    """``[n, H, W, Cin]`` frames -> ``[n', feature_dim]`` features."""
    frames = as_tensor(frames)
    if frames.ndim != 4 or frames.shape[3] != cfg.in_channels:
        raise DimensionError(f"{prefix}: expected [n,H,W,{cfg.in_channels}] frames, got {frames.shape}")
    if frames.shape[0] < cfg.min_frames():
        raise ContractError(
            f"{prefix}: clip too short ({frames.shape[0]} frames, need {cfg.min_frames()})")
    kt = cfg.stem_kernel
    x = ops.relu(conv3d(frames, p[f"{prefix}.stem.kernel"], p[f"{prefix}.stem.bias"],
                        stride=cfg.stem_stride, padding=tuple(k // 2 for k in kt)))
    for i in range(cfg.num_inception_blocks):
        x = inception_block(x, p, f"{prefix}.inc{i}")
        if cfg.use_se:
            x = se_apply(x, p[f"{prefix}.se{i}.w1"], p[f"{prefix}.se{i}.w2"])
    pooled = ops.mean(x, axes=(1, 2))
    return ops.add(ops.matmul(pooled, p[f"{prefix}.proj.weight"]), p[f"{prefix}.proj.bias"])


def extract_visual_features(clip: VideoClip, rgb_params, flow_params,
                            rgb_cfg: Optional[StreamConfig] = None,
                            flow_cfg: Optional[StreamConfig] = None,
                            rgb_prefix: str = "rgb", flow_prefix: str = "flow"):
    """Return ``(V_spt [n', D], V_tpr [(n-1)', D])`` from the two streams."""
    rgb_cfg = rgb_cfg or StreamConfig(in_channels=RGB_CHANNELS)
    flow_cfg = flow_cfg or StreamConfig(in_channels=FLOW_CHANNELS)
    spt = stream_forward(clip.rgb, rgb_params, rgb_cfg, rgb_prefix)
    tpr = stream_forward(clip.flow, flow_params, flow_cfg, flow_prefix)
    return spt, tpr


def se_param_count(cfg: StreamConfig) -> int:
    """Closed-form SE parameter total: ``2 * C**2 / r`` per site."""
    if not cfg.use_se:
        return 0
    return sum(2 * s.out_channels ** 2 // cfg.se_ratio for s in cfg.inception)
