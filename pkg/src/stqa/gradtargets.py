"""Named gradient-check problems for every differentiable module.

Each builder takes a seeded generator and returns a :class:`Target`: a
scalar closure over some parameters.  Outputs are contracted with a fixed
random weight so every output element feeds the check with an O(1) slope.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Tensor, finite_diff_check, ops
from .channels import TextChannel, VisualChannel
from .data import QARecord
from .errors import ConfigError
from .fusion import context_match, fuse, level_adjust
from .scoring import lsep_loss, score_textual, score_visual
from .text import bilstm, embed, init_bilstm, lstm
from .video import (InceptionSpec, StreamConfig, VideoClip, conv3d, inception_block, init_inception,
                    init_se, init_stream, max_pool3d, se_apply, stream_forward)

SINGLE_OP_TOL = 1e-5
COMPOSITE_TOL = 1e-4


@dataclass
class Target:
    f: Callable[[], Tensor]
    params: list
    composite: bool

    @property
    def tolerance(self) -> float:
        return COMPOSITE_TOL if self.composite else SINGLE_OP_TOL

    def check(self, eps: float = 1e-5) -> float:
        return finite_diff_check(self.f, self.params, eps)


def _leaf(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


def _contract(out: Tensor, w: np.ndarray) -> Tensor:
    return ops.sum(ops.mul(out, w))


def _weighted(rng, fn, shape_probe):
    """Wrap ``fn`` so its output is summed against a fixed random weight."""
    w = rng.normal(size=shape_probe().shape)
    return lambda: _contract(fn(), w)


def _conv3d(rng):
    x, k, b = _leaf(rng, 4, 5, 5, 2), _leaf(rng, 3, 3, 3, 2, 3), _leaf(rng, 3)
    fn = lambda: conv3d(x, k, b, stride=(1, 2, 2), padding="same")  # noqa: E731
    return Target(_weighted(rng, fn, fn), [x, k, b], composite=False)


def _max_pool3d(rng):
    # distinct values keep every window's argmax clear of the perturbation
    x = Tensor(rng.permutation(3 * 4 * 4 * 2).reshape(3, 4, 4, 2) * 0.1, requires_grad=True)
    fn = lambda: max_pool3d(x)  # noqa: E731
    return Target(_weighted(rng, fn, fn), [x], composite=False)


def _inception(rng):
    x = _leaf(rng, 3, 4, 4, 3)
    p = init_inception(rng, 3, InceptionSpec(2, 2, 2, 1, 2, 2), "inc")
    fn = lambda: inception_block(x, p, "inc")  # noqa: E731
    return Target(_weighted(rng, fn, fn), [x, *p.values()], composite=True)


def _se_block(rng):
    u = _leaf(rng, 3, 4, 4, 8)
    p = init_se(rng, 8, 4, "se")
    w1, w2 = p["se.w1"], p["se.w2"]
    fn = lambda: se_apply(u, w1, w2)  # noqa: E731
    return Target(_weighted(rng, fn, fn), [u, w1, w2], composite=True)


def _tiny_stream(in_channels: int) -> StreamConfig:
    return StreamConfig(in_channels=in_channels, spatial_size=6, stem_channels=3,
                        inception=(InceptionSpec(1, 2, 1, 1, 1, 1),), se_ratio=2, feature_dim=3)


def _stream(rng):
    cfg = _tiny_stream(2)
    p = init_stream(rng, cfg, "s")
    frames = _leaf(rng, 3, 6, 6, 2)
    fn = lambda: stream_forward(frames, p, cfg, "s")  # noqa: E731
    return Target(_weighted(rng, fn, fn), [frames, *p.values()], composite=True)


def _lstm(rng):
    x, wx, wh, b = _leaf(rng, 2, 4, 3), _leaf(rng, 3, 8), _leaf(rng, 2, 8), _leaf(rng, 8)
    fn = lambda: lstm(x, wx, wh, b)  # noqa: E731
    return Target(_weighted(rng, fn, fn), [x, wx, wh, b], composite=False)


def _bilstm(rng):
    x = _leaf(rng, 5, 3)
    p = init_bilstm(rng, 3, 2, "enc")
    for t in p.values():
        t.data = rng.uniform(-1, 1, size=t.shape)
    fn = lambda: bilstm(x, p, "enc")  # noqa: E731
    return Target(_weighted(rng, fn, fn), [x, *p.values()], composite=True)


def _embedding(rng):
    table = _leaf(rng, 6, 3)
    ids = [1, 4, 4, 2]
    fn = lambda: embed(ids, table)  # noqa: E731
    return Target(_weighted(rng, fn, fn), [table], composite=False)


def _level_adjust(rng):
    x, w, b = _leaf(rng, 4, 3), _leaf(rng, 3, 5), _leaf(rng, 5)
    fn = lambda: level_adjust(x, w, b)  # noqa: E731
    return Target(_weighted(rng, fn, fn), [x, w, b], composite=True)


def _context_match(rng):
    v, q = _leaf(rng, 5, 4), _leaf(rng, 3, 4, 4)
    mask = np.ones((3, 1, 4), dtype=bool)
    mask[1, :, 3:] = False
    fn = lambda: context_match(v, q, mask)  # noqa: E731
    return Target(_weighted(rng, fn, fn), [v, q], composite=True)


def _fuse(rng):
    v, gq, ga = _leaf(rng, 4, 3), _leaf(rng, 4, 3), _leaf(rng, 4, 3)
    fn = lambda: fuse(v, gq, ga)  # noqa: E731
    return Target(_weighted(rng, fn, fn), [v, gq, ga], composite=True)


def _score_visual(rng):
    m, w, b = _leaf(rng, 3, 6, 10), _leaf(rng, 10, 1), _leaf(rng, 1)
    fn = lambda: score_visual(m, w, b)  # noqa: E731
    return Target(_weighted(rng, fn, fn), [m, w, b], composite=True)


def _score_textual(rng):
    m = _leaf(rng, 3, 5, 4)
    p = init_bilstm(rng, 4, 2, "fl")
    w, b = _leaf(rng, 4, 1), _leaf(rng, 1)
    fn = lambda: score_textual(m, p, "fl", w, b)  # noqa: E731
    return Target(_weighted(rng, fn, fn), [m, w, b, *p.values()], composite=True)


def _lsep_loss(rng):
    p = _leaf(rng, 5, scale=2.0)
    return Target(lambda: lsep_loss(p, [1, 3]), [p], composite=True)


def _toy_record(rng, vocab: int, with_clip: bool = False) -> QARecord:
    tok = lambda n: tuple(int(t) for t in rng.integers(2, vocab, size=n))  # noqa: E731
    rec = QARecord(id="g", question=tok(3), answers=(tok(2), tok(2), tok(3)), correct=1, subtitle=tok(5))
    if with_clip:
        rec._clip = VideoClip(rng.uniform(size=(3, 6, 6, 3)), rng.uniform(-1, 1, size=(2, 6, 6, 2)))
    return rec


def _generic_point(rng, params) -> list:
    # zero-initialised biases can sit exactly on a ReLU kink; move off it
    for t in params.values():
        if not t.data.any():
            t.data = rng.uniform(-0.5, 0.5, size=t.shape)
    return list(params.values())


def _text_channel(rng):
    model = TextChannel.create(rng, vocab_size=10, embed_dim=3, hidden_dim=2, fusion_dim=2)
    rec = _toy_record(rng, 10)
    params = _generic_point(rng, model.params)
    return Target(lambda: lsep_loss(model.forward(rec), rec.correct), params, composite=True)


def _visual_channel(stream: str):
    def build(rng):
        cfg = _tiny_stream(3 if stream == "rgb" else 2)
        model = VisualChannel.create(rng, stream, cfg, vocab_size=10, embed_dim=3, hidden_dim=2)
        rec = _toy_record(rng, 10, with_clip=True)
        params = _generic_point(rng, model.params)
        return Target(lambda: lsep_loss(model.forward(rec), rec.correct), params, composite=True)
    return build


TARGETS = {
    "conv3d": _conv3d,
    "max_pool3d": _max_pool3d,
    "inception": _inception,
    "se_block": _se_block,
    "stream": _stream,
    "lstm": _lstm,
    "bilstm": _bilstm,
    "embedding": _embedding,
    "level_adjust": _level_adjust,
    "context_match": _context_match,
    "fuse": _fuse,
    "score_visual": _score_visual,
    "score_textual": _score_textual,
    "lsep_loss": _lsep_loss,
    "text_channel": _text_channel,
    "rgb_channel": _visual_channel("rgb"),
    "flow_channel": _visual_channel("flow"),
}


def build_target(name: str, seed: int = 0) -> Target:
    try:
        builder = TARGETS[name]
    except KeyError:
        raise ConfigError(f"unknown gradcheck target {name!r}; choose from {sorted(TARGETS)}") from None
    return builder(np.random.default_rng(seed))
