"""Channel networks: each maps one QA record to ``K`` raw candidate scores.

``TextChannel``: subtitles and query are encoded by separate bidirectional
LSTMs over a shared embedding table, matched, fused and re-encoded by a
second bidirectional LSTM before linear scoring and temporal max-pooling.

``VisualChannel``: one stream of the video extractor (RGB or flow) plus a
query encoder; both sides pass through their own level-adjusting layer
before matching, fusion and linear scoring with temporal max-pooling.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, ops
from .fusion import context_match, fuse_candidates, init_level_adjust, level_adjust
from .scoring import init_scorer, score_textual, score_visual
from .text import bilstm, embed, init_bilstm, init_embedding, pad_candidates
from .video import StreamConfig, init_stream, stream_forward
from . import params as P

STREAM_TAGS = {"rgb": "spt", "flow": "tpr"}


def encode_candidates(answers, table, p, prefix: str):
    """Encode K answers with one shared bilstm; returns ``[K, L, 2h]`` and mask.

    Equal-length answers are encoded as one batch.
    """
    lengths = {len(a) for a in answers}
    if len(lengths) == 1:
        ids = np.asarray(answers, dtype=np.int64)
        emb = ops.reshape(embed(ids.ravel(), table), ids.shape + (table.shape[1],))
        h = bilstm(emb, p, prefix)
        return h, np.ones((len(answers), 1, ids.shape[1]), dtype=bool)
    return pad_candidates([bilstm(embed(a, table), p, prefix) for a in answers])


class TextChannel:
    channel = "text"

    def __init__(self, params: P.Params, hidden_dim: int, fusion_dim: int):
        self.params = params
        self.hidden_dim = hidden_dim
        self.fusion_dim = fusion_dim

    @classmethod
    def create(cls, rng: np.random.Generator, vocab_size: int, embed_dim: int,
               hidden_dim: int, fusion_dim: int) -> "TextChannel":
        p: P.Params = {"embed.table": init_embedding(rng, vocab_size, embed_dim)}
        p.update(init_bilstm(rng, embed_dim, hidden_dim, "query_lstm"))
        p.update(init_bilstm(rng, embed_dim, hidden_dim, "context_lstm"))
        p.update(init_bilstm(rng, 10 * hidden_dim, fusion_dim, "fusion_lstm"))
        p.update(init_scorer(rng, 2 * fusion_dim, "score"))
        return cls(p, hidden_dim, fusion_dim)

    def param_groups(self) -> dict:
        return {"head": self.params}

    def fused(self, record) -> tuple:
        p = self.params
        table = p["embed.table"]
        h_ctx = bilstm(embed(record.subtitle, table), p, "context_lstm")
        h_q = bilstm(embed(record.question, table), p, "query_lstm")
        h_a, mask = encode_candidates(record.answers, table, p, "query_lstm")
        g_q = context_match(h_ctx, h_q)
        g_a = context_match(h_ctx, h_a, mask)
        return fuse_candidates(h_ctx, g_q, g_a)

    def forward(self, record) -> Tensor:
        p = self.params
        return score_textual(self.fused(record), p, "fusion_lstm", p["score.weight"], p["score.bias"])


class VisualChannel:
    def __init__(self, params: P.Params, stream: str, stream_cfg: StreamConfig, leaky_slope: float):
        self.params = params
        self.stream = stream
        self.stream_cfg = stream_cfg
        self.leaky_slope = leaky_slope

    @property
    def channel(self) -> str:
        return STREAM_TAGS[self.stream]

    @classmethod
    def create(cls, rng: np.random.Generator, stream: str, stream_cfg: StreamConfig, vocab_size: int,
               embed_dim: int, hidden_dim: int, leaky_slope: float = 0.01) -> "VisualChannel":
        d = stream_cfg.feature_dim
        p: P.Params = dict(init_stream(rng, stream_cfg, "extractor"))
        p["embed.table"] = init_embedding(rng, vocab_size, embed_dim)
        p.update(init_bilstm(rng, embed_dim, hidden_dim, "query_lstm"))
        p.update(init_level_adjust(rng, d, d, "adjust.video"))
        p.update(init_level_adjust(rng, 2 * hidden_dim, d, "adjust.text"))
        p.update(init_scorer(rng, 5 * d, "score"))
        return cls(p, stream, stream_cfg, leaky_slope)

    def param_groups(self) -> dict:
        return {
            "extractor": P.subset(self.params, "extractor."),
            "head": {k: v for k, v in self.params.items() if not k.startswith("extractor.")},
        }

    def frames(self, record) -> np.ndarray:
        clip = record.load_clip()
        return clip.rgb if self.stream == "rgb" else clip.flow

    def features(self, record) -> Tensor:
        return stream_forward(self.frames(record), self.params, self.stream_cfg, "extractor")

    def fused(self, record) -> Tensor:
        p, a = self.params, self.leaky_slope
        v = level_adjust(self.features(record), p["adjust.video.weight"], p["adjust.video.bias"], a)
        table = p["embed.table"]
        h_q = bilstm(embed(record.question, table), p, "query_lstm")
        h_a, mask = encode_candidates(record.answers, table, p, "query_lstm")
        q = level_adjust(h_q, p["adjust.text.weight"], p["adjust.text.bias"], a)
        ans = level_adjust(h_a, p["adjust.text.weight"], p["adjust.text.bias"], a)
        g_q = context_match(v, q)
        g_a = context_match(v, ans, mask)
        return fuse_candidates(v, g_q, g_a)

    def forward(self, record) -> Tensor:
        p = self.params
        return score_visual(self.fused(record), p["score.weight"], p["score.bias"])
