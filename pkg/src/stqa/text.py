"""Token vocabulary, embedding lookup and bidirectional LSTM encoder."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .autodiff import Tensor, ops
from .autodiff.tensor import as_tensor, record
from .errors import ContractError, DimensionError, ValidationError
from . import params as P

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"

_TOKEN_RE = re.compile(r"[a-z0-9']+")


def tokenize(text: str) -> list[str]:
    """Lowercase, then split on whitespace and punctuation."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    """Dense token <-> id map; id 0 is padding and id 1 the unknown token."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = [PAD_TOKEN, UNK_TOKEN]
        self.stoi: dict[str, int] = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def encode(self, text: str) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokenize(text)]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.itos), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if lines[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ValidationError(f"{path}: vocab must start with {PAD_TOKEN} and {UNK_TOKEN}")
        v = cls()
        for tok in lines[2:]:
            if tok in v.stoi:
                raise ValidationError(f"{path}: duplicate token {tok!r}")
            v.add(tok)
        return v


def init_embedding(rng: np.random.Generator, vocab_size: int, dim: int, name: str = "embed.table") -> Tensor:
    table = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(vocab_size, dim))
    table[PAD] = 0.0
    return Tensor(table, requires_grad=True, name=name)


def load_pretrained(table: Tensor, vocab: Vocab, path) -> int:
    """Overwrite embedding rows from a ``token v1 v2 ... vd`` text file.

    Returns the number of rows replaced.
    """
    d = table.shape[1]
    hits = 0
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != d + 1:
            raise ValidationError(f"{path}:{lineno}: expected token plus {d} floats")
        idx = vocab.stoi.get(parts[0])
        if idx is None or idx == PAD:
            continue
        table.data[idx] = np.array(parts[1:], dtype=np.float64)
        hits += 1
    return hits


def embed(ids: Sequence[int], table) -> Tensor:
    """Row gather; the padding row never receives gradient."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ContractError("token sequence must be a non-empty 1-D id list")
    if ids.max() >= table.shape[0] or ids.min() < 0:
        raise ContractError(f"token id out of vocabulary range [0, {table.shape[0]})")
    return ops.take_rows(table, ids, frozen_rows=(PAD,))


# --------------------------------------------------------------------------
# LSTM


def _sig(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def lstm(x, w_x, w_h, b, reverse: bool = False) -> Tensor:
    """Unidirectional LSTM over axis -2 of ``x`` (``[..., n, d]``).

    Gate layout in the ``4h`` axis is input, forget, candidate, output.  The
    whole sequence is one recorded op with a hand-written BPTT adjoint.
    """
    x, w_x, w_h, b = (as_tensor(t) for t in (x, w_x, w_h, b))
    if x.ndim < 2:
        raise DimensionError(f"lstm input must be [..., n, d], got {x.shape}")
    n, d = x.shape[-2], x.shape[-1]
    h = w_h.shape[0]
    if n < 1:
        raise ContractError("lstm needs at least one step")
    if w_x.shape != (d, 4 * h) or w_h.shape != (h, 4 * h) or b.shape != (4 * h,):
        raise DimensionError(f"lstm weights {w_x.shape}, {w_h.shape}, {b.shape} do not fit d={d}, h={h}")
    batch = x.shape[:-2]
    xw = x.data @ w_x.data + b.data
    steps = range(n - 1, -1, -1) if reverse else range(n)

    out = np.zeros(batch + (n, h))
    cache = {}
    h_prev = np.zeros(batch + (h,))
    c_prev = np.zeros(batch + (h,))
    for t in steps:
        z = xw[..., t, :] + h_prev @ w_h.data
        i = _sig(z[..., :h])
        f = _sig(z[..., h:2 * h])
        g = np.tanh(z[..., 2 * h:3 * h])
        o = _sig(z[..., 3 * h:])
        c = f * c_prev + i * g
        tc = np.tanh(c)
        hn = o * tc
        cache[t] = (i, f, g, o, c_prev, tc, h_prev)
        out[..., t, :] = hn
        h_prev, c_prev = hn, c

    def bw(G):
        dxw = np.zeros_like(xw)
        dwh = np.zeros_like(w_h.data)
        dh_next = np.zeros(batch + (h,))
        dc_next = np.zeros(batch + (h,))
        for t in reversed(list(steps)):
            i, f, g, o, cp, tc, hp = cache[t]
            dh = G[..., t, :] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = np.concatenate([dc * g * i * (1.0 - i),
                                 dc * cp * f * (1.0 - f),
                                 dc * i * (1.0 - g * g),
                                 do * o * (1.0 - o)], axis=-1)
            dxw[..., t, :] = dz
            dwh += hp.reshape(-1, h).T @ dz.reshape(-1, 4 * h)
            dh_next = dz @ w_h.data.T
            dc_next = dc * f
        flat = dxw.reshape(-1, 4 * h)
        dx = dxw @ w_x.data.T
        dwx = x.data.reshape(-1, d).T @ flat
        return dx, dwx, dwh, flat.sum(axis=0)

    return record(out, (x, w_x, w_h, b), bw)


def init_bilstm(rng: np.random.Generator, d_in: int, hidden: int, prefix: str) -> P.Params:
    p: P.Params = {}
    for direction in ("fw", "bw"):
        base = f"{prefix}.{direction}"
        p[f"{base}.wx"] = P.uniform(rng, (d_in, 4 * hidden), hidden, f"{base}.wx")
        p[f"{base}.wh"] = P.uniform(rng, (hidden, 4 * hidden), hidden, f"{base}.wh")
        p[f"{base}.b"] = P.zeros((4 * hidden,), f"{base}.b")
    return p


def bilstm(x, p, prefix: str) -> Tensor:
    """``[..., n, d]`` -> ``[..., n, 2h]``: forward and backward passes concatenated."""
    fw = lstm(x, p[f"{prefix}.fw.wx"], p[f"{prefix}.fw.wh"], p[f"{prefix}.fw.b"])
    bw = lstm(x, p[f"{prefix}.bw.wx"], p[f"{prefix}.bw.wh"], p[f"{prefix}.bw.b"], reverse=True)
    return ops.concat([fw, bw], axis=-1)


# --------------------------------------------------------------------------
# query packs


@dataclass(frozen=True)
class QueryPack:
    question: tuple
    answers: tuple
    correct: int

    def __post_init__(self):
        object.__setattr__(self, "question", tuple(int(i) for i in self.question))
        object.__setattr__(self, "answers", tuple(tuple(int(i) for i in a) for a in self.answers))
        if not self.question or any(len(a) == 0 for a in self.answers):
            raise ContractError("question and answers must be non-empty token sequences")
        if not 0 <= self.correct < len(self.answers):
            raise ContractError(f"correct index {self.correct} outside [0, {len(self.answers)})")

    @property
    def k(self) -> int:
        return len(self.answers)


def encode_query(pack: QueryPack, table, p, prefix: str):
    """Encode the question and each answer with one shared bilstm."""
    h_q = bilstm(embed(pack.question, table), p, prefix)
    h_a = [bilstm(embed(a, table), p, prefix) for a in pack.answers]
    return h_q, h_a


def pad_candidates(features: Sequence[Tensor]):
    """Stack ``[len_i, w]`` tensors into ``[K, L, w]`` plus a ``[K, 1, L]`` mask."""
    length = max(f.shape[0] for f in features)
    mask = np.zeros((len(features), 1, length), dtype=bool)
    for k, f in enumerate(features):
        mask[k, 0, :f.shape[0]] = True
    stacked = ops.stack([ops.pad_rows(f, length) for f in features], axis=0)
    return stacked, mask
