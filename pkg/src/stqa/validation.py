"""Input validation for the estimator API."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError


def check_records(X, n_candidates: Optional[int] = None, require_clip: bool = False) -> list:
    """Return ``X`` as a list of QA records after structural checks.

    Records are duck-typed: anything with ``question``, ``answers``,
    ``correct`` and ``subtitle`` attributes (and ``load_clip`` when
    ``require_clip``) is accepted.
    """
    if isinstance(X, (str, bytes)) or not hasattr(X, "__iter__"):
        raise TypeError(f"expected a sequence of QA records, got {type(X).__name__}")
    records = list(X)
    for i, r in enumerate(records):
        for attr in ("question", "answers", "correct", "subtitle"):
            if not hasattr(r, attr):
                raise TypeError(f"element {i} is not a QA record (missing {attr!r})")
        if require_clip and not hasattr(r, "load_clip"):
            raise TypeError(f"element {i} has no video clip")
        if n_candidates is not None and len(r.answers) != n_candidates:
            raise ConfigError(
                f"record {getattr(r, 'id', i)} has {len(r.answers)} candidates, model expects {n_candidates}")
    return records


def check_labels(y, records: Sequence, n_candidates: int) -> np.ndarray:
    """Correct-answer indices; ``None`` means read them from the records."""
    if y is None:
        y = [r.correct for r in records]
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != len(records):
        raise ContractError(f"y must have one label per record ({len(records)}), got shape {y.shape}")
    if y.size and (not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() >= n_candidates):
        raise ContractError(f"labels must be integers in [0, {n_candidates})")
    return y.astype(np.int64)


def infer_vocab_size(records: Sequence) -> int:
    top = 0
    for r in records:
        top = max(top, max(r.question), max(max(a) for a in r.answers), max(r.subtitle, default=0))
    return int(top) + 1
