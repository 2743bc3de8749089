"""scikit-learn style classifiers over QA records.

``X`` is a sequence of QA records (see :class:`stqa.data.QARecord`) and ``y``
the index of the correct candidate for each.  Every channel classifier
exposes ``fit``, ``decision_function`` (raw scores), ``predict_proba``
(softmax over candidates), ``predict`` and ``score``.
"""

from __future__ import annotations

import logging
import math
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_is_fitted

from .autodiff import GradientTape, ops
from .channels import STREAM_TAGS, TextChannel, VisualChannel
from .errors import ConfigError, ContractError, TrainingDiverged
from .io import Checkpoint
from .optim import EarlyStopping, OptimizerConfig, clip_grad_norm, step
from .scoring import CHANNELS, ChannelScores, EnsembleScores, ensemble, lsep_loss, predict, softmax_np
from .validation import check_labels, check_records, infer_vocab_size
from .video import RELU_GAIN, InceptionSpec, StreamConfig
from . import params as P

logger = logging.getLogger(__name__)


def _listify(v):
    return [_listify(x) for x in v] if isinstance(v, (tuple, list)) else v


class _ChannelClassifier(ClassifierMixin, BaseEstimator):
    _require_clip = False

    # -- subclass hooks -------------------------------------------------
    def _create_model(self, rng, vocab_size: int):
        raise NotImplementedError

    def _optimizers(self) -> dict:
        raise NotImplementedError

    # -- fitting ----------------------------------------------------------
    def _prepare(self, X, y):
        records = check_records(X, self.n_candidates, self._require_clip)
        if not records:
            raise ContractError("cannot fit on an empty dataset")
        return records, check_labels(y, records, self.n_candidates)

    def _init_model(self, records):
        vocab_size = self.vocab_size or infer_vocab_size(records)
        rng = np.random.default_rng(self.random_state)
        self.model_ = self._create_model(rng, vocab_size)
        self.vocab_size_ = vocab_size
        self.classes_ = np.arange(self.n_candidates)
        return rng

    def fit(self, X, y=None, eval_set=None):
        """Train with LSEP on raw scores.

        ``eval_set=(X_val, y_val)`` enables early stopping on validation
        accuracy; the parameters of the best epoch are kept.
        """
        records, labels = self._prepare(X, y)
        val = None
        if eval_set is not None:
            xv, yv = eval_set
            xv = check_records(xv, self.n_candidates, self._require_clip)
            val = (xv, check_labels(yv, xv, self.n_candidates))
        rng = self._init_model(records)
        params = self.model_.params
        groups = self._optimizers()
        self.optimizer_state_ = {name: {} for name in groups}
        stopper = EarlyStopping(self.patience) if val is not None else None
        best = P.snapshot(params)
        self.history_ = []

        for epoch in range(self.max_epochs):
            lrs = {name: cfg.lr(epoch) for name, (_, cfg) in groups.items()}
            order = rng.permutation(len(records))
            total = 0.0
            for start in range(0, len(order), self.batch_size):
                batch = order[start:start + self.batch_size]
                try:
                    value = self._train_step([records[i] for i in batch], labels[batch], groups, lrs)
                except TrainingDiverged as exc:
                    raise TrainingDiverged(f"{exc} at epoch {epoch}",
                                           checkpoint=self._checkpoint_from(best)) from None
                total += value * len(batch)

            row = {"epoch": epoch, "train_loss": total / len(records)}
            row.update({f"lr_{name}" if name != "head" else "lr": v for name, v in lrs.items()})
            if val is not None:
                row["val_acc"] = self.score(*val)
                if stopper.update(epoch, row["val_acc"]):
                    best = P.snapshot(params)
            else:
                best = P.snapshot(params)
            self.history_.append(row)
            if self.verbose:
                logger.info("epoch %d loss %.6f val %s", epoch, row["train_loss"], row.get("val_acc"))
            if stopper is not None and stopper.should_stop:
                break

        P.restore(params, best)
        self.n_epochs_ = len(self.history_)
        self.best_epoch_ = stopper.best_epoch if stopper is not None else self.n_epochs_ - 1
        return self

    def _train_step(self, records, labels, groups, lrs) -> float:
        """One optimizer step on the mean LSEP loss of a batch; returns that loss."""
        params = self.model_.params
        with GradientTape() as tape:
            losses = [lsep_loss(self.model_.forward(r), c) for r, c in zip(records, labels)]
            loss = ops.div(ops.sum(ops.stack(losses)), float(len(records)))
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged("non-finite loss")
        tape.backward(loss, list(params.values()))
        if self.clip_norm:
            clip_grad_norm(params, self.clip_norm)
        for name, (group, cfg) in groups.items():
            step(group, None, self.optimizer_state_[name], cfg, lrs[name])
        return value

    def partial_fit(self, X, y=None):
        """One optimizer step on ``X`` as a single batch at the epoch-0 learning rate.

        Initialises the model on first call.  Returns the batch loss before
        the step.
        """
        records, labels = self._prepare(X, y)
        if not hasattr(self, "model_"):
            self._init_model(records)
            self.optimizer_state_ = {name: {} for name in self._optimizers()}
        groups = self._optimizers()
        return self._train_step(records, labels, groups, {n: cfg.lr(0) for n, (_, cfg) in groups.items()})

    # -- inference --------------------------------------------------------
    def decision_function(self, X) -> np.ndarray:
        """Raw candidate scores ``[n, K]``."""
        check_is_fitted(self, "model_")
        records = check_records(X, self.n_candidates, self._require_clip)
        out = np.zeros((len(records), self.n_candidates))
        for i, r in enumerate(records):
            out[i] = self.model_.forward(r).data
        return out

    def predict_proba(self, X) -> np.ndarray:
        return softmax_np(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return predict(self.decision_function(X))

    def channel_scores(self, X) -> ChannelScores:
        return ChannelScores(self.channel, self.decision_function(X))

    def loss(self, X, y=None) -> float:
        """Mean LSEP loss over ``X`` at the current parameters."""
        check_is_fitted(self, "model_")
        records, labels = self._prepare(X, y)
        return float(np.mean([lsep_loss(self.model_.forward(r), c).item() for r, c in zip(records, labels)]))

    # -- persistence ------------------------------------------------------
    def _config_echo(self) -> dict:
        params = {k: _listify(v) for k, v in self.get_params().items()}
        params["vocab_size"] = getattr(self, "vocab_size_", self.vocab_size)
        return {"estimator": type(self).__name__, "params": params}

    def _init_model_for_restore(self, vocab_size: int) -> None:
        self.model_ = self._create_model(np.random.default_rng(self.random_state), vocab_size)
        self.vocab_size_ = vocab_size
        self.classes_ = np.arange(self.n_candidates)

    def _checkpoint_from(self, arrays) -> Checkpoint:
        return Checkpoint(channel=self.channel, params={k: np.array(v) for k, v in arrays.items()},
                          config=self._config_echo(), seed=int(self.random_state))

    def to_checkpoint(self) -> Checkpoint:
        check_is_fitted(self, "model_")
        return self._checkpoint_from(P.snapshot(self.model_.params))


class TextQAClassifier(_ChannelClassifier):
    """Subtitle + query channel trained with Adam."""

    channel = "text"

    def __init__(self, vocab_size=None, embed_dim=50, hidden_dim=None, fusion_dim=None,
                 n_candidates=5, learning_rate=3e-4, beta1=0.9, beta2=0.999, adam_eps=1e-8,
                 decay_rate=0.9, decay_every=5, max_epochs=100, patience=3, batch_size=8,
                 clip_norm=5.0, embedding_init=None, random_state=0, verbose=0):
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.fusion_dim = fusion_dim
        self.n_candidates = n_candidates
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.adam_eps = adam_eps
        self.decay_rate = decay_rate
        self.decay_every = decay_every
        self.max_epochs = max_epochs
        self.patience = patience
        self.batch_size = batch_size
        self.clip_norm = clip_norm
        self.embedding_init = embedding_init
        self.random_state = random_state
        self.verbose = verbose

    def _create_model(self, rng, vocab_size):
        hidden = self.hidden_dim or self.embed_dim
        model = TextChannel.create(rng, vocab_size, self.embed_dim, hidden, self.fusion_dim or hidden)
        if self.embedding_init is not None:
            init = np.asarray(self.embedding_init, dtype=np.float64)
            if init.shape != model.params["embed.table"].shape:
                raise ConfigError(f"embedding_init shape {init.shape} != table "
                                  f"{model.params['embed.table'].shape}")
            model.params["embed.table"].data = init.copy()
        return model

    def _optimizers(self):
        cfg = OptimizerConfig("adam", self.learning_rate, self.beta1, self.beta2, self.adam_eps,
                              decay_rate=self.decay_rate, decay_every=self.decay_every)
        return {"head": (self.model_.params, cfg)}

    def _config_echo(self):
        echo = super()._config_echo()
        echo["params"]["embedding_init"] = None
        return echo


class VisualQAClassifier(_ChannelClassifier):
    """One video stream (``rgb`` or ``flow``) plus query, with two optimizers.

    The extractor is trained by momentum SGD (``extractor_lr``); level
    adjustment, query encoder and scorer by Adam (``learning_rate``).
    """

    _require_clip = True

    def __init__(self, stream="rgb", vocab_size=None, embed_dim=50, hidden_dim=None, feature_dim=64,
                 stem_channels=8, stem_kernel=(3, 3, 3), stem_stride=(1, 2, 2),
                 inception=((4, 4, 8, 2, 2, 2), (4, 4, 8, 2, 2, 2)), se_ratio=4, use_se=True,
                 conv_gain=RELU_GAIN, n_candidates=5, leaky_slope=0.01, learning_rate=3e-4, beta1=0.9, beta2=0.999,
                 adam_eps=0.1, extractor_lr=0.02, extractor_momentum=0.9, decay_rate=0.9,
                 decay_every=5, max_epochs=40, patience=3, batch_size=8, clip_norm=5.0,
                 random_state=0, verbose=0):
        self.stream = stream
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.feature_dim = feature_dim
        self.stem_channels = stem_channels
        self.stem_kernel = stem_kernel
        self.stem_stride = stem_stride
        self.inception = inception
        self.se_ratio = se_ratio
        self.use_se = use_se
        self.conv_gain = conv_gain
        self.n_candidates = n_candidates
        self.leaky_slope = leaky_slope
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.adam_eps = adam_eps
        self.extractor_lr = extractor_lr
        self.extractor_momentum = extractor_momentum
        self.decay_rate = decay_rate
        self.decay_every = decay_every
        self.max_epochs = max_epochs
        self.patience = patience
        self.batch_size = batch_size
        self.clip_norm = clip_norm
        self.random_state = random_state
        self.verbose = verbose

    @property
    def channel(self) -> str:
        if self.stream not in STREAM_TAGS:
            raise ConfigError(f"stream must be 'rgb' or 'flow', got {self.stream!r}")
        return STREAM_TAGS[self.stream]

    def stream_config(self, spatial_size: int = 32) -> StreamConfig:
        return StreamConfig(
            in_channels=3 if self.stream == "rgb" else 2,
            spatial_size=spatial_size,
            stem_channels=self.stem_channels,
            stem_kernel=tuple(self.stem_kernel),
            stem_stride=tuple(self.stem_stride),
            inception=tuple(InceptionSpec(*s) for s in self.inception),
            se_ratio=self.se_ratio,
            use_se=self.use_se,
            feature_dim=self.feature_dim,
            conv_gain=self.conv_gain,
        )

    def _create_model(self, rng, vocab_size):
        self.channel  # validates stream
        hidden = self.hidden_dim or self.embed_dim
        return VisualChannel.create(rng, self.stream, self.stream_config(), vocab_size,
                                    self.embed_dim, hidden, self.leaky_slope)

    def _optimizers(self):
        groups = self.model_.param_groups()
        sgd = OptimizerConfig("sgd", self.extractor_lr, momentum=self.extractor_momentum,
                              decay_rate=self.decay_rate, decay_every=self.decay_every)
        adam = OptimizerConfig("adam", self.learning_rate, self.beta1, self.beta2, self.adam_eps,
                               decay_rate=self.decay_rate, decay_every=self.decay_every)
        return {"extractor": (groups["extractor"], sgd), "head": (groups["head"], adam)}


ESTIMATORS = {"TextQAClassifier": TextQAClassifier, "VisualQAClassifier": VisualQAClassifier}


def from_checkpoint(ckpt: Checkpoint):
    """Rebuild a fitted channel classifier from a checkpoint."""
    cls = ESTIMATORS.get(ckpt.config.get("estimator"))
    if cls is None:
        raise ConfigError(f"checkpoint names unknown estimator {ckpt.config.get('estimator')!r}")
    kwargs = dict(ckpt.config["params"])
    if "inception" in kwargs:
        kwargs["inception"] = tuple(tuple(s) for s in kwargs["inception"])
    for key in ("stem_kernel", "stem_stride"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    est = cls(**kwargs)
    if est.channel != ckpt.channel:
        raise ConfigError(f"checkpoint channel {ckpt.channel!r} does not match its estimator")
    est._init_model_for_restore(kwargs["vocab_size"])
    names = list(est.model_.params)
    if names != list(ckpt.params):
        raise ConfigError("checkpoint parameter table does not match the model layout")
    P.restore(est.model_.params, ckpt.params)
    return est


class QAEnsemble(ClassifierMixin, BaseEstimator):
    """Softmax-then-sum combination of independently trained channels."""

    def __init__(self, estimators: Sequence = ()):
        self.estimators = estimators

    def fit(self, X, y=None, eval_set=None):
        self.estimators_ = [clone(e).fit(X, y, eval_set=eval_set) for e in self.estimators]
        self.classes_ = self.estimators_[0].classes_
        return self

    @classmethod
    def from_fitted(cls, fitted: Sequence) -> "QAEnsemble":
        ens = cls(list(fitted))
        ens.estimators_ = list(fitted)
        if not ens.estimators_:
            raise ContractError("ensemble needs at least one channel")
        ks = {e.n_candidates for e in ens.estimators_}
        if len(ks) != 1:
            raise ConfigError(f"channels disagree on candidate count: {sorted(ks)}")
        ens.classes_ = ens.estimators_[0].classes_
        return ens

    def channel_scores(self, X) -> list:
        check_is_fitted(self, "estimators_")
        X = list(X)
        scores = [e.channel_scores(X) for e in self.estimators_]
        return sorted(scores, key=lambda c: CHANNELS.index(c.channel))

    def ensemble_scores(self, X) -> EnsembleScores:
        return ensemble(self.channel_scores(X))

    def predict_proba(self, X) -> np.ndarray:
        final = self.ensemble_scores(X).final
        return final / len(self.estimators_)

    def predict(self, X) -> np.ndarray:
        return predict(self.ensemble_scores(X))
