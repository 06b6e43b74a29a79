"""scikit-learn style front end over the trainer and the rankers."""

from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .evaluation import run_ape
from .kb import ClassPath, KbSubset, PathSet, TrainingTuple, build_dataset
from .model import ModelConfig, rank_attributes_for_entity, rank_attributes_for_path
from .trainer import TrainConfig, train

_MODEL_KEYS = tuple(f.name for f in fields(ModelConfig))
_TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name != "seed")


def _as_path(x):
    if isinstance(x, ClassPath):
        return x
    if isinstance(x, str):
        return ClassPath.parse(x)
    return ClassPath(tuple(x))


class TransAtt(TransformerMixin, BaseEstimator):
    """Attribute predictor over class-paths with selective attention.

    ``fit`` takes a :class:`KbSubset` (tuples are built with
    ``min_attr_support``) or a ready list of :class:`TrainingTuple`.
    ``predict`` ranks attributes for class-paths (no attention) or for
    :class:`PathSet` entities (attention over their paths); ``transform``
    encodes class-paths into path vectors.
    """

    def __init__(self, word_dim=100, path_dim=100, attr_dim=100, margin=1.0, norm="L2",
                 renormalize_attrs=True, peepholes=False, shared_attention_neg=False,
                 trainable_embeddings=True, epochs=200, batch_size=64, adadelta_rho=0.95,
                 adadelta_eps=1e-6, negatives_per_positive=1, shuffle=True,
                 early_stop_patience=10, validation_fraction=0.1, allow_gold_negatives=False,
                 grad_shards=1, workers=1, min_attr_support=20, top_k=10,
                 common_attr_filter=(), embeddings=None, seed=0):
        self.word_dim = word_dim
        self.path_dim = path_dim
        self.attr_dim = attr_dim
        self.margin = margin
        self.norm = norm
        self.renormalize_attrs = renormalize_attrs
        self.peepholes = peepholes
        self.shared_attention_neg = shared_attention_neg
        self.trainable_embeddings = trainable_embeddings
        self.epochs = epochs
        self.batch_size = batch_size
        self.adadelta_rho = adadelta_rho
        self.adadelta_eps = adadelta_eps
        self.negatives_per_positive = negatives_per_positive
        self.shuffle = shuffle
        self.early_stop_patience = early_stop_patience
        self.validation_fraction = validation_fraction
        self.allow_gold_negatives = allow_gold_negatives
        self.grad_shards = grad_shards
        self.workers = workers
        self.min_attr_support = min_attr_support
        self.top_k = top_k
        self.common_attr_filter = common_attr_filter
        self.embeddings = embeddings
        self.seed = seed

    def _configs(self):
        mc = ModelConfig(**{k: getattr(self, k) for k in _MODEL_KEYS})
        tc = TrainConfig(seed=self.seed, **{k: getattr(self, k) for k in _TRAIN_KEYS})
        return mc.validate(), tc.validate()

    def fit(self, X, y=None, callback=None):
        """Train on a KB or on training tuples; ``y`` is ignored."""
        mc, tc = self._configs()
        if isinstance(X, KbSubset):
            dataset, _ = build_dataset(X, self.min_attr_support)
        else:
            dataset = list(X)
            if not dataset or not all(isinstance(t, TrainingTuple) for t in dataset):
                raise TypeError("fit expects a KbSubset or a non-empty list of TrainingTuple")
        self.model_, self.state_ = train(dataset, mc, tc, table=self.embeddings, callback=callback)
        self.attributes_ = list(self.model_.attributes)
        self.n_epochs_ = self.state_.epoch
        self.loss_history_ = list(self.state_.loss_history)
        return self

    @classmethod
    def from_model(cls, model):
        """Wrap an already trained (or loaded) model."""
        est = cls(**{k: getattr(model.config, k) for k in _MODEL_KEYS})
        est.model_ = model
        est.state_ = None
        est.attributes_ = list(model.attributes)
        est.n_epochs_ = model.metadata.get("epochs_run", 0)
        est.loss_history_ = list(model.metadata.get("loss_history", []))
        return est

    def transform(self, X):
        """Path vectors, one row per class-path in ``X``."""
        check_is_fitted(self, "model_")
        paths = [_as_path(x) for x in X]
        if not paths:
            return np.zeros((0, self.model_.encoder.path_dim))
        return self.model_.encode_many(paths)

    def rank(self, x, k=None):
        """Ranked ``(attribute, score)`` list for one path or path set."""
        check_is_fitted(self, "model_")
        k = self.top_k if k is None else k
        if isinstance(x, PathSet):
            ranked, _ = rank_attributes_for_entity(x, self.model_, k, self.common_attr_filter)
            return ranked
        return rank_attributes_for_path(_as_path(x), self.model_, k)

    def predict(self, X, k=None):
        """Top-``k`` attribute names per query."""
        return [[a for a, _ in self.rank(x, k)] for x in X]

    def score(self, X, y=None, k=1):
        """Hits@``k`` of entity attribute prediction over a KB."""
        check_is_fitted(self, "model_")
        if not isinstance(X, KbSubset):
            raise TypeError("score expects a KbSubset")
        return run_ape(self.model_, X, ks=(k,), common_attr_filter=self.common_attr_filter).overall[k]

