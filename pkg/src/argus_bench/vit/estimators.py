"""Sklearn-style wrappers around pretraining and connector training."""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..exceptions import ValidationError
from . import model
from .params import ENCODER_PATTERNS, EncoderConfig, init_params
from .text import HashingTextEmbedder
from .train import evaluate_loss, pretrain_plan, schedule_plan, train


def _config_for(volumes, patch_dims, **kwargs):
    dims = volumes[0].dims
    if any(v.dims != dims for v in volumes):
        raise ValidationError("all volumes must share the same dims")
    if any(d % p for d, p in zip(dims, patch_dims)):
        raise ValidationError(f"volume dims {dims} are not divisible by patch dims {tuple(patch_dims)}")
    grid = tuple(d // p for d, p in zip(dims, patch_dims))
    return EncoderConfig(patch_dims=tuple(patch_dims), grid_dims=grid, **kwargs)


def _text_targets(texts, dim, seed):
    if texts is None:
        return None
    texts = list(texts)
    if texts and isinstance(texts[0], str):
        return HashingTextEmbedder(dim, seed).transform(texts)
    return np.asarray(texts, dtype=np.float64)


class VisionPretrainer(BaseEstimator, TransformerMixin):
    """Pretrain the encoder with ``mae``, ``flip`` or ``mae_then_flip``.

    ``fit(volumes, texts)`` takes report strings (hashed into ``d_joint``
    dimensions) or precomputed embeddings; MAE ignores them. ``transform``
    returns mean-pooled encoder features, one row per volume.
    """

    def __init__(self, method="mae", patch_dims=(4, 4, 4), d_model=24, n_layers=2, n_heads=2, d_joint=8,
                 lr=1e-3, steps=200, batch_size=8, mask_ratio=0.5, tau=model.DEFAULT_TAU, seed=0):
        self.method = method
        self.patch_dims = patch_dims
        self.d_model = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d_joint = d_joint
        self.lr = lr
        self.steps = steps
        self.batch_size = batch_size
        self.mask_ratio = mask_ratio
        self.tau = tau
        self.seed = seed

    def fit(self, X, y=None):
        volumes = list(X)
        cfg = _config_for(volumes, self.patch_dims, d_model=self.d_model, n_layers=self.n_layers,
                          n_heads=self.n_heads, d_joint=self.d_joint)
        self.text_embeddings_ = _text_targets(y, cfg.d_joint, self.seed)
        plan = pretrain_plan(self.method, lr=self.lr, steps=self.steps, batch_size=self.batch_size,
                             seed=self.seed, mask_ratio=self.mask_ratio, tau=self.tau)
        self.params_ = init_params(cfg, self.seed)
        self.history_ = train(plan, volumes, self.params_, self.text_embeddings_).history
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        return np.array([model.encode(v, self.params_).mean(axis=0) for v in X])

    def score(self, X, y=None):
        """Negative fixed-mask MAE loss (higher is better)."""
        check_is_fitted(self, "params_")
        return -evaluate_loss("mae", self.params_, list(X), mask_ratio=self.mask_ratio, seed=self.seed)


class ReportAligner(BaseEstimator):
    """Train compression, connector and language head to map volumes onto report embeddings.

    ``encoder_params`` seeds the encoder (for example a fitted
    :class:`VisionPretrainer`'s ``params_``); heads are always freshly initialised.
    """

    def __init__(self, schedule="2stage-unfrozen", compression="pixel_shuffle", connector_depth=2,
                 encoder_params=None, patch_dims=(4, 4, 4), d_model=24, n_layers=2, n_heads=2, d_joint=8,
                 d_llm=16, stage1_lr=1e-3, stage2_lr=1e-4, steps=50, batch_size=8, seed=0):
        self.schedule = schedule
        self.compression = compression
        self.connector_depth = connector_depth
        self.encoder_params = encoder_params
        self.patch_dims = patch_dims
        self.d_model = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d_joint = d_joint
        self.d_llm = d_llm
        self.stage1_lr = stage1_lr
        self.stage2_lr = stage2_lr
        self.steps = steps
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, X, y):
        volumes = list(X)
        cfg = _config_for(volumes, self.patch_dims, d_model=self.d_model, n_layers=self.n_layers,
                          n_heads=self.n_heads, d_joint=self.d_joint, d_llm=self.d_llm,
                          compression=self.compression, connector_depth=self.connector_depth)
        self.params_ = init_params(cfg, self.seed)
        if self.encoder_params is not None:
            carry_encoder(self.encoder_params, self.params_)
        self.text_embeddings_ = _text_targets(y, cfg.d_joint, self.seed)
        plan = schedule_plan(self.schedule, self.compression, self.stage1_lr, self.stage2_lr, steps=self.steps,
                             batch_size=self.batch_size, seed=self.seed)
        self.history_ = train(plan, volumes, self.params_, self.text_embeddings_).history
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        return model.predict_text_embedding(list(X), self.params_)


def carry_encoder(source, target):
    """Copy encoder tensors from ``source`` into ``target`` (shapes must agree)."""
    names = target.resolve(ENCODER_PATTERNS)
    for name in names:
        if name not in source.tensors or source[name].shape != target[name].shape:
            raise ValidationError(f"cannot carry encoder tensor {name}: missing or shape mismatch")
        target.tensors[name] = source[name].astype(target.dtype).copy()
    target.bump()
    return names
