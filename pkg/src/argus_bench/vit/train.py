"""Staged AdamW training with linear warm-up and decay, plus the canned stage plans."""
import math
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import TrainingError, ValidationError
from . import model
from .params import CONNECTOR_PATTERNS, ENCODER_PATTERNS, FLIP_PATTERNS, LM_HEAD_PATTERNS, MAE_PATTERNS, \
    RESAMPLER_PATTERNS

OBJECTIVES = ("mae", "flip", "align")
PRETRAIN_METHODS = ("mae", "flip", "mae_then_flip")
SCHEDULES = ("1stage", "2stage-frozen", "2stage-unfrozen")
_SCHEDULE_ALIASES = {"2stage": "2stage-unfrozen"}

STAGE1_LR = 1e-4
STAGE2_LR = 1e-6


@dataclass(frozen=True)
class Stage:
    name: str
    objective: str
    trainable: tuple
    lr: float
    epochs: int = 1
    steps: int = None

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValidationError(f"stage {self.name}: unknown objective {self.objective!r}; valid: {list(OBJECTIVES)}")
        if not self.lr > 0:
            raise ValidationError(f"stage {self.name}: learning rate must be positive, got {self.lr}")
        if self.steps is None and self.epochs < 1:
            raise ValidationError(f"stage {self.name}: epochs must be >= 1")
        if self.steps is not None and self.steps < 1:
            raise ValidationError(f"stage {self.name}: steps must be >= 1")
        object.__setattr__(self, "trainable", tuple(self.trainable))


@dataclass(frozen=True)
class TrainPlan:
    stages: tuple
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    warmup_ratio: float = 0.05
    batch_size: int = 16
    seed: int = 0
    mask_ratio: float = 0.5
    tau: float = model.DEFAULT_TAU

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise ValidationError("a plan needs at least one stage")
        if self.batch_size < 1:
            raise ValidationError("batch size must be >= 1")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ValidationError("warm-up ratio must lie in [0, 1)")

    def with_overrides(self, **changes):
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return TrainPlan(**fields)


@dataclass
class TrainResult:
    params: object
    history: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)


def lr_at(step, total, base_lr, warmup_ratio=0.05):
    """Linear warm-up from 0 over ``ceil(warmup_ratio * total)`` steps, then linear decay to 0 at ``total``."""
    warm = math.ceil(warmup_ratio * total)
    if warm and step < warm:
        return base_lr * step / warm
    if total <= warm:
        return base_lr
    return base_lr * max(0.0, (total - step) / (total - warm))


class AdamW:
    """Decoupled weight decay Adam over a subset of named tensors."""

    def __init__(self, names, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.names = list(names)
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads, lr):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name in self.names:
            g = grads.get(name)
            if g is None:
                continue
            p = params.tensors[name]
            m = self.m[name] = self.b1 * self.m.get(name, 0.0) + (1.0 - self.b1) * g
            v = self.v[name] = self.b2 * self.v.get(name, 0.0) + (1.0 - self.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                p -= (lr * self.weight_decay) * p
            p -= (lr * update).astype(p.dtype)
        params.bump()


def _stage_steps(stage, n_items, batch_size):
    if stage.steps is not None:
        return stage.steps
    return stage.epochs * math.ceil(n_items / batch_size)


def _batches(n_items, batch_size, n_steps, seed, stage_index):
    """Yield ``n_steps`` index batches; reshuffled per epoch, deterministic in seed."""
    per_epoch = math.ceil(n_items / batch_size)
    order = None
    for step in range(n_steps):
        epoch, pos = divmod(step, per_epoch)
        if pos == 0:
            order = np.random.default_rng([seed, stage_index, epoch]).permutation(n_items)
        yield order[pos * batch_size:(pos + 1) * batch_size]


def _trace_for(stage, plan, params, volumes, texts, idx, seeds):
    vols = [volumes[i] for i in idx]
    if stage.objective == "mae":
        return model.trace_mae(vols, params, plan.mask_ratio, seeds)
    if texts is None:
        raise ValidationError(f"stage {stage.name} ({stage.objective}) needs text embeddings")
    txt = np.asarray(texts)[idx]
    if stage.objective == "flip":
        if len(idx) < 2:
            raise ValidationError("FLIP stages need batches of at least 2")
        return model.trace_flip(vols, txt, params, plan.mask_ratio, plan.tau, seeds)
    return model.trace_align(vols, txt, params)


def train(plan, volumes, params, texts=None, on_stage_end=None):
    """Run every stage of ``plan`` and return a :class:`TrainResult`.

    ``params`` is updated in place. Only the tensors a stage lists are trainable
    during it; everything else stays bitwise fixed. ``history`` rows are
    ``(step, stage, lr, loss)`` with ``step`` counted across stages.
    ``on_stage_end(stage, params)`` runs after each stage.
    """
    volumes = list(volumes)
    if not volumes:
        raise ValidationError("training set is empty")
    result = TrainResult(params)
    global_step = 0
    for si, stage in enumerate(plan.stages):
        names = params.resolve(stage.trainable)
        params.set_trainable(names)
        opt = AdamW(names, plan.betas, plan.eps, plan.weight_decay)
        total = _stage_steps(stage, len(volumes), plan.batch_size)
        for step, idx in enumerate(_batches(len(volumes), plan.batch_size, total, plan.seed, si)):
            seeds = [[plan.seed, si, step, int(i)] for i in range(len(idx))]
            trace = _trace_for(stage, plan, params, volumes, texts, idx, seeds)
            loss = trace.loss
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} at step {global_step} (stage {stage.name})",
                                    step=global_step)
            lr = lr_at(step, total, stage.lr, plan.warmup_ratio)
            opt.step(params, model.backward(trace), lr)
            result.history.append((global_step, stage.name, lr, loss))
            global_step += 1
        if on_stage_end is not None:
            on_stage_end(stage, params)
    return result


def evaluate_loss(objective, params, volumes, texts=None, mask_ratio=0.5, tau=model.DEFAULT_TAU, seed=0):
    """Loss on a fixed set with fixed masks (``[seed, i]`` per item), for comparing checkpoints."""
    volumes = list(volumes)
    if objective == "mae":
        return model.trace_mae(volumes, params, mask_ratio, seed, track=False).loss
    if objective == "flip":
        return model.trace_flip(volumes, texts, params, mask_ratio, tau, seed, track=False).loss
    return model.trace_align(volumes, texts, params, track=False).loss


def pretrain_plan(method="mae", lr=1e-3, epochs=1, steps=None, **plan_kwargs):
    """Vision pretraining plan; ``mae_then_flip`` carries the encoder from the MAE stage into FLIP."""
    if method not in PRETRAIN_METHODS:
        raise ValidationError(f"unknown pretrain method {method!r}; valid: {list(PRETRAIN_METHODS)}")
    mae = Stage("mae", "mae", ENCODER_PATTERNS + MAE_PATTERNS, lr, epochs, steps)
    flip = Stage("flip", "flip", ENCODER_PATTERNS + FLIP_PATTERNS, lr, epochs, steps)
    stages = {"mae": (mae,), "flip": (flip,), "mae_then_flip": (mae, flip)}[method]
    return TrainPlan(stages, **plan_kwargs)


def connector_patterns(compression):
    return CONNECTOR_PATTERNS + (RESAMPLER_PATTERNS if compression == "perceiver" else ())


def schedule_plan(schedule="2stage-unfrozen", compression="pixel_shuffle", stage1_lr=STAGE1_LR,
                  stage2_lr=STAGE2_LR, epochs=1, steps=None, **plan_kwargs):
    """Connector training schedules.

    ``1stage``           connector and language head together at ``stage1_lr``
    ``2stage-frozen``    stage 1 connector only; stage 2 connector and head at ``stage2_lr``
    ``2stage-unfrozen``  as above, with the encoder also unfrozen in stage 2
    """
    schedule = _SCHEDULE_ALIASES.get(schedule, schedule)
    if schedule not in SCHEDULES:
        raise ValidationError(f"unknown schedule {schedule!r}; valid: {list(SCHEDULES) + ['2stage']}")
    conn = connector_patterns(compression)
    if schedule == "1stage":
        stages = (Stage("stage1", "align", conn + LM_HEAD_PATTERNS, stage1_lr, epochs, steps),)
    else:
        stage2 = conn + LM_HEAD_PATTERNS
        if schedule == "2stage-unfrozen":
            stage2 = ENCODER_PATTERNS + stage2
        stages = (Stage("stage1", "align", conn, stage1_lr, epochs, steps),
                  Stage("stage2", "align", stage2, stage2_lr, epochs, steps))
    return TrainPlan(stages, **plan_kwargs)
