import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from argus_bench.exceptions import TrainingError, ValidationError
from argus_bench.vit.estimators import ReportAligner, VisionPretrainer, carry_encoder
from argus_bench.vit.params import ENCODER_PATTERNS, EncoderConfig, diff_checkpoints, init_params
from argus_bench.vit.text import HashingTextEmbedder
from argus_bench.vit.train import (AdamW, Stage, TrainPlan, lr_at, pretrain_plan, schedule_plan, train)
from argus_bench.volume import Volume


@pytest.fixture
def vols(rng):
    return [Volume(rng.random((8, 8, 8)), (1, 1, 1)) for _ in range(6)]


@pytest.fixture
def texts(rng):
    return rng.standard_normal((6, 8))


class TestSchedule:
    def test_warmup_and_decay(self):
        total, base = 100, 1e-4
        assert lr_at(0, total, base) == 0.0
        assert lr_at(5, total, base) == pytest.approx(base)
        assert lr_at(3, total, base) == pytest.approx(base * 3 / 5)
        assert lr_at(100, total, base) == 0.0
        assert lr_at(52, total, base) == pytest.approx(base * 48 / 95)

    def test_short_runs(self):
        assert lr_at(0, 1, 1.0) == 0.0
        assert lr_at(0, 1, 1.0, warmup_ratio=0.0) == 1.0

    def test_history_lr_matches_rule(self, micro_params, vols):
        plan = pretrain_plan("mae", lr=1e-3, steps=20, batch_size=2)
        hist = train(plan, vols, micro_params).history
        assert [h[2] for h in hist] == [lr_at(s, 20, 1e-3) for s in range(20)]


class TestAdamW:
    def test_first_step_is_signed_lr(self, micro_params):
        before = micro_params["head.b"].copy()
        grads = {"head.b": np.linspace(-1, 1, before.size)}
        AdamW(["head.b"]).step(micro_params, grads, lr=0.1)
        delta = micro_params["head.b"] - before
        nz = grads["head.b"] != 0
        assert_allclose(delta[nz], -0.1 * np.sign(grads["head.b"][nz]), rtol=1e-6)

    def test_weight_decay_is_decoupled(self, micro_params):
        before = micro_params["head.w"].copy()
        AdamW(["head.w"], weight_decay=0.5).step(micro_params, {"head.w": np.zeros_like(before)}, lr=0.1)
        assert_allclose(micro_params["head.w"], before * 0.95)


class TestTrain:
    def test_stage_one_freezes_everything_else(self, rng, vols, texts):
        cfg = EncoderConfig(dtype="float64", n_queries=4)
        params = init_params(cfg, 0)
        before = params.copy()
        snapshots = {}
        plan = schedule_plan("2stage-unfrozen", "pixel_shuffle", 1e-3, 1e-4, steps=3, batch_size=3)
        train(plan, vols, params, texts, on_stage_end=lambda st, p: snapshots.setdefault(st.name, p.copy()))
        changed = diff_checkpoints(before, snapshots["stage1"])
        assert changed and all(n.startswith("connector.") for n in changed)
        after2 = diff_checkpoints(snapshots["stage1"], snapshots["stage2"])
        assert any(n.startswith("blocks.") for n in after2) and "lm_head.w" in after2
        assert not any(n.startswith(("resampler.", "decoder.", "proj.")) for n in after2)

    def test_frozen_schedule_keeps_encoder(self, vols, texts):
        params = init_params(EncoderConfig(dtype="float64"), 0)
        before = params.copy()
        train(schedule_plan("2stage-frozen", steps=2, batch_size=3, stage1_lr=1e-3, stage2_lr=1e-3),
              vols, params, texts)
        assert not any(n.startswith(("blocks.", "patch_embed.", "norm.")) for n in diff_checkpoints(before, params))

    def test_perceiver_trains_resampler_with_connector(self):
        plan = schedule_plan("1stage", "perceiver")
        assert "resampler.*" in plan.stages[0].trainable

    def test_deterministic(self, vols):
        runs = []
        for _ in range(2):
            p = init_params(EncoderConfig(), 1)
            runs.append((train(pretrain_plan("mae", steps=5, batch_size=2, seed=4), vols, p).history, p))
        assert runs[0][0] == runs[1][0]
        assert diff_checkpoints(runs[0][1], runs[1][1]) == []

    def test_nan_loss_aborts_with_step(self, vols):
        p = init_params(EncoderConfig(), 0)
        bad = list(vols)
        plan = pretrain_plan("mae", steps=4, batch_size=len(bad))
        p.tensors["head.b"][0] = np.nan
        with pytest.raises(TrainingError) as err:
            train(plan, bad, p)
        assert err.value.step == 0

    def test_flip_needs_texts(self, vols):
        with pytest.raises(ValidationError, match="text"):
            train(pretrain_plan("flip", steps=1, batch_size=2), vols, init_params(EncoderConfig(), 0))

    def test_plan_validation(self, vols):
        with pytest.raises(ValidationError):
            Stage("s", "mae", ("*",), lr=0.0)
        with pytest.raises(ValidationError):
            TrainPlan(())
        with pytest.raises(ValidationError):
            schedule_plan("3stage")
        with pytest.raises(ValidationError, match="matches no tensor"):
            train(TrainPlan((Stage("s", "mae", ("missing.*",), 1e-3, steps=1),)), vols,
                  init_params(EncoderConfig(), 0))

    def test_mae_then_flip_runs_both(self, vols, texts):
        hist = train(pretrain_plan("mae_then_flip", steps=2, batch_size=3), vols, init_params(EncoderConfig(), 0),
                     texts).history
        assert [h[1] for h in hist] == ["mae", "mae", "flip", "flip"]
        assert [h[0] for h in hist] == [0, 1, 2, 3]


class TestEstimators:
    def test_pretrainer_and_aligner(self, vols):
        reports = [f"finding number {i} in the lung" for i in range(len(vols))]
        pre = VisionPretrainer(method="mae", steps=5, batch_size=3).fit(vols)
        feats = pre.transform(vols)
        assert feats.shape == (6, 24)
        assert math.isfinite(pre.score(vols))
        al = ReportAligner(schedule="2stage-unfrozen", encoder_params=pre.params_, steps=2, batch_size=3)
        al.fit(vols, reports)
        assert al.predict(vols).shape == (6, 8)

    def test_carry_encoder_copies_only_encoder(self):
        src, dst = init_params(EncoderConfig(), 1), init_params(EncoderConfig(), 2)
        names = carry_encoder(src, dst)
        assert set(names) == set(src.resolve(ENCODER_PATTERNS))
        assert not any(n.startswith("head") for n in names)
        assert not set(diff_checkpoints(src, dst)) & set(names)
        assert "head.w" in diff_checkpoints(src, dst)

    def test_text_embedder(self):
        emb = HashingTextEmbedder(8, seed=0).transform(["a b c", "", "A B C"])
        assert_allclose(np.linalg.norm(emb[0]), 1.0)
        assert_allclose(emb[1], 0.0)
        assert_allclose(emb[0], emb[2])
        assert not np.allclose(HashingTextEmbedder(8, seed=1).transform(["a b c"]), emb[:1])
