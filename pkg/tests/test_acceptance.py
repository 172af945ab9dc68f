"""The ten acceptance checks, each with its tolerance and wall-clock budget.

A summary line per criterion ("criterion N PASS|FAIL title") is printed at the
end of the pytest run by ``conftest.py``.
"""
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

import oracles
from argus_bench.curation import RawRecord, curate_with_log, split_dataset
from argus_bench.io import read_ctvol, write_ctvol
from argus_bench.metrics import METRIC_KEYS, EvalPair, bleu, cider, evaluate_pairs, meteor, rouge_l
from argus_bench.synth import SynthSpec, generate
from argus_bench.tokens import (TokenGrid, avg_pool_3d, compressed_token_count, patchify, pixel_shuffle_3d,
                                pixel_unshuffle_3d, sample_mask, unpatchify)
from argus_bench.vit import model
from argus_bench.vit.gradcheck import MICRO_CONFIG, grad_check_detail
from argus_bench.vit.params import EncoderConfig, diff_checkpoints, init_params
from argus_bench.vit.train import evaluate_loss, pretrain_plan, schedule_plan, train
from argus_bench.volume import HIGH, NORMAL, PROFILES, Volume, preprocess, resample_spacing, resize
from conftest import CURATION_REMOVED, CURATION_SHORT
from pipeline_run import artifact_bytes, run_chain


@contextmanager
def budget(seconds):
    start = time.perf_counter()
    yield
    elapsed = time.perf_counter() - start
    assert elapsed < seconds, f"took {elapsed:.1f}s, budget {seconds}s"


@pytest.mark.criterion(1, "token arithmetic")
def test_token_arithmetic():
    with budget(1):
        assert NORMAL.n_tokens == 2048 and compressed_token_count(2048, "pixel_shuffle") == 256
        assert HIGH.n_tokens == 4096 and compressed_token_count(4096, "pixel_shuffle") == 512
        for n in (2048, 4096, 37):
            assert compressed_token_count(n, "perceiver") == 64
        g = TokenGrid(NORMAL.grid_dims, np.zeros((2048, 1), dtype=np.float32))
        assert pixel_shuffle_3d(g).n_tokens == 256 and avg_pool_3d(g).n_tokens == 256


def _ids(source, n, official=False, prefix=""):
    return [RawRecord(f"{prefix}{source}-{i:06d}", source, report="x", official_test=official) for i in range(n)]


@pytest.mark.criterion(2, "split reproduction")
def test_split_reproduction():
    with budget(1):
        recs = (_ids("BIMCV-R", 5322) + _ids("CT-RATE", 25691 - 1564) + _ids("CT-RATE", 1564, True, "o")
                + _ids("INSPECT", 20400))
        counts = split_dataset(recs, seed=0).counts
        assert counts["BIMCV-R"] == {"train": 3726, "val": 532, "test": 1064}
        assert counts["INSPECT"] == {"train": 14280, "val": 2040, "test": 4080}
        pool = 25691 - 1564
        assert counts["CT-RATE"]["val"] == round(0.1 * pool)
        assert counts["CT-RATE"]["test"] == 1564
        assert counts["CT-RATE"]["train"] == pool - round(0.1 * pool)


@pytest.mark.criterion(3, "curation fixture")
def test_curation_fixture(curation_records):
    with budget(1):
        assert len(curation_records) == 12
        curated, log = curate_with_log(curation_records)
        removed = {e["id"]: (e["sentence"], e["rule"]) for e in log if e["sentence"] is not None}
        assert removed == CURATION_REMOVED
        assert {e["id"] for e in log if e["rule"] == "min-length"} == CURATION_SHORT
        kept = {r.id for r in curated}
        assert not kept & CURATION_SHORT
        assert all(r.token_count >= 10 for r in curated if not r.official_test)


@pytest.mark.criterion(4, "losslessness")
def test_losslessness():
    rng = np.random.default_rng(4)
    with budget(5):
        for _ in range(100):
            gdims = tuple(int(x) for x in 2 * rng.integers(1, 4, size=3))
            pdims = tuple(int(x) for x in rng.integers(1, 4, size=3))
            d = int(rng.integers(1, 5))
            g = TokenGrid(gdims, rng.standard_normal((int(np.prod(gdims)), d)).astype(np.float32))
            assert pixel_unshuffle_3d(pixel_shuffle_3d(g)) == g
            v = Volume(rng.standard_normal(tuple(a * b for a, b in zip(gdims, pdims))), (1, 1, 1))
            assert unpatchify(patchify(v, pdims), pdims) == v
            pooled = avg_pool_3d(g).data.astype(np.float64).mean(axis=0)
            assert np.abs(pooled - g.data.astype(np.float64).mean(axis=0)).max() < 1e-6


@pytest.mark.criterion(5, "gradient correctness")
def test_gradient_correctness():
    with budget(60):
        detail = grad_check_detail(MICRO_CONFIG, seed=0, objectives=("mae", "flip"))
    assert MICRO_CONFIG.volume_dims == (8, 8, 8) and MICRO_CONFIG.dtype == "float64"
    for objective in ("mae", "flip"):
        worst = max(detail[objective].values())
        assert worst < 1e-4, f"{objective}: {worst:.2e}"


@pytest.mark.criterion(6, "loss-analytics oracles")
def test_loss_oracles():
    rng = np.random.default_rng(6)
    with budget(5):
        params = init_params(EncoderConfig(dtype="float64"), 0)
        for seed in range(5):
            v = Volume(rng.random((8, 8, 8)), (1, 1, 1))
            loss, recon = model.mae_loss(v, params, 0.5, seed)
            target = patchify(v, (4, 4, 4)).data.astype(np.float64)
            masked = sample_mask(8, 0.5, seed).masked_indices
            direct = np.mean((recon[masked] - target[masked]) ** 2)
            assert abs(loss - direct) < 1e-9
        for b in (2, 4, 7):
            same = np.ones((b, 8))
            assert abs(model.contrastive_loss(same, same) - math.log(b)) < 1e-6
        e = np.eye(2)
        assert abs(model.contrastive_loss(e, e, 0.07) - math.log1p(math.exp(-1 / 0.07))) < 1e-6


@pytest.mark.criterion(7, "training properties")
def test_training_properties():
    with budget(600):
        spec = SynthSpec(n_samples=32, dims=(16, 16, 16), radius_range=(1.5, 3.0), seed=0)
        vols = [v for _, v, _, _ in generate(spec)]
        params = init_params(EncoderConfig(patch_dims=(4, 4, 4), grid_dims=(4, 4, 4)), 0)
        before = evaluate_loss("mae", params, vols, seed=0)
        train(pretrain_plan("mae", lr=1e-3, steps=200, batch_size=8, seed=0), vols, params)
        after = evaluate_loss("mae", params, vols, seed=0)
        assert after <= 0.5 * before, f"loss {before:.4f} -> {after:.4f}"

        texts = np.random.default_rng(7).standard_normal((len(vols), params.config.d_joint))
        start = params.copy()
        snaps = {}
        plan = schedule_plan("2stage-unfrozen", "pixel_shuffle", 1e-3, 1e-4, steps=4, batch_size=8)
        train(plan, vols, params, texts, on_stage_end=lambda st, p: snaps.setdefault(st.name, p.copy()))
        changed = diff_checkpoints(start, snaps["stage1"])
        assert changed and all(n.startswith("connector.") for n in changed)


@pytest.mark.criterion(8, "metric oracles")
def test_metric_oracles():
    with budget(10):
        rng = np.random.default_rng(8)
        pairs = oracles.random_pairs(rng)
        report = evaluate_pairs(EvalPair(i, " ".join(c), tuple(" ".join(r) for r in refs)) for i, c, refs in pairs)
        want_cider = oracles.cider([c for _, c, _ in pairs], [refs for _, _, refs in pairs])
        for (pid, c, refs), wc in zip(pairs, want_cider):
            want = {**oracles.all_scores(c, refs), "cider": wc}
            for key in METRIC_KEYS:
                assert abs(report.per_id[pid][key] - want[key]) < 1e-9, (pid, key)
        assert abs(bleu("the cat sat", ["the cat sat down"], 1) - 0.71653) < 1e-5
        assert abs(rouge_l("a b c", "a c b") - 2 / 3) < 1e-5
        assert abs(meteor("word", "word") - 0.5) < 1e-5
        corpus = [EvalPair("1", "the left lung is clear", "the left lung is clear"),
                  EvalPair("2", "no pleural effusion was seen", "no pleural effusion was seen")]
        assert abs(cider(corpus)["1"] - 10.0) < 1e-5


@pytest.mark.criterion(9, "preprocessing fidelity")
def test_preprocessing_fidelity(tmp_path):
    rng = np.random.default_rng(9)
    with budget(10):
        for trial in range(5):
            dims = tuple(int(x) for x in rng.integers(5, 14, size=3))
            spacing = tuple(float(x) for x in rng.uniform(0.5, 5.0, size=3))
            coef = rng.uniform(-1, 1, size=3)
            idx = np.indices(dims, dtype=np.float64)
            field = 500.0 + sum(c * (idx[a] + 0.5) * spacing[a] for a, c in enumerate(coef))
            v = Volume(field, spacing)

            def expected(out_dims, scales):
                axes = [np.clip((np.arange(m) + 0.5) * s - 0.5, 0, n - 1) for n, m, s in zip(dims, out_dims, scales)]
                grid = np.meshgrid(*axes, indexing="ij")
                return 500.0 + sum(c * (u + 0.5) * spacing[a] for a, (c, u) in enumerate(zip(coef, grid)))

            out = resample_spacing(v, (1, 1, 4))
            want = expected(out.dims, [t / s for s, t in zip(spacing, (1, 1, 4))])
            assert np.max(np.abs(out.voxels - want) / np.abs(want)) < 1e-5
            target = tuple(int(x) for x in rng.integers(3, 20, size=3))
            out = resize(v, target)
            want = expected(target, [n / m for n, m in zip(dims, target)])
            assert np.max(np.abs(out.voxels - want) / np.abs(want)) < 1e-5

            raw = Volume(rng.uniform(-4000, 4000, dims), spacing)
            for prof in (PROFILES["micro"], NORMAL):
                pre = preprocess(raw, prof)
                assert pre.dims == prof.target_dims
                assert pre.voxels.min() >= 0.0 and pre.voxels.max() <= 1.0
            write_ctvol(raw, tmp_path / f"{trial}.ctvol")
            back = read_ctvol(tmp_path / f"{trial}.ctvol")
            assert back.voxels.tobytes() == raw.voxels.tobytes() and back.spacing == raw.spacing


@pytest.mark.criterion(10, "end-to-end determinism")
def test_end_to_end_determinism(tmp_path):
    with budget(300):
        run_chain(tmp_path / "a", seed=5)
        run_chain(tmp_path / "b", seed=5)
    a, b = artifact_bytes(tmp_path / "a"), artifact_bytes(tmp_path / "b")
    assert len([k for k in a if k.startswith("volumes/")]) == 8
    assert a.keys() == b.keys()
    different = [k for k in a if a[k] != b[k]]
    assert not different, different
