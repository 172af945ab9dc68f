import numpy as np
import pytest

from argus_bench.vit import gradcheck
from argus_bench.vit.gradcheck import (MICRO_CONFIG, central_difference, epsilon_sweep, grad_check_detail,
                                       quadratic_check, relative_error)


def test_quadratic_sanity():
    assert quadratic_check() < 1e-10


def test_central_difference_on_cubic():
    x = np.array([0.3, -1.2, 2.0])
    numeric = central_difference(lambda: float(np.sum(x ** 3)), x, eps=1e-5)
    for i, g in numeric.items():
        assert abs(g - 3 * x[i] ** 2) < 1e-8
    assert x.tolist() == [0.3, -1.2, 2.0]


def test_relative_error_floor():
    assert relative_error(1e-9, 0.0) == pytest.approx(0.1)
    assert relative_error(2.0, 1.0) == 1.0


def test_micro_config_shape():
    assert MICRO_CONFIG.volume_dims == (8, 8, 8)
    assert MICRO_CONFIG.d_model == 24 and MICRO_CONFIG.n_layers == 2
    assert MICRO_CONFIG.dtype == "float64"


def test_detail_covers_every_family():
    # a tiny config keeps this fast; the full micro check lives with the acceptance tests
    cfg = MICRO_CONFIG.replace(n_layers=1, d_model=12, n_heads=2, n_queries=2, compression="perceiver")
    detail = grad_check_detail(cfg, seed=3, objectives=("mae", "flip", "align"))
    assert {n.split(".")[0] for n in detail["mae"]} >= {"patch_embed", "blocks", "norm", "mask_token",
                                                        "decoder", "decoder_norm", "head"}
    assert "proj.w" in detail["flip"]
    assert {"resampler.queries", "connector.fc1.w", "lm_head.w"} <= set(detail["align"])
    assert max(max(t.values()) for t in detail.values()) < 1e-4


def test_large_tensors_are_sampled(monkeypatch):
    monkeypatch.setattr(gradcheck, "SAMPLE_ABOVE", 100)
    cfg = MICRO_CONFIG.replace(n_layers=1, d_model=12)
    detail = grad_check_detail(cfg, seed=0, objectives=("mae",))
    assert max(detail["mae"].values()) < 1e-4


@pytest.mark.slow
def test_epsilon_sweep_is_convex_in_log_log():
    sweep = epsilon_sweep()
    errs = [np.log10(sweep[e]) for e in (1e-3, 1e-4, 1e-5)]
    # truncation error dominates at 1e-3, roundoff at 1e-5
    assert errs[1] < errs[0] and errs[1] < errs[2]
    assert errs[0] + errs[2] - 2 * errs[1] > 0
