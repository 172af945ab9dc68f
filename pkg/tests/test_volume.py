import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from argus_bench.exceptions import NonFiniteError, StageError, ValidationError
from argus_bench.volume import (HIGH, MICRO, NORMAL, CTPreprocessor, ResolutionProfile, Volume, clip_hu,
                                normalize_intensity, preprocess, resample_spacing, resampled_dims, resize)
import argus_bench.volume as volume_module


def affine_field(dims, spacing, coef=(0.7, -0.3, 0.45), offset=250.0):
    """Field value at each voxel centre, in physical millimetres."""
    idx = np.indices(dims, dtype=np.float64)
    return offset + sum(c * (idx[a] + 0.5) * spacing[a] for a, c in enumerate(coef))


def expected_affine(src_dims, src_spacing, out_dims, scales, coef=(0.7, -0.3, 0.45), offset=250.0):
    # sample positions in source voxel units, clamped at the outermost centres
    axes = []
    for n_in, n_out, s in zip(src_dims, out_dims, scales):
        u = np.clip((np.arange(n_out) + 0.5) * s - 0.5, 0, n_in - 1)
        axes.append(u)
    ux, uy, uz = np.meshgrid(*axes, indexing="ij")
    return offset + sum(c * (u + 0.5) * src_spacing[a] for a, (c, u) in enumerate(zip(coef, (ux, uy, uz))))


class TestVolumeType:
    def test_flat_order_is_x_fastest(self):
        v = Volume.from_flat(np.arange(24), (2, 3, 4), (1, 1, 1))
        assert v.voxels[1, 0, 0] == 1
        assert v.voxels[0, 1, 0] == 2
        assert v.voxels[0, 0, 1] == 6
        assert_array_equal(v.flat(), np.arange(24, dtype=np.float32))

    @pytest.mark.parametrize("spacing", [(0, 1, 1), (1, -1, 1), (1, 1, np.inf), (1, np.nan, 1)])
    def test_rejects_bad_spacing(self, spacing):
        with pytest.raises(ValidationError):
            Volume(np.zeros((2, 2, 2)), spacing)

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValidationError):
            Volume.from_flat(np.zeros(7), (2, 2, 2), (1, 1, 1))

    def test_profiles(self):
        assert NORMAL.grid_dims == (16, 16, 8) and NORMAL.n_tokens == 2048
        assert HIGH.grid_dims == (16, 16, 16) and HIGH.n_tokens == 4096
        with pytest.raises(ValidationError, match="axis z"):
            ResolutionProfile("BAD", (16, 16, 10), (4, 4, 4))


class TestClipNormalize:
    def test_clip_examples(self):
        v = Volume(np.array([1500, -2000, 37.5, 0], dtype=np.float32).reshape(4, 1, 1), (1, 1, 1))
        assert_array_equal(clip_hu(v).voxels.ravel(), [1000, -1000, 37.5, 0])

    def test_clip_reports_nonfinite_index(self):
        vox = np.zeros((2, 2, 2), dtype=np.float32)
        vox[1, 1, 0] = np.nan  # x-fastest index 1 + 2*1 = 3
        with pytest.raises(NonFiniteError) as err:
            clip_hu(Volume(vox, (1, 1, 1)))
        assert err.value.index == 3

    def test_normalize_examples(self):
        v = Volume(np.array([-1000, 1000, 0], dtype=np.float32).reshape(3, 1, 1), (1, 1, 1))
        assert_array_equal(normalize_intensity(v).voxels.ravel(), [0.0, 1.0, 0.5])

    def test_normalize_names_offender(self):
        v = Volume(np.array([5000.0]).reshape(1, 1, 1), (1, 1, 1))
        with pytest.raises(ValidationError, match="5000"):
            normalize_intensity(v)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6, allow_nan=False, width=32), min_size=1, max_size=64))
    def test_clip_then_normalize_in_unit_interval(self, values):
        v = Volume(np.array(values, dtype=np.float32).reshape(-1, 1, 1), (1, 1, 1))
        out = normalize_intensity(clip_hu(v)).voxels
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestResampling:
    def test_resample_dims_rounding(self):
        assert resampled_dims((512, 512, 300), (0.7, 0.7, 1.0), (1, 1, 4)) == (358, 358, 75)
        out = resample_spacing(Volume(np.zeros((10, 10, 10)), (0.7, 0.7, 1.0)), (1, 1, 4))
        assert out.dims == (7, 7, 3)  # 2.5 rounds half away from zero

    def test_degenerate_axis_clamps_to_one(self, caplog):
        v = Volume(np.ones((4, 4, 1)), (1, 1, 1))
        out = resample_spacing(v, (1, 1, 4))
        assert out.dims == (4, 4, 1)
        assert "clamped to 1" in caplog.text

    def test_constant_preserved(self):
        v = Volume(np.full((9, 7, 5), 0.3, dtype=np.float32), (0.8, 1.3, 2.0))
        out = resample_spacing(v, (1, 1, 4))
        assert_array_equal(out.voxels, np.float32(0.3))
        assert out.spacing == (1.0, 1.0, 4.0)

    @pytest.mark.parametrize("spacing", [(0.7, 0.9, 1.25), (1.6, 0.5, 5.0), (1.0, 1.0, 4.0)])
    def test_resample_reproduces_affine_field(self, spacing):
        dims = (13, 11, 9)
        v = Volume(affine_field(dims, spacing), spacing)
        out = resample_spacing(v, (1, 1, 4))
        scales = [t / s for s, t in zip(spacing, (1, 1, 4))]
        want = expected_affine(dims, spacing, out.dims, scales)
        assert_allclose(out.voxels, want, rtol=1e-5)

    @pytest.mark.parametrize("target", [(20, 5, 9), (6, 17, 3), (13, 11, 9)])
    def test_resize_reproduces_affine_field(self, target):
        dims, spacing = (13, 11, 9), (0.9, 1.1, 3.0)
        v = Volume(affine_field(dims, spacing), spacing)
        out = resize(v, target)
        scales = [n / m for n, m in zip(dims, target)]
        assert_allclose(out.voxels, expected_affine(dims, spacing, target, scales), rtol=1e-5)

    def test_resize_identity_is_bitwise(self, rng):
        v = Volume(rng.standard_normal((6, 5, 4)), (1, 2, 3))
        out = resize(v, v.dims)
        assert out == v

    def test_resize_preserves_extent(self):
        v = Volume(np.zeros((30, 20, 10)), (0.8, 1.2, 5.0))
        out = resize(v, (16, 16, 16))
        assert_allclose(out.extent, v.extent)

    def test_thread_count_does_not_change_result(self, rng):
        v = Volume(rng.random((10, 9, 8)), (0.9, 1.1, 2.5))
        one = preprocess(v, MICRO, n_jobs=1)
        four = preprocess(v, MICRO, n_jobs=4)
        assert one == four


class TestPreprocess:
    def test_profile_dims_and_range(self, rng):
        v = Volume(rng.uniform(-3000, 3000, (20, 18, 12)), (0.7, 0.7, 2.5))
        out = preprocess(v, MICRO)
        assert out.dims == MICRO.target_dims
        assert out.voxels.min() >= 0.0 and out.voxels.max() <= 1.0

    def test_constant_zero_hu_gives_half(self):
        v = Volume(np.zeros((12, 12, 6)), (1.5, 1.5, 3.0))
        out = preprocess(v, MICRO)
        assert_array_equal(out.voxels, np.float32(0.5))

    def test_normal_profile_dims(self):
        v = Volume(np.zeros((40, 40, 20)), (1.0, 1.0, 2.0))
        assert preprocess(v, NORMAL).dims == (256, 256, 64)

    def test_idempotent_on_aligned_grid(self, rng):
        # input already at the profile dims and target spacing: the second pass samples an aligned grid
        v = Volume(rng.uniform(-1000, 1000, (16, 16, 16)), (1.0, 1.0, 4.0))
        first = preprocess(v, MICRO)
        back_to_hu = Volume(first.voxels * 2000.0 - 1000.0, first.spacing)
        second = preprocess(back_to_hu, MICRO)
        assert_allclose(second.voxels, first.voxels, atol=1e-5)

    def test_stage_errors_are_tagged(self):
        vox = np.zeros((4, 4, 4), dtype=np.float32)
        vox[0, 0, 0] = np.inf
        with pytest.raises(StageError, match=r"\[clip_hu\]"):
            preprocess(Volume(vox, (1, 1, 1)), MICRO)

    def test_estimator_matches_function(self, rng):
        vols = [Volume(rng.uniform(-1200, 1200, (10, 10, 6)), (1.2, 1.2, 3.0)) for _ in range(3)]
        pre = CTPreprocessor("micro", n_jobs=2).fit()
        out = pre.transform(vols)
        for v, o in zip(vols, out):
            assert o == preprocess(v, MICRO)

    def test_no_augmentation_api(self):
        names = {n.lower() for n in dir(volume_module)}
        assert not any(word in n for n in names for word in ("flip", "rotate", "augment"))
