"""CT volume container and the clip -> normalize -> resample -> resize pipeline.

Voxel arrays are indexed ``[x, y, z]`` (sagittal, coronal, transverse) with
shape ``(nx, ny, nz)``; the flat on-disk order is x-fastest, i.e.
``voxels.ravel(order="F")``.

Interpolation uses voxel-centre geometry: voxel ``i`` of an axis with spacing
``s`` sits at physical coordinate ``(i + 0.5) * s``. Sample positions that fall
outside the outermost voxel centres are clamped to the edge.
"""
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import NonFiniteError, StageError, ValidationError
from .utils import as_triple, round_half_away

logger = logging.getLogger(__name__)

HU_MIN = -1000.0
HU_MAX = 1000.0
TARGET_SPACING = (1.0, 1.0, 4.0)


@dataclass(frozen=True, eq=False)
class Volume:
    """A 3D scalar field with physical voxel spacing in millimetres."""

    voxels: np.ndarray
    spacing: tuple

    def __post_init__(self):
        vox = np.asarray(self.voxels, dtype=np.float32)
        if vox.ndim != 3 or min(vox.shape) < 1:
            raise ValidationError(f"voxels must be a non-empty 3D array, got shape {vox.shape}")
        spacing = as_triple(self.spacing, "spacing", float)
        if not all(math.isfinite(s) and s > 0 for s in spacing):
            raise ValidationError(f"spacing must be strictly positive and finite, got {spacing}")
        object.__setattr__(self, "voxels", vox)
        object.__setattr__(self, "spacing", spacing)

    @classmethod
    def from_flat(cls, flat, dims, spacing):
        """Build from an x-fastest flat array."""
        dims = as_triple(dims, "dims")
        flat = np.asarray(flat, dtype=np.float32).reshape(-1)
        if flat.size != dims[0] * dims[1] * dims[2]:
            raise ValidationError(f"{flat.size} voxels do not fill dims {dims}")
        return cls(flat.reshape(dims, order="F"), spacing)

    @property
    def dims(self):
        return tuple(int(n) for n in self.voxels.shape)

    @property
    def extent(self):
        return tuple(n * s for n, s in zip(self.dims, self.spacing))

    def flat(self):
        return self.voxels.ravel(order="F")

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return self.spacing == other.spacing and np.array_equal(self.voxels, other.voxels)

    def __repr__(self):
        return f"Volume(dims={self.dims}, spacing={self.spacing})"


@dataclass(frozen=True)
class ResolutionProfile:
    name: str
    target_dims: tuple
    patch_dims: tuple

    def __post_init__(self):
        target = as_triple(self.target_dims, "target_dims")
        patch = as_triple(self.patch_dims, "patch_dims")
        if min(target) < 1 or min(patch) < 1:
            raise ValidationError("profile dimensions must be positive")
        for axis, (t, p) in enumerate(zip(target, patch)):
            if t % p:
                raise ValidationError(f"profile {self.name}: axis {'xyz'[axis]} size {t} not divisible by patch {p}")
        object.__setattr__(self, "target_dims", target)
        object.__setattr__(self, "patch_dims", patch)

    @property
    def grid_dims(self):
        return tuple(t // p for t, p in zip(self.target_dims, self.patch_dims))

    @property
    def n_tokens(self):
        gx, gy, gz = self.grid_dims
        return gx * gy * gz


NORMAL = ResolutionProfile("NORMAL", (256, 256, 64), (16, 16, 8))
HIGH = ResolutionProfile("HIGH", (512, 512, 256), (32, 32, 16))
# Desk-scale profile for the micro encoder; not one of the published settings.
MICRO = ResolutionProfile("MICRO", (16, 16, 16), (4, 4, 4))

PROFILES = {p.name.lower(): p for p in (NORMAL, HIGH, MICRO)}


def get_profile(profile):
    if isinstance(profile, ResolutionProfile):
        return profile
    try:
        return PROFILES[str(profile).lower()]
    except KeyError:
        raise ValidationError(f"unknown profile {profile!r}; valid: {sorted(PROFILES)}") from None


def check_volume(v, require_finite=True):
    if not isinstance(v, Volume):
        raise ValidationError(f"expected a Volume, got {type(v).__name__}")
    if require_finite:
        bad = ~np.isfinite(v.voxels)
        if bad.any():
            # report the x-fastest flat index
            flat_idx = int(np.flatnonzero(bad.ravel(order="F"))[0])
            value = v.flat()[flat_idx]
            raise NonFiniteError(f"non-finite voxel {value} at index {flat_idx}", index=flat_idx)
    return v


def clip_hu(v, lo=HU_MIN, hi=HU_MAX):
    if not lo < hi:
        raise ValidationError(f"clip bounds must satisfy lo < hi, got ({lo}, {hi})")
    check_volume(v)
    return Volume(np.clip(v.voxels, np.float32(lo), np.float32(hi)), v.spacing)


def normalize_intensity(v, lo=HU_MIN, hi=HU_MAX):
    if not lo < hi:
        raise ValidationError(f"normalization bounds must satisfy lo < hi, got ({lo}, {hi})")
    check_volume(v)
    vox = v.voxels
    outside = (vox < lo) | (vox > hi)
    if outside.any():
        value = float(vox[outside][0])
        raise ValidationError(f"voxel value {value} outside [{lo}, {hi}]; clip before normalizing")
    out = (vox.astype(np.float64) - lo) / (hi - lo)
    return Volume(out.astype(np.float32), v.spacing)


def _lerp_axis(arr, axis, n_out, scale, out_dtype=np.float64, n_jobs=1):
    """Linear interpolation along one axis with voxel-centre alignment and edge clamping.

    Output sample ``j`` reads input coordinate ``(j + 0.5) * scale - 0.5``.
    """
    n_in = arr.shape[axis]
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = pos - i0

    shape = list(arr.shape)
    shape[axis] = n_out
    out = np.empty(shape, dtype=out_dtype)
    src = np.moveaxis(arr, axis, 0)
    dst = np.moveaxis(out, axis, 0)

    def fill(j):
        a = src[i0[j]].astype(np.float64)
        if w[j] == 0.0:
            dst[j] = a
        else:
            dst[j] = a * (1.0 - w[j]) + src[i1[j]].astype(np.float64) * w[j]

    if n_jobs > 1 and n_out > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            list(pool.map(fill, range(n_out)))
    else:
        for j in range(n_out):
            fill(j)
    return out


def _trilinear(vox, new_dims, scales, n_jobs=1):
    # Separable passes are exactly trilinear; intermediates stay at 64-bit.
    out = vox
    for axis in range(3):
        last = axis == 2
        out = _lerp_axis(out, axis, new_dims[axis], scales[axis],
                         out_dtype=np.float32 if last else np.float64,
                         n_jobs=n_jobs if last else 1)
    return out


def _default_jobs():
    return max(1, int(os.environ.get("ARGUS_BENCH_THREADS", "1")))


def resampled_dims(dims, spacing, target_spacing):
    """``round_half_away(n * s / t)`` per axis, clamped (and logged) at a minimum of 1."""
    out = []
    for axis, (n, s, t) in enumerate(zip(dims, spacing, target_spacing)):
        m = round_half_away(n * s / t)
        if m < 1:
            logger.warning("resample_spacing: axis %s collapses to %d voxels; clamped to 1", "xyz"[axis], m)
            m = 1
        out.append(m)
    return tuple(out)


def resample_spacing(v, target_spacing=TARGET_SPACING, n_jobs=None):
    target = as_triple(target_spacing, "target_spacing", float)
    if not all(math.isfinite(t) and t > 0 for t in target):
        raise ValidationError(f"target spacing must be strictly positive, got {target}")
    check_volume(v)
    new_dims = resampled_dims(v.dims, v.spacing, target)
    scales = [t / s for s, t in zip(v.spacing, target)]
    vox = _trilinear(v.voxels, new_dims, scales, n_jobs or _default_jobs())
    return Volume(vox, target)


def resize(v, target_dims, n_jobs=None):
    target = as_triple(target_dims, "target_dims")
    if min(target) < 1:
        raise ValidationError(f"target dims must be positive, got {target}")
    check_volume(v)
    scales = [n / m for n, m in zip(v.dims, target)]
    vox = _trilinear(v.voxels, target, scales, n_jobs or _default_jobs())
    spacing = tuple(n * s / m for n, s, m in zip(v.dims, v.spacing, target))
    return Volume(vox, spacing)


def preprocess(v, profile=NORMAL, lo=HU_MIN, hi=HU_MAX, target_spacing=TARGET_SPACING, n_jobs=None):
    """Clip, normalize to [0, 1], resample to ``target_spacing``, resize to the profile dims."""
    profile = get_profile(profile)
    stages = (
        ("clip_hu", lambda x: clip_hu(x, lo, hi)),
        ("normalize_intensity", lambda x: normalize_intensity(x, lo, hi)),
        ("resample_spacing", lambda x: resample_spacing(x, target_spacing, n_jobs)),
        ("resize", lambda x: resize(x, profile.target_dims, n_jobs)),
    )
    out = v
    for name, fn in stages:
        try:
            out = fn(out)
        except Exception as exc:
            raise StageError(name, exc) from exc
    return out


class CTPreprocessor(BaseEstimator, TransformerMixin):
    """Stateless transformer applying :func:`preprocess` to a sequence of volumes.

    Parameters
    ----------
    profile : {"normal", "high", "micro"} or ResolutionProfile
    hu_window : (lo, hi) clip window in Hounsfield units.
    target_spacing : spacing in mm applied before resizing.
    n_jobs : worker threads across volumes; defaults to ``ARGUS_BENCH_THREADS``.
    """

    def __init__(self, profile="normal", hu_window=(HU_MIN, HU_MAX), target_spacing=TARGET_SPACING, n_jobs=None):
        self.profile = profile
        self.hu_window = hu_window
        self.target_spacing = target_spacing
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        self.profile_ = get_profile(self.profile)
        lo, hi = self.hu_window
        if not lo < hi:
            raise ValidationError(f"hu_window must satisfy lo < hi, got {self.hu_window}")
        return self

    def transform(self, X):
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "profile_")
        lo, hi = self.hu_window
        volumes = list(X)
        for v in volumes:
            check_volume(v, require_finite=False)

        def run(v):
            return preprocess(v, self.profile_, lo, hi, self.target_spacing, n_jobs=1)

        jobs = self.n_jobs or _default_jobs()
        if jobs > 1 and len(volumes) > 1:
            with ThreadPoolExecutor(jobs) as pool:
                return list(pool.map(run, volumes))
        return [run(v) for v in volumes]
