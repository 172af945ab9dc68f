"""Synthetic volume/report pairs: bright ellipsoids in distinct octants, with templated reports."""
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ValidationError
from .utils import as_triple
from .volume import Volume

BACKGROUND = 0.1
NO_LESION_REPORT = "No focal lesions identified across all regions."
LESION_TEMPLATES = (
    "A hyperdense focal lesion is seen in the {region}.",
    "There is a well-defined bright nodule within the {region}.",
    "A rounded high-attenuation focus is present in the {region}.",
)
CLOSING = "The remaining regions appear unremarkable without other focal abnormality."


def octant_name(octant):
    """Region phrase for an octant ``(ix, iy, iz)`` with each index 0 (low half) or 1 (high half)."""
    ix, iy, iz = octant
    vertical = "upper" if iz else "lower"
    side = "right" if ix else "left"
    depth = "posterior" if iy else "anterior"
    return f"{vertical} {side} {depth} region"


OCTANTS = tuple((ix, iy, iz) for iz in (1, 0) for ix in (0, 1) for iy in (0, 1))


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings.

    ``radius_range`` is the per-axis ellipsoid semi-axis in voxels and ``margin``
    the minimum gap between a lesion and its octant's walls.
    """

    n_samples: int = 8
    dims: tuple = (32, 32, 32)
    spacing: tuple = (1.0, 1.0, 4.0)
    lesion_count: tuple = (1, 3)
    intensity: tuple = (0.9, 0.9)
    radius_range: tuple = (2.0, 4.0)
    margin: int = 1
    templates: tuple = LESION_TEMPLATES
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", as_triple(self.dims, "dims"))
        object.__setattr__(self, "spacing", as_triple(self.spacing, "spacing", float))
        lo, hi = self.lesion_count
        if self.n_samples < 0:
            raise ValidationError("n_samples must be >= 0")
        if not 0 <= lo <= hi <= len(OCTANTS):
            raise ValidationError(f"lesion_count must satisfy 0 <= lo <= hi <= 8, got {self.lesion_count}")
        if not 0 < self.radius_range[0] <= self.radius_range[1]:
            raise ValidationError(f"invalid radius range {self.radius_range}")
        if not 0.5 < self.intensity[0] <= self.intensity[1] <= 1.0:
            raise ValidationError("lesion intensity must lie in (0.5, 1] to stand out from the background")
        need = 2 * (self.radius_range[1] + self.margin)
        if hi and any(d / 2 < need for d in self.dims):
            raise ValidationError(f"dims {self.dims} too small: each octant needs {need} voxels per axis "
                                  f"for lesions of radius up to {self.radius_range[1]}")
        if not self.templates:
            raise ValidationError("template set is empty")

    def to_dict(self):
        out = asdict(self)
        for key in ("dims", "spacing", "lesion_count", "intensity", "radius_range", "templates"):
            out[key] = list(out[key])
        return out

    @classmethod
    def from_dict(cls, obj):
        obj = dict(obj)
        for key in ("dims", "spacing", "lesion_count", "intensity", "radius_range", "templates"):
            if key in obj:
                obj[key] = tuple(obj[key])
        return cls(**obj)


@dataclass(frozen=True)
class Lesion:
    octant: tuple
    center: tuple
    radii: tuple
    intensity: float


def render(dims, lesions, background=BACKGROUND):
    grid = np.indices(dims, dtype=np.float64) + 0.5
    vox = np.full(dims, background, dtype=np.float32)
    for les in lesions:
        r2 = sum(((grid[a] - les.center[a]) / les.radii[a]) ** 2 for a in range(3))
        vox[r2 <= 1.0] = les.intensity
    return vox


def _sample_lesions(spec, rng):
    k = int(rng.integers(spec.lesion_count[0], spec.lesion_count[1] + 1))
    picks = sorted(rng.choice(len(OCTANTS), size=k, replace=False))
    lesions = []
    for o in picks:
        octant = OCTANTS[o]
        radii = tuple(float(r) for r in rng.uniform(*spec.radius_range, size=3))
        center = []
        for a in range(3):
            half = spec.dims[a] / 2
            lo = octant[a] * half + spec.margin + radii[a]
            hi = (octant[a] + 1) * half - spec.margin - radii[a]
            center.append(float(rng.uniform(lo, hi)))
        lesions.append(Lesion(octant, tuple(center), radii, float(rng.uniform(*spec.intensity))))
    return lesions


def write_report(lesions, templates, rng):
    if not lesions:
        return NO_LESION_REPORT
    sentences = [templates[int(rng.integers(len(templates)))].format(region=octant_name(l.octant))
                 for l in lesions]
    if len(lesions) < len(OCTANTS):
        sentences.append(CLOSING)
    return " ".join(sentences)


def generate(spec):
    """Yield ``(sample_id, volume, report, lesions)`` for every sample; volumes hold intensities in [0, 1]."""
    width = max(4, len(str(max(spec.n_samples - 1, 0))))
    for i in range(spec.n_samples):
        rng = np.random.default_rng([spec.seed, i])
        lesions = _sample_lesions(spec, rng)
        vol = Volume(render(spec.dims, lesions), spec.spacing)
        yield f"synth_{i:0{width}d}", vol, write_report(lesions, spec.templates, rng), lesions


def to_hu(volume, lo=-1000.0, hi=1000.0):
    """Map [0, 1] intensities onto the HU window so preprocessing recovers them."""
    return Volume(volume.voxels * np.float32(hi - lo) + np.float32(lo), volume.spacing)
