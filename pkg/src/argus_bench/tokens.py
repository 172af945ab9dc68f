"""Token lattices: patchification, 3D positional embeddings, compression and masking.

A :class:`TokenGrid` stores its tokens as an ``(n_tokens, d)`` array whose rows
run x-fastest over the ``(gx, gy, gz)`` lattice: row ``X + gx * (Y + gy * Z)``.
"""
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import NonFiniteError, ValidationError
from .utils import as_triple, round_half_away
from .volume import Volume, check_volume


@dataclass(frozen=True, eq=False)
class TokenGrid:
    grid_dims: tuple
    data: np.ndarray

    def __post_init__(self):
        dims = as_triple(self.grid_dims, "grid_dims")
        if min(dims) < 1:
            raise ValidationError(f"grid dims must be positive, got {dims}")
        data = np.asarray(self.data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float32)
        n = dims[0] * dims[1] * dims[2]
        if data.ndim != 2 or data.shape[0] != n or data.shape[1] < 1:
            raise ValidationError(f"data must have shape ({n}, d) for grid {dims}, got {data.shape}")
        object.__setattr__(self, "grid_dims", dims)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, grid):
        """Build from a ``(gx, gy, gz, d)`` array indexed ``[x, y, z]``."""
        grid = np.asarray(grid)
        gx, gy, gz, d = grid.shape
        return cls((gx, gy, gz), grid.transpose(2, 1, 0, 3).reshape(gx * gy * gz, d))

    @property
    def n_tokens(self):
        return self.data.shape[0]

    @property
    def token_dim(self):
        return self.data.shape[1]

    def as_array(self):
        gx, gy, gz = self.grid_dims
        return self.data.reshape(gz, gy, gx, -1).transpose(2, 1, 0, 3)

    def __eq__(self, other):
        if not isinstance(other, TokenGrid):
            return NotImplemented
        return self.grid_dims == other.grid_dims and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"TokenGrid(grid_dims={self.grid_dims}, token_dim={self.token_dim})"


@dataclass(frozen=True, eq=False)
class MaskSet:
    n_tokens: int
    masked_indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.masked_indices, dtype=np.int64).reshape(-1)
        if idx.size and (idx[0] < 0 or idx[-1] >= self.n_tokens or np.any(np.diff(idx) <= 0)):
            raise ValidationError("masked indices must be strictly increasing and within [0, n_tokens)")
        object.__setattr__(self, "masked_indices", idx)

    @property
    def visible_indices(self):
        keep = np.ones(self.n_tokens, dtype=bool)
        keep[self.masked_indices] = False
        return np.flatnonzero(keep)

    def __len__(self):
        return int(self.masked_indices.size)

    def __eq__(self, other):
        if not isinstance(other, MaskSet):
            return NotImplemented
        return self.n_tokens == other.n_tokens and np.array_equal(self.masked_indices, other.masked_indices)


def check_token_grid(g, require_finite=True):
    if not isinstance(g, TokenGrid):
        raise ValidationError(f"expected a TokenGrid, got {type(g).__name__}")
    if require_finite and not np.all(np.isfinite(g.data)):
        raise NonFiniteError("token grid contains non-finite entries")
    return g


def _check_even(grid_dims):
    for axis, n in enumerate(grid_dims):
        if n % 2:
            raise ValidationError(f"grid axis {'xyz'[axis]} has odd size {n}; factor-2 compression needs even dims")


def patchify(v, patch_dims):
    check_volume(v)
    px, py, pz = as_triple(patch_dims, "patch_dims")
    nx, ny, nz = v.dims
    for axis, (n, p) in enumerate(zip((nx, ny, nz), (px, py, pz))):
        if p < 1 or n % p:
            raise ValidationError(f"volume axis {'xyz'[axis]} size {n} not divisible by patch size {p}")
    gx, gy, gz = nx // px, ny // py, nz // pz
    blocks = v.voxels.reshape(gx, px, gy, py, gz, pz)
    # rows: token order (Z, Y, X); columns: within-block order (pz, py, px) -> x-fastest both ways
    data = blocks.transpose(4, 2, 0, 5, 3, 1).reshape(gx * gy * gz, px * py * pz)
    return TokenGrid((gx, gy, gz), np.ascontiguousarray(data))


def unpatchify(g, patch_dims, spacing=(1.0, 1.0, 1.0)):
    check_token_grid(g, require_finite=False)
    px, py, pz = as_triple(patch_dims, "patch_dims")
    if g.token_dim != px * py * pz:
        raise ValidationError(f"token_dim {g.token_dim} does not match patch volume {px}*{py}*{pz}={px * py * pz}")
    gx, gy, gz = g.grid_dims
    blocks = g.data.reshape(gz, gy, gx, pz, py, px).transpose(2, 5, 1, 4, 0, 3)
    return Volume(blocks.reshape(gx * px, gy * py, gz * pz), spacing)


def pos_embed_3d(grid_dims, d):
    """Parameter-free 3D sinusoidal embedding, one row per token (x-fastest).

    ``d`` is split into three equal blocks for the x, y and z coordinates. Each
    block interleaves ``[sin(w_0 p), cos(w_0 p), sin(w_1 p), cos(w_1 p), ...]``
    with frequencies spaced geometrically from 1 down to 1/10000.
    """
    gx, gy, gz = as_triple(grid_dims, "grid_dims")
    if d < 6 or d % 6:
        raise ValidationError(f"embedding dim must be a positive multiple of 6, got {d}")
    n_freq = d // 6
    if n_freq == 1:
        freqs = np.ones(1)
    else:
        freqs = 10000.0 ** (-np.arange(n_freq) / (n_freq - 1))

    def axis_block(coords):
        angles = coords[:, None].astype(np.float64) * freqs[None, :]
        block = np.empty((coords.size, 2 * n_freq))
        block[:, 0::2] = np.sin(angles)
        block[:, 1::2] = np.cos(angles)
        return block

    z, y, x = np.meshgrid(np.arange(gz), np.arange(gy), np.arange(gx), indexing="ij")
    return np.concatenate([axis_block(x.ravel()), axis_block(y.ravel()), axis_block(z.ravel())], axis=1)


def pixel_shuffle_3d(g):
    """Halve every grid axis, concatenating each 2x2x2 neighbourhood into one token.

    Sub-token ``o = dz*4 + dy*2 + dx`` occupies channels ``[o*d, (o+1)*d)``.
    """
    check_token_grid(g, require_finite=False)
    _check_even(g.grid_dims)
    gx, gy, gz = g.grid_dims
    d = g.token_dim
    a = g.as_array().reshape(gx // 2, 2, gy // 2, 2, gz // 2, 2, d)
    a = a.transpose(0, 2, 4, 5, 3, 1, 6).reshape(gx // 2, gy // 2, gz // 2, 8 * d)
    return TokenGrid.from_array(a)


def pixel_unshuffle_3d(g):
    check_token_grid(g, require_finite=False)
    if g.token_dim % 8:
        raise ValidationError(f"token_dim {g.token_dim} is not divisible by 8")
    hx, hy, hz = g.grid_dims
    d = g.token_dim // 8
    a = g.as_array().reshape(hx, hy, hz, 2, 2, 2, d)  # (X, Y, Z, dz, dy, dx, d)
    a = a.transpose(0, 5, 1, 4, 2, 3, 6).reshape(2 * hx, 2 * hy, 2 * hz, d)
    return TokenGrid.from_array(a)


def avg_pool_3d(g):
    check_token_grid(g, require_finite=False)
    _check_even(g.grid_dims)
    gx, gy, gz = g.grid_dims
    a = g.as_array().reshape(gx // 2, 2, gy // 2, 2, gz // 2, 2, -1).astype(np.float64)
    pooled = a.mean(axis=(1, 3, 5))
    return TokenGrid.from_array(pooled.astype(g.data.dtype))


def shuffle_permutation(grid_dims, d):
    """Flat gather index such that ``x.ravel()[perm]`` is the pixel-shuffled payload."""
    gx, gy, gz = as_triple(grid_dims, "grid_dims")
    idx = np.arange(gx * gy * gz * d, dtype=np.int64).reshape(-1, d)
    return pixel_shuffle_3d(TokenGrid((gx, gy, gz), idx.astype(np.float64))).data.astype(np.int64).ravel()


def pooling_matrix(grid_dims):
    """``(n/8, n)`` matrix whose product with token rows equals :func:`avg_pool_3d`."""
    gx, gy, gz = as_triple(grid_dims, "grid_dims")
    _check_even((gx, gy, gz))
    n = gx * gy * gz
    eye = TokenGrid((gx, gy, gz), np.eye(n))
    return avg_pool_3d(eye).data.copy()


def sample_mask(n_tokens, ratio, seed):
    """Draw ``round(ratio * n_tokens)`` distinct token indices uniformly, deterministic in ``seed``."""
    if not 0.0 <= ratio <= 1.0:
        raise ValidationError(f"mask ratio must lie in [0, 1], got {ratio}")
    k = round_half_away(ratio * n_tokens)
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(n_tokens)[:k]
    return MaskSet(n_tokens, np.sort(chosen))


COMPRESSIONS = ("pixel_shuffle", "avg_pool", "perceiver")


def compressed_token_count(n_tokens, compression, n_queries=64):
    if compression in ("pixel_shuffle", "avg_pool"):
        return n_tokens // 8
    if compression == "perceiver":
        return n_queries
    raise ValidationError(f"unknown compression {compression!r}; valid: {list(COMPRESSIONS)}")


class Patchifier(BaseEstimator, TransformerMixin):
    """Turn volumes into token grids of non-overlapping blocks."""

    def __init__(self, patch_dims=(16, 16, 8)):
        self.patch_dims = patch_dims

    def fit(self, X=None, y=None):
        self.patch_dims_ = as_triple(self.patch_dims, "patch_dims")
        return self

    def transform(self, X):
        return [patchify(v, self.patch_dims) for v in X]

    def inverse_transform(self, X):
        return [unpatchify(g, self.patch_dims) for g in X]


class TokenCompressor(BaseEstimator, TransformerMixin):
    """Factor-2 token compression by 3D pixel shuffle or 3D average pooling."""

    def __init__(self, method="pixel_shuffle"):
        self.method = method

    def fit(self, X=None, y=None):
        if self.method not in ("pixel_shuffle", "avg_pool"):
            raise ValidationError(f"unknown compression {self.method!r}; valid: ['avg_pool', 'pixel_shuffle']")
        return self

    def transform(self, X):
        fn = pixel_shuffle_3d if self.method == "pixel_shuffle" else avg_pool_3d
        return [fn(g) for g in X]

    def inverse_transform(self, X):
        if self.method != "pixel_shuffle":
            raise ValidationError("average pooling is not invertible")
        return [pixel_unshuffle_3d(g) for g in X]
