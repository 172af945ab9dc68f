"""Encoder configuration, named parameter tensors with freeze flags, and the ``.avt`` checkpoint format.

Checkpoint layout (little-endian): magic ``AVT1``; u32 length + UTF-8 JSON
metadata (config, seed, frozen names); u32 entry count; then per entry: u16
name length, name, u8 dtype code (0 = f32, 1 = f64), u8 ndim, u32 shape[ndim],
raw payload.
"""
import fnmatch
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..exceptions import BadMagicError, FormatError, TruncatedFileError, ValidationError
from ..tokens import COMPRESSIONS
from ..utils import as_triple

AVT_MAGIC = b"AVT1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}

ENCODER_PATTERNS = ("patch_embed.*", "blocks.*", "norm.*")
MAE_PATTERNS = ("mask_token", "decoder.*", "decoder_norm.*", "head.*")
FLIP_PATTERNS = ("proj.*",)
RESAMPLER_PATTERNS = ("resampler.*",)
CONNECTOR_PATTERNS = ("connector.*",)
LM_HEAD_PATTERNS = ("lm_head.*",)


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 24
    n_layers: int = 2
    n_heads: int = 2
    mlp_ratio: int = 2
    patch_dims: tuple = (4, 4, 4)
    grid_dims: tuple = (2, 2, 2)
    d_joint: int = 8
    d_llm: int = 16
    n_queries: int = 64
    compression: str = "pixel_shuffle"
    connector_depth: int = 2
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "patch_dims", as_triple(self.patch_dims, "patch_dims"))
        object.__setattr__(self, "grid_dims", as_triple(self.grid_dims, "grid_dims"))
        ints = ("d_model", "n_layers", "n_heads", "mlp_ratio", "d_joint", "d_llm", "n_queries")
        for name in ints:
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if min(self.patch_dims) < 1 or min(self.grid_dims) < 1:
            raise ValidationError("patch and grid dims must be >= 1")
        if self.d_model % self.n_heads:
            raise ValidationError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.d_model % 6:
            raise ValidationError(f"d_model {self.d_model} must be divisible by 6 for the 3D positional embedding")
        if self.compression not in COMPRESSIONS:
            raise ValidationError(f"unknown compression {self.compression!r}; valid: {list(COMPRESSIONS)}")
        if self.compression != "perceiver" and any(g % 2 for g in self.grid_dims):
            raise ValidationError(f"{self.compression} needs even grid dims, got {self.grid_dims}")
        if self.connector_depth not in (1, 2):
            raise ValidationError(f"connector depth must be 1 or 2, got {self.connector_depth}")
        if self.dtype not in ("float32", "float64"):
            raise ValidationError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def token_dim(self):
        px, py, pz = self.patch_dims
        return px * py * pz

    @property
    def n_tokens(self):
        gx, gy, gz = self.grid_dims
        return gx * gy * gz

    @property
    def volume_dims(self):
        return tuple(g * p for g, p in zip(self.grid_dims, self.patch_dims))

    @property
    def connector_in(self):
        return 8 * self.d_model if self.compression == "pixel_shuffle" else self.d_model

    def replace(self, **changes):
        return EncoderConfig(**{**asdict(self), **changes})

    def to_dict(self):
        out = asdict(self)
        out["patch_dims"] = list(self.patch_dims)
        out["grid_dims"] = list(self.grid_dims)
        return out

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)


def parameter_shapes(cfg):
    """Ordered ``{name: shape}`` for every tensor of the model."""
    d, h = cfg.d_model, cfg.mlp_ratio * cfg.d_model
    shapes = {"patch_embed.w": (cfg.token_dim, d), "patch_embed.b": (d,)}

    def block(prefix):
        # no key bias: it shifts every score in a row equally and has zero gradient
        return {
            f"{prefix}.ln1.g": (d,), f"{prefix}.ln1.b": (d,),
            f"{prefix}.attn.qkv.w": (d, 3 * d), f"{prefix}.attn.q_bias": (d,), f"{prefix}.attn.v_bias": (d,),
            f"{prefix}.attn.out.w": (d, d), f"{prefix}.attn.out.b": (d,),
            f"{prefix}.ln2.g": (d,), f"{prefix}.ln2.b": (d,),
            f"{prefix}.mlp.fc1.w": (d, h), f"{prefix}.mlp.fc1.b": (h,),
            f"{prefix}.mlp.fc2.w": (h, d), f"{prefix}.mlp.fc2.b": (d,),
        }

    for i in range(cfg.n_layers):
        shapes.update(block(f"blocks.{i}"))
    shapes.update({"norm.g": (d,), "norm.b": (d,), "mask_token": (d,)})
    shapes.update(block("decoder"))
    shapes.update({"decoder_norm.g": (d,), "decoder_norm.b": (d,),
                   "head.w": (d, cfg.token_dim), "head.b": (cfg.token_dim,),
                   "proj.w": (d, cfg.d_joint)})
    shapes.update({"resampler.queries": (cfg.n_queries, d),
                   "resampler.q.w": (d, d), "resampler.q.b": (d,),
                   "resampler.k.w": (d, d),
                   "resampler.v.w": (d, d), "resampler.v.b": (d,)})
    if cfg.connector_depth == 1:
        shapes.update({"connector.fc1.w": (cfg.connector_in, cfg.d_llm), "connector.fc1.b": (cfg.d_llm,)})
    else:
        shapes.update({"connector.fc1.w": (cfg.connector_in, cfg.d_llm), "connector.fc1.b": (cfg.d_llm,),
                       "connector.fc2.w": (cfg.d_llm, cfg.d_llm), "connector.fc2.b": (cfg.d_llm,)})
    shapes["lm_head.w"] = (cfg.d_llm, cfg.d_joint)
    return shapes


def _init_kind(name):
    leaf = name.rsplit(".", 1)[-1]
    if name.endswith(".g"):
        return "ones"
    if leaf in ("b", "q_bias", "v_bias"):
        return "zeros"
    return "normal"


def _truncated_normal(rng, shape, std=0.02):
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


class ParameterSet:
    """Named tensors plus per-tensor freeze flags.

    ``version`` increases on every in-place update so stale traces are detected.
    """

    def __init__(self, config, tensors, frozen=(), seed=None):
        self.config = config
        self.tensors = dict(tensors)
        unknown = set(frozen) - set(self.tensors)
        if unknown:
            raise ValidationError(f"unknown tensors in frozen set: {sorted(unknown)}")
        self.frozen = set(frozen)
        self.seed = seed
        self.version = 0

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def resolve(self, patterns):
        """Tensor names matched by any glob pattern; raises on a pattern that matches nothing."""
        if isinstance(patterns, str):
            patterns = (patterns,)
        names = []
        for pat in patterns:
            hits = [n for n in self.tensors if fnmatch.fnmatchcase(n, pat)]
            if not hits:
                raise ValidationError(f"pattern {pat!r} matches no tensor")
            names.extend(h for h in hits if h not in names)
        return names

    def trainable(self):
        return [n for n in self.tensors if n not in self.frozen]

    def freeze(self, patterns="*"):
        self.frozen.update(self.resolve(patterns))
        return self

    def unfreeze(self, patterns="*"):
        self.frozen.difference_update(self.resolve(patterns))
        return self

    def set_trainable(self, patterns):
        self.frozen = set(self.tensors) - set(self.resolve(patterns))
        return self

    def copy(self):
        out = ParameterSet(self.config, {k: v.copy() for k, v in self.tensors.items()}, self.frozen, self.seed)
        return out

    def astype(self, dtype):
        dtype = np.dtype(dtype)
        cfg = self.config.replace(dtype=dtype.name)
        return ParameterSet(cfg, {k: v.astype(dtype) for k, v in self.tensors.items()}, self.frozen, self.seed)

    def n_parameters(self):
        return sum(v.size for v in self.tensors.values())

    def bump(self):
        self.version += 1


def init_params(cfg, seed=0):
    """Truncated N(0, 0.02) weights, zero biases, unit layer-norm gains; deterministic in ``seed``."""
    dtype = np.dtype(cfg.dtype)
    tensors = {}
    for i, (name, shape) in enumerate(parameter_shapes(cfg).items()):
        kind = _init_kind(name)
        if kind == "ones":
            tensors[name] = np.ones(shape, dtype=dtype)
        elif kind == "zeros":
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            rng = np.random.default_rng([seed, i])
            tensors[name] = _truncated_normal(rng, shape).astype(dtype)
    return ParameterSet(cfg, tensors, seed=seed)


def family_patterns(family):
    return {
        "encoder": ENCODER_PATTERNS, "mae": MAE_PATTERNS, "flip": FLIP_PATTERNS,
        "resampler": RESAMPLER_PATTERNS, "connector": CONNECTOR_PATTERNS, "lm_head": LM_HEAD_PATTERNS,
    }[family]


def save_checkpoint(params, path):
    meta = json.dumps({"config": params.config.to_dict(), "seed": params.seed,
                       "frozen": sorted(params.frozen)}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(AVT_MAGIC)
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<I", len(params.tensors)))
        for name, arr in params.tensors.items():
            raw = name.encode()
            code = _CODES[arr.dtype]
            fh.write(struct.pack("<H", len(raw)) + raw + struct.pack("<BB", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def load_checkpoint(path):
    buf = Path(path).read_bytes()
    if buf[:4] != AVT_MAGIC:
        raise BadMagicError(f"{path}: bad magic (expected {AVT_MAGIC!r})")
    pos = 4

    def read(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise TruncatedFileError(f"{path}: truncated checkpoint")
        out = struct.unpack_from(fmt, buf, pos)
        pos += size
        return out

    (meta_len,) = read("<I")
    if pos + meta_len > len(buf):
        raise TruncatedFileError(f"{path}: truncated metadata")
    try:
        meta = json.loads(buf[pos:pos + meta_len])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed metadata") from exc
    pos += meta_len
    (count,) = read("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = read("<H")
        name = buf[pos:pos + name_len].decode()
        pos += name_len
        code, ndim = read("<BB")
        if code not in _DTYPES:
            raise FormatError(f"{path}: unknown dtype code {code} for {name}")
        shape = read(f"<{ndim}I")
        nbytes = int(np.prod(shape, dtype=np.int64)) * _DTYPES[code].itemsize
        if pos + nbytes > len(buf):
            raise TruncatedFileError(f"{path}: truncated payload for {name}")
        arr = np.frombuffer(buf, dtype=_DTYPES[code], count=nbytes // _DTYPES[code].itemsize, offset=pos)
        tensors[name] = arr.reshape(shape).astype(_DTYPES[code].newbyteorder("="))
        pos += nbytes
    cfg = EncoderConfig.from_dict(meta["config"])
    return ParameterSet(cfg, tensors, meta.get("frozen", ()), meta.get("seed"))


def diff_checkpoints(a, b):
    """Names of tensors whose bytes differ between two parameter sets."""
    if set(a.tensors) != set(b.tensors):
        raise ValidationError("parameter sets hold different tensor names")
    return sorted(n for n in a.tensors if a[n].tobytes() != b[n].tobytes())
