"""Forward passes of the micro 3D-ViT and its objectives, with analytic gradients.

Objectives
----------
``mae``    masked-token voxel reconstruction (MSE over masked tokens only)
``flip``   symmetric InfoNCE between masked-encoder image embeddings and text embeddings
``align``  encoder -> compression -> connector -> frozen-or-trainable language head,
           regressed onto a report's text embedding; stands in for the LLM loss
           of the connector training schedule
"""
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ..exceptions import NonFiniteError, TraceError, ValidationError
from ..tokens import TokenGrid, patchify, pooling_matrix, pos_embed_3d, sample_mask, shuffle_permutation
from ..volume import Volume
from . import autodiff as ad
from .params import EncoderConfig, ParameterSet

DEFAULT_TAU = 0.07


class _Graph:
    """Per-forward registry mapping tensor names to leaf nodes.

    ``stacked`` optionally swaps one tensor for a stack of K variants (shape
    ``(K, *shape)``); activations then carry a leading K axis and the loss comes
    out as a length-K vector. Finite differences use this to evaluate many
    perturbed coordinates in one vectorised pass.
    """

    def __init__(self, params, track=True, stacked=None):
        self.params = params
        self.track = track
        self.stacked = stacked
        self.leaves = {}

    def p(self, name):
        node = self.leaves.get(name)
        if node is None:
            if self.stacked is not None and self.stacked[0] == name:
                value = self.stacked[1]
                if value.ndim == 2:
                    # 1-D tensors broadcast over the token axis
                    value = value[:, None, :]
                node = ad.leaf(value, name=name)
            else:
                requires = self.track and name not in self.params.frozen
                node = ad.leaf(self.params[name], requires_grad=requires, name=name)
            self.leaves[name] = node
        return node

    def const(self, value):
        return ad.leaf(np.asarray(value, dtype=self.params.dtype))


@dataclass
class Trace:
    """A recorded forward pass; hand it to :func:`backward` exactly once."""

    loss_node: ad.Node
    leaves: dict
    params: object
    version: int
    outputs: dict = field(default_factory=dict)
    consumed: bool = False

    @property
    def loss(self):
        return float(self.loss_node.value)


@lru_cache(maxsize=32)
def _pos_table(grid_dims, d):
    return pos_embed_3d(grid_dims, d)


def _pos(cfg, dtype):
    return _pos_table(tuple(cfg.grid_dims), cfg.d_model).astype(dtype)


def as_token_array(x, cfg):
    """Patchified ``(n_tokens, token_dim)`` array for a Volume, TokenGrid or array."""
    if isinstance(x, Volume):
        if x.dims != cfg.volume_dims:
            raise ValidationError(f"volume dims {x.dims} do not match encoder input {cfg.volume_dims}")
        x = patchify(x, cfg.patch_dims)
    if isinstance(x, TokenGrid):
        if x.grid_dims != cfg.grid_dims:
            raise ValidationError(f"grid {x.grid_dims} does not match encoder grid {cfg.grid_dims}")
        x = x.data
    x = np.asarray(x)
    if x.shape != (cfg.n_tokens, cfg.token_dim):
        raise ValidationError(f"token array shape {x.shape} != ({cfg.n_tokens}, {cfg.token_dim})")
    return x


def _linear(G, x, prefix, bias=True):
    y = ad.matmul(x, G.p(f"{prefix}.w"))
    return ad.add(y, G.p(f"{prefix}.b")) if bias else y


def _swap_last(x):
    axes = list(range(x.value.ndim))
    axes[-2:] = axes[-1], axes[-2]
    return ad.transpose(x, tuple(axes))


def _attention(G, h, prefix, n_heads, probe):
    n, d = h.shape[-2:]
    dh = d // n_heads
    q_bias = G.p(f"{prefix}.q_bias")
    bias = ad.concat([q_bias, G.const(np.zeros(q_bias.shape)), G.p(f"{prefix}.v_bias")], axis=-1)
    qkv = ad.add(ad.matmul(h, G.p(f"{prefix}.qkv.w")), bias)
    lead = qkv.shape[:-2]
    L = len(lead)
    # (..., n, 3, H, dh) -> (..., 3, H, n, dh)
    qkv = ad.reshape(qkv, lead + (n, 3, n_heads, dh))
    qkv = ad.transpose(qkv, tuple(range(L)) + (L + 1, L + 2, L, L + 3))
    q, k, v = (ad.take(qkv, i, axis=L) for i in range(3))
    scores = ad.scale(ad.matmul(q, _swap_last(k)), 1.0 / math.sqrt(dh))
    attn = ad.softmax(scores, probe)
    out = ad.transpose(ad.matmul(attn, v), tuple(range(L)) + (L + 1, L, L + 2))
    return _linear(G, ad.reshape(out, lead + (n, d)), f"{prefix}.out")


def _block(G, x, prefix, n_heads, probe=None):
    h = ad.layer_norm(x, G.p(f"{prefix}.ln1.g"), G.p(f"{prefix}.ln1.b"))
    x = ad.add(x, _attention(G, h, f"{prefix}.attn", n_heads, probe))
    h = ad.layer_norm(x, G.p(f"{prefix}.ln2.g"), G.p(f"{prefix}.ln2.b"))
    h = _linear(G, ad.gelu(_linear(G, h, f"{prefix}.mlp.fc1")), f"{prefix}.mlp.fc2")
    return ad.add(x, h)


def _check_finite(node, layer):
    if not np.all(np.isfinite(node.value)):
        raise NonFiniteError(f"non-finite activation after encoder layer {layer}", layer=layer)


def _encode(G, tokens, visible, probe=None):
    cfg = G.params.config
    pos = _pos(cfg, G.params.dtype)
    x = _linear(G, G.const(tokens[visible]), "patch_embed")
    x = ad.add(x, G.const(pos[visible]))
    _check_finite(x, -1)
    for i in range(cfg.n_layers):
        x = _block(G, x, f"blocks.{i}", cfg.n_heads, probe)
        _check_finite(x, i)
    return ad.layer_norm(x, G.p("norm.g"), G.p("norm.b"))


def encode(tokens, params, visible=None, probe=None):
    """Encoder outputs ``(n_visible, d_model)`` for the visible tokens (all when ``visible`` is None).

    ``probe``, if a list, receives every self-attention probability tensor.
    """
    cfg = params.config
    tokens = as_token_array(tokens, cfg)
    visible = np.arange(cfg.n_tokens) if visible is None else np.asarray(visible, dtype=np.int64)
    return _encode(_Graph(params, track=False), tokens, visible, probe).value


def _resample(G, x, probe=None):
    d = x.shape[-1]
    q = _linear(G, G.p("resampler.queries"), "resampler.q")
    k = ad.matmul(x, G.p("resampler.k.w"))
    v = _linear(G, x, "resampler.v")
    attn = ad.softmax(ad.scale(ad.matmul(q, _swap_last(k)), 1.0 / math.sqrt(d)), probe)
    return ad.matmul(attn, v)


def perceiver_resample(tokens, params, probe=None):
    """Cross-attend the learned queries over ``tokens`` (n, d_model); returns ``(n_queries, d_model)``."""
    tokens = np.asarray(tokens, dtype=params.dtype)
    if tokens.ndim != 2 or tokens.shape[0] == 0:
        raise ValidationError("perceiver resampler needs a non-empty (n, d_model) token sequence")
    if tokens.shape[1] != params.config.d_model:
        raise ValidationError(f"token dim {tokens.shape[1]} != d_model {params.config.d_model}")
    G = _Graph(params, track=False)
    return _resample(G, G.const(tokens), probe).value


def _connector(G, x):
    h = _linear(G, x, "connector.fc1")
    if "connector.fc2.w" in G.params.tensors:
        h = _linear(G, ad.gelu(h), "connector.fc2")
    return h


def connector_forward(tokens, params, depth=None):
    """Per-token connector map to ``d_llm``: affine (depth 1) or affine-GELU-affine (depth 2)."""
    have = 2 if "connector.fc2.w" in params.tensors else 1
    if depth is not None and depth != have:
        raise ValidationError(f"parameters hold a depth-{have} connector, asked for depth {depth}")
    tokens = np.asarray(tokens, dtype=params.dtype)
    if tokens.ndim != 2 or tokens.shape[1] != params["connector.fc1.w"].shape[0]:
        raise ValidationError(f"connector expects (n, {params['connector.fc1.w'].shape[0]}) input, "
                              f"got {tokens.shape}")
    G = _Graph(params, track=False)
    return _connector(G, G.const(tokens)).value


def _compress(G, x):
    cfg = G.params.config
    if cfg.compression == "pixel_shuffle":
        lead = x.shape[:-2]
        perm = shuffle_permutation(cfg.grid_dims, cfg.d_model)
        flat = ad.take(ad.reshape(x, lead + (-1,)), perm, axis=-1)
        return ad.reshape(flat, lead + (cfg.n_tokens // 8, 8 * cfg.d_model))
    if cfg.compression == "avg_pool":
        return ad.matmul(G.const(pooling_matrix(cfg.grid_dims)), x)
    return _resample(G, x)


def _mean_of(nodes):
    total = nodes[0]
    for n in nodes[1:]:
        total = ad.add(total, n)
    return ad.scale(total, 1.0 / len(nodes))


def _finish(G, loss, outputs):
    return Trace(loss, G.leaves, G.params, G.params.version, outputs)


def _check_ratio(ratio):
    if not 0.0 < ratio < 1.0:
        raise ValidationError(f"mask ratio must lie strictly between 0 and 1, got {ratio}")


def _batch_seeds(seeds, n):
    """A list holds one mask seed per item; a scalar base seed expands to ``[seed, b]``."""
    if isinstance(seeds, list):
        if len(seeds) != n:
            raise ValidationError(f"got {len(seeds)} mask seeds for a batch of {n}")
        return seeds
    return [[int(seeds), b] for b in range(n)]


def _mae_one(G, tokens, target, mask):
    cfg = G.params.config
    vis, msk = mask.visible_indices, mask.masked_indices
    if vis.size == 0 or msk.size == 0:
        raise ValidationError("MAE needs at least one visible and one masked token")
    enc = _encode(G, tokens, vis)
    fill = ad.add(G.const(_pos(cfg, G.params.dtype)[msk]), G.p("mask_token"))
    order = np.argsort(np.concatenate([vis, msk]), kind="stable")
    full = ad.take(ad.concat([enc, fill]), order, axis=-2)
    dec = _block(G, full, "decoder", cfg.n_heads)
    dec = ad.layer_norm(dec, G.p("decoder_norm.g"), G.p("decoder_norm.b"))
    pred = _linear(G, dec, "head")
    loss = ad.mse(ad.take(pred, msk, axis=-2), target[msk])
    return loss, pred


def trace_mae(volumes, params, ratio=0.5, seeds=0, targets=None, track=True, _stacked=None):
    """MAE loss averaged over a batch. ``seeds``: one mask seed per volume, or a base seed."""
    _check_ratio(ratio)
    cfg = params.config
    toks = [as_token_array(v, cfg).astype(params.dtype) for v in volumes]
    targets = toks if targets is None else [as_token_array(t, cfg).astype(params.dtype) for t in targets]
    seeds = _batch_seeds(seeds, len(toks))
    G = _Graph(params, track, _stacked)
    losses, preds, masks = [], [], []
    for tok, tgt, s in zip(toks, targets, seeds):
        mask = sample_mask(cfg.n_tokens, ratio, s)
        loss, pred = _mae_one(G, tok, tgt, mask)
        losses.append(loss)
        preds.append(pred.value)
        masks.append(mask)
    return _finish(G, _mean_of(losses), {"reconstruction": preds, "masks": masks})


def mae_loss(volume, params, ratio=0.5, seed=0, target=None):
    """Masked reconstruction loss of one volume and the ``(n_tokens, token_dim)`` reconstruction.

    The mask is ``sample_mask(n_tokens, ratio, seed)``. ``target`` replaces the
    reconstruction target (defaults to the input itself).
    """
    tr = trace_mae([volume], params, ratio, [seed], None if target is None else [target], track=False)
    return tr.loss, tr.outputs["reconstruction"][0]


def _normalize_text(text_embs, dtype):
    t = np.asarray(text_embs, dtype=np.float64)
    if t.ndim != 2 or not np.all(np.isfinite(t)):
        raise ValidationError("text embeddings must be a finite (B, d_joint) array")
    norms = np.linalg.norm(t, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValidationError("cannot L2-normalise a zero-norm text embedding")
    return (t / norms).astype(dtype)


def _contrastive(G, img, txt, tau):
    logits = ad.scale(ad.matmul(img, G.const(txt.T)), 1.0 / tau)
    targets = np.arange(img.shape[-2])
    rows = ad.cross_entropy(logits, targets)
    cols = ad.cross_entropy(_swap_last(logits), targets)
    return ad.scale(ad.add(rows, cols), 0.5)


def contrastive_loss(image_embs, text_embs, tau=DEFAULT_TAU):
    """Symmetric InfoNCE on already-computed embeddings (both L2-normalised here)."""
    if tau <= 0:
        raise ValidationError("temperature must be positive")
    img = _normalize_text(image_embs, np.float64)
    txt = _normalize_text(text_embs, np.float64)
    if img.shape != txt.shape or img.shape[0] < 2:
        raise ValidationError("need matching (B, d) batches with B >= 2")
    G = _Graph(ParameterSet(EncoderConfig(dtype="float64"), {}), track=False)
    return float(_contrastive(G, G.const(img), txt, tau).value)


def trace_flip(volumes, text_embs, params, ratio=0.5, tau=DEFAULT_TAU, seeds=0, track=True, _stacked=None):
    _check_ratio(ratio)
    if tau <= 0:
        raise ValidationError("temperature must be positive")
    cfg = params.config
    toks = [as_token_array(v, cfg).astype(params.dtype) for v in volumes]
    if len(toks) < 2:
        raise ValidationError("FLIP needs a batch of at least 2 volumes")
    txt = _normalize_text(text_embs, params.dtype)
    if txt.shape != (len(toks), cfg.d_joint):
        raise ValidationError(f"text embeddings shape {txt.shape} != ({len(toks)}, {cfg.d_joint})")
    G = _Graph(params, track, _stacked)
    rows = []
    for tok, s in zip(toks, _batch_seeds(seeds, len(toks))):
        vis = sample_mask(cfg.n_tokens, ratio, s).visible_indices
        pooled = ad.mean(_encode(G, tok, vis), axis=-2, keepdims=True)
        rows.append(ad.matmul(pooled, G.p("proj.w")))
    img = ad.l2_normalize(ad.concat(rows))
    return _finish(G, _contrastive(G, img, txt, tau), {"image_embeddings": img.value})


def flip_loss(volumes, text_embs, params, ratio=0.5, tau=DEFAULT_TAU, seed=0):
    return trace_flip(volumes, text_embs, params, ratio, tau, seed, track=False).loss


def _align_one(G, tokens):
    cfg = G.params.config
    enc = _encode(G, tokens, np.arange(cfg.n_tokens))
    llm_tokens = _connector(G, _compress(G, enc))
    pooled = ad.mean(llm_tokens, axis=-2, keepdims=True)
    return ad.matmul(pooled, G.p("lm_head.w")), llm_tokens


def trace_align(volumes, text_embs, params, track=True, _stacked=None):
    cfg = params.config
    toks = [as_token_array(v, cfg).astype(params.dtype) for v in volumes]
    txt = np.asarray(text_embs, dtype=params.dtype)
    if txt.shape != (len(toks), cfg.d_joint):
        raise ValidationError(f"text embeddings shape {txt.shape} != ({len(toks)}, {cfg.d_joint})")
    G = _Graph(params, track, _stacked)
    losses, preds = [], []
    for tok, t in zip(toks, txt):
        pred, _ = _align_one(G, tok)
        losses.append(ad.mse(pred, t[None, :]))
        preds.append(pred.value[..., 0, :])
    return _finish(G, _mean_of(losses), {"predictions": np.stack(preds, axis=-2)})


def alignment_loss(volumes, text_embs, params):
    return trace_align(volumes, text_embs, params, track=False).loss


def visual_tokens(volume, params):
    """Compressed, connector-projected tokens ``(n_compressed, d_llm)`` for one volume."""
    G = _Graph(params, track=False)
    _, llm_tokens = _align_one(G, as_token_array(volume, params.config).astype(params.dtype))
    return llm_tokens.value


def predict_text_embedding(volumes, params):
    G = _Graph(params, track=False)
    out = [_align_one(G, as_token_array(v, params.config).astype(params.dtype))[0].value[0] for v in volumes]
    return np.array(out)


def backward(trace):
    """Analytic gradients ``{name: array}`` for every trainable tensor the traced loss touched."""
    if not isinstance(trace, Trace):
        raise TraceError(f"expected a Trace, got {type(trace).__name__}")
    if trace.consumed:
        raise TraceError("trace already consumed by a previous backward()")
    if trace.version != trace.params.version:
        raise TraceError("parameters changed since the forward pass")
    wanted = [n for n in trace.leaves.values() if n.requires_grad]
    grads = ad.backward(trace.loss_node, wanted)
    trace.consumed = True
    return {node.name: grads[node] for node in wanted}
