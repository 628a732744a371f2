"""Toy end-to-end model: CNN encoders, text-conditioned change-scan stack,
question fusion, MLP answer head. All gradients are hand-chained.

Pre-event input is 3-channel, post-event is single-channel replicated to
three. Each image passes through the same 4-block CNN architecture
(3->16->32->64->128, two 3x3 convs + BN + ReLU per block, 2x2 max-pool), so a
HxW input yields (H/16)*(W/16) tokens of width 128. Scan blocks update both
streams residually; the last block's outputs are mean-pooled, summed, fused
with the question embedding, and classified.
"""
from __future__ import annotations

import re
import zlib
from dataclasses import dataclass

import numpy as np

from .conditioning import (
    ConditioningWeights,
    init_conditioning_weights,
    predict_params,
    predict_params_backward,
)
from .nn import BatchNorm2d, Conv2d, Linear, MaxPool2x2, ReLU
from .scan import change_scan_backward, change_scan_fast
from .templates import ANSWER_VOCABULARY

CNN_CHANNEL_PLAN = (3, 16, 32, 64, 128)
FEATURE_DIM = CNN_CHANNEL_PLAN[-1]
FUSION_MODES = ("mul", "sum", "concat", "sub", "nsub")


@dataclass
class ModelConfig:
    state_size: int = 8
    layers: int = 2
    vocab_size: int = len(ANSWER_VOCABULARY)
    fusion: str = "mul"
    lr: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 32
    epochs: int = 5
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 5
    head_hidden: int = 256
    text_buckets: int = 256
    tied_streams: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"fusion must be one of {FUSION_MODES}")


_TOKEN_RE = re.compile(r"[a-z0-9%]+")


class HashedBagEmbedder:
    """Hashed bag-of-tokens text embedding with a learned table.

    Deterministic for a fixed vocabulary seed: tokens hash (crc32) into
    buckets and the embedding is the mean of their table rows.
    """

    def __init__(self, dim: int, buckets: int, rng: np.random.Generator,
                 vocab_seed: int = 0):
        self.table = rng.normal(0.0, 1.0, size=(buckets, dim))
        self.gtable = np.zeros_like(self.table)
        self.buckets = buckets
        self.vocab_seed = vocab_seed
        self._cache = None

    def bucket_ids(self, text: str) -> list[int]:
        tokens = _TOKEN_RE.findall(text.lower())
        salt = f"{self.vocab_seed}:".encode()
        return [zlib.crc32(salt + t.encode()) % self.buckets for t in tokens]

    def forward(self, texts: list[str]) -> np.ndarray:
        # sum / sqrt(k) keeps the embedding near unit scale for any length
        ids = [self.bucket_ids(t) for t in texts]
        out = np.zeros((len(texts), self.table.shape[1]), dtype=self.table.dtype)
        for i, row in enumerate(ids):
            if row:
                out[i] = self.table[row].sum(axis=0) / np.sqrt(len(row))
        self._cache = ids
        return out

    def backward(self, dout: np.ndarray) -> None:
        ids = self._cache
        self._cache = None
        self.gtable[:] = 0.0
        for i, row in enumerate(ids):
            if row:
                g = dout[i] / np.sqrt(len(row))
                for bucket in row:
                    self.gtable[bucket] += g

    def named_params(self, prefix: str):
        yield f"{prefix}.table", self.table, lambda: self.gtable


class CnnEncoder:
    """Four conv blocks, spatial /16, 128 output channels."""

    def __init__(self, rng: np.random.Generator):
        self.layers = []
        for cin, cout in zip(CNN_CHANNEL_PLAN[:-1], CNN_CHANNEL_PLAN[1:]):
            self.layers += [
                Conv2d(cin, cout, rng), BatchNorm2d(cout), ReLU(),
                Conv2d(cout, cout, rng), BatchNorm2d(cout), ReLU(),
                MaxPool2x2(),
            ]

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        for layer in self.layers:
            if isinstance(layer, BatchNorm2d):
                x = layer.forward(x, train)
            else:
                x = layer.forward(x)
        return x

    def backward(self, dout: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def named_params(self, prefix: str):
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv2d):
                yield f"{prefix}.{i}.w", layer.w, (lambda l=layer: l.gw)
                yield f"{prefix}.{i}.b", layer.b, (lambda l=layer: l.gb)
            elif isinstance(layer, BatchNorm2d):
                yield f"{prefix}.{i}.gamma", layer.gamma, (lambda l=layer: l.ggamma)
                yield f"{prefix}.{i}.beta", layer.beta, (lambda l=layer: l.gbeta)


def fuse(v: np.ndarray, q: np.ndarray, mode: str):
    """Combine vision vector and question embedding; returns (out, cache)."""
    if mode == "mul":
        return v * q, (v, q)
    if mode == "sum":
        return v + q, None
    if mode == "sub":
        return v - q, None
    if mode == "concat":
        return np.concatenate([v, q], axis=1), v.shape[1]
    if mode == "nsub":
        rv = np.sqrt((v * v).sum(axis=1, keepdims=True) + 1e-12)
        rq = np.sqrt((q * q).sum(axis=1, keepdims=True) + 1e-12)
        return v / rv - q / rq, (v, q, rv, rq)
    raise ValueError(f"unknown fusion mode {mode!r}")


def fuse_backward(dout: np.ndarray, mode: str, cache):
    if mode == "mul":
        v, q = cache
        return dout * q, dout * v
    if mode == "sum":
        return dout, dout.copy()
    if mode == "sub":
        return dout, -dout
    if mode == "concat":
        d = cache
        return dout[:, :d], dout[:, d:]
    if mode == "nsub":
        v, q, rv, rq = cache
        dv = dout / rv - v * (v * dout).sum(axis=1, keepdims=True) / rv ** 3
        dq = -(dout / rq - q * (q * dout).sum(axis=1, keepdims=True) / rq ** 3)
        return dv, dq
    raise ValueError(f"unknown fusion mode {mode!r}")


def _rmsnorm(f: np.ndarray, eps: float = 1e-8):
    """Token-wise RMS normalization over channels; returns (out, cache).

    Keeps the residual stream's scale stable between blocks; has no learned
    parameters, so equal streams stay equal.
    """
    r = np.sqrt(np.mean(f * f, axis=-1, keepdims=True) + eps)
    s = f / r
    return s, (s, r)


def _rmsnorm_backward(ds: np.ndarray, cache) -> np.ndarray:
    s, r = cache
    d = s.shape[-1]
    dot = np.sum(s * ds, axis=-1, keepdims=True)
    return (ds - s * dot / d) / r


@dataclass
class _LayerCache:
    params: object
    pair: object
    cond_cache: dict
    norm_pre: tuple | None
    norm_post: tuple | None


class ToyModel:
    """Assembled pipeline with manual backward and Adam-ready parameters."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.cnn_pre = CnnEncoder(rng)
        self.cnn_post = self.cnn_pre if config.tied_streams else CnnEncoder(rng)
        self.q_embedder = HashedBagEmbedder(FEATURE_DIM, config.text_buckets, rng,
                                            vocab_seed=config.seed)
        self.d_embedder = HashedBagEmbedder(FEATURE_DIM, config.text_buckets, rng,
                                            vocab_seed=config.seed + 1)
        self.blocks: list[ConditioningWeights] = [
            init_conditioning_weights(FEATURE_DIM, config.state_size, rng,
                                      tied=config.tied_streams)
            for _ in range(config.layers)
        ]
        head_in = 2 * FEATURE_DIM if config.fusion == "concat" else FEATURE_DIM
        self.head1 = Linear(head_in, config.head_hidden, rng)
        self.head_relu = ReLU()
        self.head2 = Linear(config.head_hidden, config.vocab_size, zero_init=True)
        self._cache = None
        self.dtype = np.float64

    def astype(self, dtype) -> "ToyModel":
        """Cast every parameter and running stat; float32 is the training mode."""
        self.dtype = np.dtype(dtype).type
        objs = list(self.cnn_pre.layers) + list(self.cnn_post.layers) + [
            self.q_embedder, self.d_embedder, self.head1, self.head2]
        for obj in objs:
            for attr, val in list(obj.__dict__.items()):
                if isinstance(val, np.ndarray):
                    setattr(obj, attr, val.astype(self.dtype))
        for weights in self.blocks:
            weights.a_log = weights.a_log.astype(self.dtype)
            for head in (weights.pre, weights.post):
                for attr, val in list(head.__dict__.items()):
                    if isinstance(val, np.ndarray):
                        setattr(head, attr, val.astype(self.dtype))
        return self

    # ------------------------------------------------------------------
    def forward(self, pre: np.ndarray, post: np.ndarray, questions: list[str],
                descriptions: list[str], train: bool = True,
                ablate_text: bool = False) -> np.ndarray:
        """pre: (B,3,H,W); post: (B,1,H,W); H, W multiples of 16 -> (B,|V|) logits."""
        bsz, _, h, w = pre.shape
        if h % 16 or w % 16:
            raise ValueError("image sides must be multiples of 16")
        if post.shape != (bsz, 1, h, w):
            raise ValueError("post must be (B, 1, H, W)")
        pre = pre.astype(self.dtype, copy=False)
        post3 = np.repeat(post.astype(self.dtype, copy=False), 3, axis=1)

        if self.config.tied_streams:
            feats = self.cnn_pre.forward(np.concatenate([pre, post3]), train)
            feat_pre, feat_post = feats[:bsz], feats[bsz:]
        else:
            feat_pre = self.cnn_pre.forward(pre, train)
            feat_post = self.cnn_post.forward(post3, train)
        hh, ww = feat_pre.shape[2], feat_pre.shape[3]
        length = hh * ww
        f_pre = feat_pre.transpose(0, 2, 3, 1).reshape(bsz, length, FEATURE_DIM)
        f_post = feat_post.transpose(0, 2, 3, 1).reshape(bsz, length, FEATURE_DIM)

        f_text = self.d_embedder.forward(descriptions)
        layer_caches: list[_LayerCache] = []
        y = y_prime = None
        for k, weights in enumerate(self.blocks):
            params, pair, cond_cache = predict_params(
                f_pre, f_post, f_text, weights, ablate_text=ablate_text)
            out = change_scan_fast(pair, params, backend="numpy")
            y, y_prime = out.y, out.y_prime
            norm_pre = norm_post = None
            if k < len(self.blocks) - 1:
                f_pre, norm_pre = _rmsnorm(f_pre + y)
                f_post, norm_post = _rmsnorm(f_post + y_prime)
            layer_caches.append(_LayerCache(params, pair, cond_cache,
                                            norm_pre, norm_post))

        v = y.mean(axis=1) + y_prime.mean(axis=1)
        q = self.q_embedder.forward(questions)
        fused, fuse_cache = fuse(v, q, self.config.fusion)
        hidden = self.head_relu.forward(self.head1.forward(fused))
        logits = self.head2.forward(hidden)
        self._cache = {
            "bsz": bsz, "hw": (hh, ww), "layers": layer_caches,
            "fuse": fuse_cache, "ablate": ablate_text,
        }
        return logits

    # ------------------------------------------------------------------
    def backward(self, dlogits: np.ndarray) -> None:
        cache = self._cache
        self._cache = None
        bsz = cache["bsz"]
        hh, ww = cache["hw"]
        length = hh * ww

        d_hidden = self.head2.backward(dlogits)
        d_fused = self.head1.backward(self.head_relu.backward(d_hidden))
        d_v, d_q = fuse_backward(d_fused, self.config.fusion, cache["fuse"])
        self.q_embedder.backward(d_q)

        d_y = np.broadcast_to(d_v[:, None, :] / length,
                              (bsz, length, FEATURE_DIM)).copy()
        d_yp = d_y.copy()
        ds_pre = ds_post = None
        d_text = np.zeros((bsz, FEATURE_DIM), dtype=self.dtype)
        for k in range(len(self.blocks) - 1, -1, -1):
            lc = cache["layers"][k]
            if k < len(self.blocks) - 1:
                # carried grads refer to the normalized stream; y_k and the
                # residual share the pre-norm gradient
                dsum_pre = _rmsnorm_backward(ds_pre, lc.norm_pre)
                dsum_post = _rmsnorm_backward(ds_post, lc.norm_post)
                d_y, d_yp = dsum_pre, dsum_post
            sg = change_scan_backward(lc.pair, lc.params, d_y, d_yp)
            dfp, dfq, dtx = predict_params_backward(sg, lc.cond_cache, self.blocks[k])
            d_text += dtx
            if k == len(self.blocks) - 1:
                ds_pre, ds_post = dfp, dfq
            else:
                ds_pre = dsum_pre + dfp
                ds_post = dsum_post + dfq

        self.d_embedder.backward(d_text)
        d_feat_pre = ds_pre.reshape(bsz, hh, ww, FEATURE_DIM).transpose(0, 3, 1, 2)
        d_feat_post = ds_post.reshape(bsz, hh, ww, FEATURE_DIM).transpose(0, 3, 1, 2)
        if self.config.tied_streams:
            self.cnn_pre.backward(np.concatenate([d_feat_pre, d_feat_post]))
        else:
            self.cnn_pre.backward(d_feat_pre)
            self.cnn_post.backward(d_feat_post)

    # ------------------------------------------------------------------
    def named_params(self):
        yield from self.cnn_pre.named_params("cnn_pre")
        if not self.config.tied_streams:
            yield from self.cnn_post.named_params("cnn_post")
        yield from self.q_embedder.named_params("q_embed")
        yield from self.d_embedder.named_params("d_embed")
        for k, weights in enumerate(self.blocks):
            for name, arr in weights.named_arrays(f"block{k}"):
                yield name, arr, (lambda w=weights, n=name: w.grads[n.split(".", 1)[1]])
        for name, layer in (("head1", self.head1), ("head2", self.head2)):
            yield f"{name}.w", layer.w, (lambda l=layer: l.gw)
            yield f"{name}.b", layer.b, (lambda l=layer: l.gb)
