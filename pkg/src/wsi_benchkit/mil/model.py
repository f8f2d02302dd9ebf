"""Bag classifiers with hand-derived gradients, in float64 numpy.

All three aggregators share the same skeleton: a linear+ReLU projection of
every patch embedding, an order-invariant pooling step, and a linear softmax
classifier over the pooled vector.  The pooling step is one of

* ``mean_pool``    -- plain average of the projected patches,
* ``attmil``       -- gated attention: a two-layer tanh scorer assigns one
                      logit per patch, softmax-normalised weights average the
                      patches,
* ``transformer``  -- a small pre-norm encoder stack (multi-head
                      self-attention + GELU feed-forward, residuals, no
                      positional encoding, no masking) whose output tokens
                      are averaged.

None of the poolers looks at patch order, so predictions are invariant to
permutations within a bag.  ``loss_and_grad`` backpropagates the
cross-entropy loss through the whole graph by hand; the gradients are exact
for the executed graph (dropout masks included when training), which is what
the finite-difference tests pin down.

Width/depth live in ``ModelDims`` so the same code serves both the
full-width configuration (projection 512, attention hidden 256, 8 heads,
feed-forward 2048, 2 layers) and the tiny shapes that make exhaustive
gradient checking affordable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from ..errors import DimensionMismatch, NonFiniteLoss
from .bags import Bag

LN_EPS = 1e-5
ATTN_DROPOUT = 0.1
CLS_DROPOUT = 0.5
VARIANTS = ("mean_pool", "attmil", "transformer")


@dataclass(frozen=True)
class ModelDims:
    d_in: int
    n_classes: int
    proj_dim: int = 512
    attn_hidden: int = 256
    n_heads: int = 8
    ff_dim: int = 2048
    n_layers: int = 2

    def __post_init__(self):
        if self.proj_dim % self.n_heads != 0:
            raise DimensionMismatch("proj_dim must be divisible by n_heads")


@dataclass
class AggregatorParams:
    variant: str
    dims: ModelDims
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "AggregatorParams":
        return AggregatorParams(self.variant, self.dims,
                                {k: v.copy() for k, v in self.tensors.items()})


def _uniform(rng, shape, fan_in):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(variant: str, dims: ModelDims, rng: np.random.Generator) -> AggregatorParams:
    """Fan-in-scaled uniform init; layer norms start at identity."""
    if variant not in VARIANTS:
        raise DimensionMismatch(f"unknown aggregator variant {variant!r}")
    p, c = dims.proj_dim, dims.n_classes
    t = {
        "proj_w": _uniform(rng, (p, dims.d_in), dims.d_in),
        "proj_b": _uniform(rng, (p,), dims.d_in),
    }
    if variant == "attmil":
        h = dims.attn_hidden
        t["att_w1"] = _uniform(rng, (h, p), p)
        t["att_b1"] = _uniform(rng, (h,), p)
        t["att_w2"] = _uniform(rng, (h,), h)
        t["att_b2"] = _uniform(rng, (), h)
    elif variant == "transformer":
        for layer in range(dims.n_layers):
            pre = f"t{layer}_"
            t[pre + "ln1_g"] = np.ones(p)
            t[pre + "ln1_b"] = np.zeros(p)
            for name in ("wq", "wk", "wv", "wo"):
                t[pre + name] = _uniform(rng, (p, p), p)
            for name in ("bq", "bk", "bv", "bo"):
                t[pre + name] = _uniform(rng, (p,), p)
            t[pre + "ln2_g"] = np.ones(p)
            t[pre + "ln2_b"] = np.zeros(p)
            t[pre + "ff_w1"] = _uniform(rng, (dims.ff_dim, p), p)
            t[pre + "ff_b1"] = _uniform(rng, (dims.ff_dim,), p)
            t[pre + "ff_w2"] = _uniform(rng, (p, dims.ff_dim), dims.ff_dim)
            t[pre + "ff_b2"] = _uniform(rng, (p,), dims.ff_dim)
    t["cls_w"] = _uniform(rng, (c, p), p)
    t["cls_b"] = _uniform(rng, (c,), p)
    return AggregatorParams(variant=variant, dims=dims, tensors=t)


def zeros_like_params(params: AggregatorParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.tensors.items()}


# -- small numerical pieces ----------------------------------------------------

def _softmax(x, axis=-1):
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _softmax_backward(p, dp, axis=-1):
    return p * (dp - (dp * p).sum(axis=axis, keepdims=True))


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _gelu_grad(x):
    phi = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return 0.5 * (1.0 + erf(x / np.sqrt(2.0))) + x * phi


def _layernorm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + b, (xhat, inv)


def _layernorm_backward(dy, g, cache):
    xhat, inv = cache
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


def _dropout_mask(rng, shape, p):
    # inverted scaling: evaluation needs no rescale
    return (rng.random(shape) >= p) / (1.0 - p)


# -- forward -------------------------------------------------------------------

def _split_heads(x, n_heads):
    n, p = x.shape
    return x.reshape(n, n_heads, p // n_heads).transpose(1, 0, 2)  # (h, n, dk)


def _merge_heads(x):
    h, n, dk = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dk)


def _mha_forward(a, t, pre, dims):
    q = _split_heads(a @ t[pre + "wq"].T + t[pre + "bq"], dims.n_heads)
    k = _split_heads(a @ t[pre + "wk"].T + t[pre + "bk"], dims.n_heads)
    v = _split_heads(a @ t[pre + "wv"].T + t[pre + "bv"], dims.n_heads)
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = (q @ k.transpose(0, 2, 1)) * scale
    attn = _softmax(scores, axis=-1)
    heads = _merge_heads(attn @ v)
    out = heads @ t[pre + "wo"].T + t[pre + "bo"]
    return out, (a, q, k, v, attn, heads, scale)


def _mha_backward(dout, t, pre, cache, grads):
    a, q, k, v, attn, heads, scale = cache
    n_heads = q.shape[0]
    grads[pre + "wo"] += dout.T @ heads
    grads[pre + "bo"] += dout.sum(axis=0)
    dheads = _split_heads(dout @ t[pre + "wo"], n_heads)
    dattn = dheads @ v.transpose(0, 2, 1)
    dv = attn.transpose(0, 2, 1) @ dheads
    dscores = _softmax_backward(attn, dattn, axis=-1) * scale
    dq = dscores @ k
    dk = dscores.transpose(0, 2, 1) @ q
    da = np.zeros_like(a)
    for name, dmat in (("wq", dq), ("wk", dk), ("wv", dv)):
        flat = _merge_heads(dmat)
        grads[pre + name] += flat.T @ a
        grads[pre + "b" + name[1]] += flat.sum(axis=0)
        da += flat @ t[pre + name]
    return da


def _forward_graph(params: AggregatorParams, patches: np.ndarray,
                   train_mode: bool, rng: np.random.Generator | None):
    """Full forward pass; returns output plus every intermediate needed for
    the hand-written backward sweep."""
    dims, t = params.dims, params.tensors
    if patches.ndim != 2 or patches.shape[1] != dims.d_in:
        raise DimensionMismatch(
            f"expected patches of shape (n, {dims.d_in}), got {patches.shape}")
    if train_mode and rng is None:
        raise ValueError("train_mode forward needs an RNG for dropout")
    x = np.asarray(patches, dtype=np.float64)
    n = x.shape[0]

    pre_act = x @ t["proj_w"].T + t["proj_b"]
    hidden = np.maximum(pre_act, 0.0)
    cache: dict = {"x": x, "pre_act": pre_act, "hidden": hidden, "n": n}

    alphas = None
    if params.variant == "mean_pool":
        pooled = hidden.mean(axis=0)
    elif params.variant == "attmil":
        tanh_h = np.tanh(hidden @ t["att_w1"].T + t["att_b1"])
        logits_att = tanh_h @ t["att_w2"] + t["att_b2"]
        alphas = _softmax(logits_att)
        pooled = alphas @ hidden
        cache.update(tanh_h=tanh_h, alphas=alphas)
    else:
        y = hidden
        layers = []
        for layer in range(dims.n_layers):
            pre = f"t{layer}_"
            lc: dict = {"y_in": y}
            a, lc["ln1"] = _layernorm(y, t[pre + "ln1_g"], t[pre + "ln1_b"])
            lc["a"] = a
            attn_out, lc["mha"] = _mha_forward(a, t, pre, dims)
            if train_mode:
                lc["drop1"] = _dropout_mask(rng, attn_out.shape, ATTN_DROPOUT)
                attn_out = attn_out * lc["drop1"]
            y = y + attn_out
            lc["y_mid"] = y
            b, lc["ln2"] = _layernorm(y, t[pre + "ln2_g"], t[pre + "ln2_b"])
            lc["b"] = b
            ff_pre = b @ t[pre + "ff_w1"].T + t[pre + "ff_b1"]
            ff_act = _gelu(ff_pre)
            ff_out = ff_act @ t[pre + "ff_w2"].T + t[pre + "ff_b2"]
            if train_mode:
                lc["drop2"] = _dropout_mask(rng, ff_out.shape, ATTN_DROPOUT)
                ff_out = ff_out * lc["drop2"]
            lc.update(ff_pre=ff_pre, ff_act=ff_act)
            y = y + ff_out
            layers.append(lc)
        pooled = y.mean(axis=0)
        cache["layers"] = layers

    cache["pooled"] = pooled
    cls_in = pooled
    if train_mode:
        cache["cls_drop"] = _dropout_mask(rng, pooled.shape, CLS_DROPOUT)
        cls_in = pooled * cache["cls_drop"]
    cache["cls_in"] = cls_in
    logits = t["cls_w"] @ cls_in + t["cls_b"]
    probs = _softmax(logits)
    return probs, alphas, cache


def forward(params: AggregatorParams, bag: Bag, train_mode: bool = False,
            rng: np.random.Generator | None = None):
    """Class probabilities for one bag; attention weights for attmil."""
    probs, alphas, _ = _forward_graph(params, bag.patches, train_mode, rng)
    return probs, alphas


def loss_and_grad(params: AggregatorParams, bag: Bag, train_mode: bool = False,
                  rng: np.random.Generator | None = None):
    """Cross-entropy loss and its exact gradient for the executed graph."""
    dims, t = params.dims, params.tensors
    label = bag.label
    if not 0 <= label < dims.n_classes:
        raise DimensionMismatch(f"label {label} outside [0, {dims.n_classes})")
    probs, _, cache = _forward_graph(params, bag.patches, train_mode, rng)
    loss = -np.log(max(probs[label], 1e-300))
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"non-finite loss for bag {bag.patient_id!r}")

    grads = zeros_like_params(params)
    dlogits = probs.copy()
    dlogits[label] -= 1.0
    grads["cls_w"] += np.outer(dlogits, cache["cls_in"])
    grads["cls_b"] += dlogits
    dpooled = t["cls_w"].T @ dlogits
    if train_mode:
        dpooled = dpooled * cache["cls_drop"]

    hidden = cache["hidden"]
    n = cache["n"]
    if params.variant == "mean_pool":
        dhidden = np.tile(dpooled / n, (n, 1))
    elif params.variant == "attmil":
        alphas, tanh_h = cache["alphas"], cache["tanh_h"]
        dhidden = np.outer(alphas, dpooled)
        dalpha = hidden @ dpooled
        datt_logits = _softmax_backward(alphas, dalpha)
        grads["att_b2"] += datt_logits.sum()
        grads["att_w2"] += tanh_h.T @ datt_logits
        dtanh = np.outer(datt_logits, t["att_w2"])
        dpre_tanh = dtanh * (1.0 - tanh_h ** 2)
        grads["att_w1"] += dpre_tanh.T @ hidden
        grads["att_b1"] += dpre_tanh.sum(axis=0)
        dhidden += dpre_tanh @ t["att_w1"]
    else:
        dy = np.tile(dpooled / n, (n, 1))
        for layer in range(dims.n_layers - 1, -1, -1):
            pre = f"t{layer}_"
            lc = cache["layers"][layer]
            dff_out = dy * lc["drop2"] if train_mode else dy
            grads[pre + "ff_w2"] += dff_out.T @ lc["ff_act"]
            grads[pre + "ff_b2"] += dff_out.sum(axis=0)
            dff_act = dff_out @ t[pre + "ff_w2"]
            dff_pre = dff_act * _gelu_grad(lc["ff_pre"])
            grads[pre + "ff_w1"] += dff_pre.T @ lc["b"]
            grads[pre + "ff_b1"] += dff_pre.sum(axis=0)
            db = dff_pre @ t[pre + "ff_w1"]
            dy_mid, dg2, db2 = _layernorm_backward(db, t[pre + "ln2_g"], lc["ln2"])
            grads[pre + "ln2_g"] += dg2
            grads[pre + "ln2_b"] += db2
            dy_mid = dy_mid + dy                      # residual around the FF block
            dattn_out = dy_mid * lc["drop1"] if train_mode else dy_mid
            da = _mha_backward(dattn_out, t, pre, lc["mha"], grads)
            dy_in, dg1, db1 = _layernorm_backward(da, t[pre + "ln1_g"], lc["ln1"])
            grads[pre + "ln1_g"] += dg1
            grads[pre + "ln1_b"] += db1
            dy = dy_in + dy_mid                       # residual around the MHA block
        dhidden = dy

    dpre_act = dhidden * (cache["pre_act"] > 0)
    grads["proj_w"] += dpre_act.T @ cache["x"]
    grads["proj_b"] += dpre_act.sum(axis=0)
    return float(loss), grads
