"""Numpy neural-network primitives with explicit forward caches and
hand-written backward passes.

Everything is functional: ``*_fwd`` returns (output, cache) and ``*_bwd``
consumes the upstream gradient plus that cache and returns input gradients
and a dict of parameter gradients keyed by parameter name. Parameters live
in a flat ``dict[str, np.ndarray]``.
"""

import math

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5


def linear_fwd(x, W, b):
    return x @ W + b, x


def linear_bwd(gy, x, W):
    din, dout = W.shape
    gx = gy @ W.T
    gW = x.reshape(-1, din).T @ gy.reshape(-1, dout)
    gb = gy.reshape(-1, dout).sum(axis=0)
    return gx, gW, gb


def layernorm_fwd(x, g, b, eps=LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def layernorm_bwd(gy, cache, g):
    xhat, inv = cache
    d = xhat.shape[-1]
    gg = (gy * xhat).reshape(-1, d).sum(axis=0)
    gb = gy.reshape(-1, d).sum(axis=0)
    gxhat = gy * g
    gx = inv * (
        gxhat
        - gxhat.mean(axis=-1, keepdims=True)
        - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return gx, gg, gb


def gelu_fwd(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0))), x


def gelu_bwd(gy, x):
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return gy * (cdf + x * pdf)


def sinusoidal_positions(n: int, d: int, dtype=np.float64) -> np.ndarray:
    """Standard fixed sin/cos position table, shape (n, d); d must be even."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    idx = np.arange(d // 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * idx / d)
    table = np.zeros((n, d), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table.astype(dtype)


def lora_effective(W, A, B, rank: int, alpha: float):
    """W + (alpha / rank) * B @ A."""
    return W + (alpha / rank) * (B @ A)


def _split_heads(x, n_heads):
    b, s, d = x.shape
    return x.reshape(b, s, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, s, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, s, h * dh)


def mha_fwd(x, params, prefix, n_heads, allowed=None, lora=None):
    """Multi-head attention over x (B, S, D).

    ``allowed`` is an optional (B, S, S) bool mask of permitted key positions
    per query; None means full bidirectional attention. ``lora`` is an
    optional (rank, alpha) tuple enabling low-rank adapters on the query and
    key projections (parameter names ``{prefix}.lora_q.A`` etc.).
    """
    Wq, Wk, Wv = (params[f"{prefix}.W{n}"] for n in "qkv")
    bq, bk, bv = (params[f"{prefix}.b{n}"] for n in "qkv")
    Wo, bo = params[f"{prefix}.Wo"], params[f"{prefix}.bo"]
    if lora is not None:
        rank, alpha = lora
        Wq_eff = lora_effective(Wq, params[f"{prefix}.lora_q.A"],
                                params[f"{prefix}.lora_q.B"], rank, alpha)
        Wk_eff = lora_effective(Wk, params[f"{prefix}.lora_k.A"],
                                params[f"{prefix}.lora_k.B"], rank, alpha)
    else:
        Wq_eff, Wk_eff = Wq, Wk

    q = x @ Wq_eff + bq
    k = x @ Wk_eff + bk
    v = x @ Wv + bv
    qh, kh, vh = (_split_heads(t, n_heads) for t in (q, k, v))
    dh = qh.shape[-1]
    scores = qh @ kh.transpose(0, 1, 3, 2) / math.sqrt(dh)
    if allowed is not None:
        scores = np.where(allowed[:, None, :, :], scores, -np.inf)
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    probs = e / e.sum(axis=-1, keepdims=True)
    ctx = _merge_heads(probs @ vh)
    y = ctx @ Wo + bo
    cache = (x, qh, kh, vh, probs, ctx, Wq_eff, Wk_eff)
    return y, cache


def mha_bwd(gy, cache, params, prefix, n_heads, lora=None):
    x, qh, kh, vh, probs, ctx, Wq_eff, Wk_eff = cache
    Wv, Wo = params[f"{prefix}.Wv"], params[f"{prefix}.Wo"]
    b, s, d = x.shape
    dh = d // n_heads
    grads = {}

    gy2 = gy.reshape(-1, d)
    grads[f"{prefix}.Wo"] = ctx.reshape(-1, d).T @ gy2
    grads[f"{prefix}.bo"] = gy2.sum(axis=0)
    gctx = _split_heads(gy @ Wo.T, n_heads)

    gprobs = gctx @ vh.transpose(0, 1, 3, 2)
    gvh = probs.transpose(0, 1, 3, 2) @ gctx
    gscores = probs * (gprobs - (gprobs * probs).sum(axis=-1, keepdims=True))
    gscores /= math.sqrt(dh)
    gqh = gscores @ kh
    gkh = gscores.transpose(0, 1, 3, 2) @ qh

    gq = _merge_heads(gqh).reshape(-1, d)
    gk = _merge_heads(gkh).reshape(-1, d)
    gv = _merge_heads(gvh).reshape(-1, d)
    x2 = x.reshape(-1, d)

    gWq_eff = x2.T @ gq
    gWk_eff = x2.T @ gk
    grads[f"{prefix}.Wv"] = x2.T @ gv
    grads[f"{prefix}.bq"] = gq.sum(axis=0)
    grads[f"{prefix}.bk"] = gk.sum(axis=0)
    grads[f"{prefix}.bv"] = gv.sum(axis=0)
    grads[f"{prefix}.Wq"] = gWq_eff
    grads[f"{prefix}.Wk"] = gWk_eff
    if lora is not None:
        rank, alpha = lora
        scale = alpha / rank
        for name, gW_eff in (("lora_q", gWq_eff), ("lora_k", gWk_eff)):
            A = params[f"{prefix}.{name}.A"]
            B = params[f"{prefix}.{name}.B"]
            grads[f"{prefix}.{name}.B"] = scale * (gW_eff @ A.T)
            grads[f"{prefix}.{name}.A"] = scale * (B.T @ gW_eff)

    gx = (gq @ Wq_eff.T + gk @ Wk_eff.T + gv @ Wv.T).reshape(b, s, d)
    return gx, grads


def mlp_fwd(x, params, prefix):
    h_pre, x_in = linear_fwd(x, params[f"{prefix}.W1"], params[f"{prefix}.b1"])
    h, gcache = gelu_fwd(h_pre)
    y, h_in = linear_fwd(h, params[f"{prefix}.W2"], params[f"{prefix}.b2"])
    return y, (x_in, gcache, h_in)


def mlp_bwd(gy, cache, params, prefix):
    x_in, gcache, h_in = cache
    gh, gW2, gb2 = linear_bwd(gy, h_in, params[f"{prefix}.W2"])
    gh_pre = gelu_bwd(gh, gcache)
    gx, gW1, gb1 = linear_bwd(gh_pre, x_in, params[f"{prefix}.W1"])
    return gx, {f"{prefix}.W1": gW1, f"{prefix}.b1": gb1,
                f"{prefix}.W2": gW2, f"{prefix}.b2": gb2}


def block_fwd(x, params, prefix, n_heads, allowed=None, lora=None,
              branch_pos=None):
    """Pre-norm transformer block: x += MHA(LN1(x) [+ pos]); x += MLP(LN2(x)).

    ``branch_pos`` injects a position table into the attention branch input
    (used by the audio encoder so that zeroed residual branches leave the
    trunk exactly equal to the input projection).
    """
    a, ln1_cache = layernorm_fwd(x, params[f"{prefix}.ln1.g"],
                                 params[f"{prefix}.ln1.b"])
    if branch_pos is not None:
        a = a + branch_pos
    s, attn_cache = mha_fwd(a, params, f"{prefix}.attn", n_heads,
                            allowed=allowed, lora=lora)
    x1 = x + s
    m, ln2_cache = layernorm_fwd(x1, params[f"{prefix}.ln2.g"],
                                 params[f"{prefix}.ln2.b"])
    y, mlp_cache = mlp_fwd(m, params, f"{prefix}.mlp")
    x2 = x1 + y
    return x2, (ln1_cache, attn_cache, ln2_cache, mlp_cache)


def block_bwd(gy, cache, params, prefix, n_heads, lora=None):
    ln1_cache, attn_cache, ln2_cache, mlp_cache = cache
    grads = {}

    gm, mlp_grads = mlp_bwd(gy, mlp_cache, params, f"{prefix}.mlp")
    grads.update(mlp_grads)
    gx1, gg2, gb2 = layernorm_bwd(gm, ln2_cache, params[f"{prefix}.ln2.g"])
    grads[f"{prefix}.ln2.g"] = gg2
    grads[f"{prefix}.ln2.b"] = gb2
    gx1 = gx1 + gy

    ga, attn_grads = mha_bwd(gx1, attn_cache, params, f"{prefix}.attn",
                             n_heads, lora=lora)
    grads.update(attn_grads)
    gx, gg1, gb1 = layernorm_bwd(ga, ln1_cache, params[f"{prefix}.ln1.g"])
    grads[f"{prefix}.ln1.g"] = gg1
    grads[f"{prefix}.ln1.b"] = gb1
    gx = gx + gx1
    return gx, grads


def softmax(x, axis=-1):
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def accumulate(total: dict, part: dict) -> None:
    for name, g in part.items():
        if name in total:
            total[name] = total[name] + g
        else:
            total[name] = g
