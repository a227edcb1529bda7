"""Multi-head monotonic chunkwise attention with one shared parameter set.

The decoder query and every encoder state are cut into K contiguous slices;
each slice pair runs the full monotonic/chunkwise pipeline independently,
reusing a single set of energy parameters, and the K head contexts (each of
dimension dim_h/K) are averaged into the step context. Shared-parameter
gradients are therefore sums over heads.

Head computations are vectorized over the leading K axis; the per-head
results are bitwise identical to running the single-head kernels on each
slice, which the tests exploit as a delegation oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import attention as att
from .numeric import DimensionError, sigmoid


@dataclass
class HeadConfig:
    """Head count and chunk width; dims must split evenly across heads."""

    num_heads: int = 4
    chunk_width: int = 2

    def __post_init__(self):
        if self.num_heads < 1:
            raise ValueError("need at least one head")
        if self.chunk_width < 1:
            raise ValueError("chunk width must be >= 1")

    def head_dim(self, full_dim: int) -> int:
        if full_dim % self.num_heads:
            raise DimensionError(
                f"{self.num_heads} heads do not divide dimension {full_dim}")
        return full_dim // self.num_heads


@dataclass
class SharedHeadParams:
    """One monotonic + one chunk energy parameter set, sized for head slices."""

    mono: att.MonotonicEnergyParams
    chunk: att.ChunkEnergyParams


def init_shared_head_params(rng, energy_dim: int, dim_s: int, dim_h: int,
                            cfg: HeadConfig, dtype=np.float32) -> SharedHeadParams:
    hs, hh = cfg.head_dim(dim_s), cfg.head_dim(dim_h)
    return SharedHeadParams(
        mono=att.init_monotonic_energy_params(rng.derive(1), energy_dim, hs, hh, dtype),
        chunk=att.init_chunk_energy_params(rng.derive(2), energy_dim, hs, hh, dtype),
    )


def split_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    """Cut the last axis into contiguous equal slices: (..., D) -> (K, ..., D/K)."""
    d = x.shape[-1]
    if d % num_heads:
        raise DimensionError(f"{num_heads} heads do not divide dimension {d}")
    parts = x.reshape(x.shape[:-1] + (num_heads, d // num_heads))
    return np.ascontiguousarray(np.moveaxis(parts, -2, 0))


def merge_heads(parts: np.ndarray) -> np.ndarray:
    """Inverse of split_heads; concat(split(x)) == x bitwise."""
    moved = np.moveaxis(parts, 0, -2)
    return np.ascontiguousarray(moved.reshape(moved.shape[:-2] + (-1,)))


def per_head_energy(params: SharedHeadParams, s_k: np.ndarray, h_k: np.ndarray):
    """Monotonic energy of one head slice; delegates to the single-head kernel."""
    return att.monotonic_energy(params.mono, s_k, h_k)


# ---------------------------------------------------------------------------
# vectorized energies over the head axis
# ---------------------------------------------------------------------------

def _stacked_energy(weights, s_heads, h_proj, h_heads, normalized: bool):
    """Energies for all heads at once given cached encoder projections.

    s_heads (K, ds), h_proj (K, T, d) = h_heads @ w_h.T. Returns (e, cache)
    with e of shape (K, T).
    """
    s_part = s_heads @ weights.w_s.T                       # (K, d)
    pre = s_part[:, None, :] + h_proj + weights.b
    act = np.tanh(pre)
    if normalized:
        norm = float(np.linalg.norm(weights.v.astype(np.float64)))
        if norm == 0.0:
            raise ValueError("monotonic energy requires a nonzero v")
        vn = weights.v / np.asarray(norm, dtype=weights.v.dtype)
        proj = act @ vn                                    # (K, T)
        e = weights.g * proj + weights.r
        cache = (s_heads, h_heads, act, vn, norm, proj)
    else:
        e = act @ weights.v
        cache = (s_heads, h_heads, act, None, None, None)
    return e, cache


def _stacked_energy_backward(weights, cache, de, normalized: bool):
    s_heads, h_heads, act, vn, norm, proj = cache
    grads = {}
    if normalized:
        grads["g"] = np.asarray(np.sum(de * proj), dtype=weights.g.dtype)
        grads["r"] = np.asarray(np.sum(de), dtype=weights.r.dtype)
        dproj = de * float(weights.g)                      # (K, T)
        dact = dproj[..., None] * vn
        dvn = np.einsum("ktd,kt->d", act, dproj)
        grads["v"] = ((dvn - vn * np.dot(vn, dvn)) / norm).astype(weights.v.dtype)
    else:
        dact = de[..., None] * weights.v
        grads["v"] = np.einsum("ktd,kt->d", act, de).astype(weights.v.dtype)
    dpre = dact * (1.0 - act * act)                        # (K, T, d)
    ds_part = dpre.sum(axis=1)                             # (K, d)
    grads["w_s"] = np.einsum("kd,ke->de", ds_part, s_heads).astype(weights.w_s.dtype)
    grads["w_h"] = np.einsum("ktd,kte->de", dpre, h_heads).astype(weights.w_h.dtype)
    grads["b"] = dpre.sum(axis=(0, 1)).astype(weights.b.dtype)
    ds_heads = ds_part @ weights.w_s
    dh_heads = dpre @ weights.w_h
    return ds_heads, dh_heads, grads


@dataclass
class EncoderProjection:
    """Per-utterance cache: head slices of the encoder states and their
    projections through the (shared) energy weight matrices."""

    h_heads: np.ndarray   # (K, T, dim_h/K)
    mono_proj: np.ndarray  # (K, T, d)
    chunk_proj: np.ndarray

    @property
    def num_frames(self) -> int:
        return self.h_heads.shape[1]


def project_encoder_states(params: SharedHeadParams, cfg: HeadConfig,
                           h: np.ndarray) -> EncoderProjection:
    h_heads = split_heads(h, cfg.num_heads)
    return EncoderProjection(
        h_heads=h_heads,
        mono_proj=h_heads @ params.mono.w_h.T,
        chunk_proj=h_heads @ params.chunk.w_h.T,
    )


# ---------------------------------------------------------------------------
# expected (training) mode
# ---------------------------------------------------------------------------

def initial_head_alignment(cfg: HeadConfig, num_frames: int, dtype=np.float32):
    return att.initial_alignment(num_frames, dtype=dtype, lead_shape=(cfg.num_heads,))


def expected_step(params: SharedHeadParams, cfg: HeadConfig, s: np.ndarray,
                  enc: EncoderProjection, alpha_prev: np.ndarray, noise=None):
    """One expected-mode attention step across all heads.

    ``s`` is the full decoder query; ``alpha_prev`` the (K, T) alignment of
    the previous output step; ``noise`` an optional (K, T) pre-drawn Gaussian
    perturbation of the monotonic energies (training only). Returns the
    averaged context (dim_h/K,), per-head diagnostics, and the backward cache.
    """
    s_heads = split_heads(s, cfg.num_heads)
    e, mono_cache = _stacked_energy(params.mono, s_heads, enc.mono_proj,
                                    enc.h_heads, normalized=True)
    e_sel = e + noise if noise is not None else e
    p_raw = sigmoid(e_sel)
    p = att.clamp_probabilities(p_raw)
    alpha, q = att.alignment_step(p, alpha_prev)
    u, chunk_cache = _stacked_energy(params.chunk, s_heads, enc.chunk_proj,
                                     enc.h_heads, normalized=False)
    beta, smear_cache = att.expected_chunk_attention_cached(alpha, u, cfg.chunk_width)
    ctx_heads = np.einsum("kt,ktd->kd", beta, enc.h_heads)
    context = ctx_heads.mean(axis=0)
    diagnostics = {"alpha": alpha, "beta": beta, "p": p_raw, "energy": e}
    cache = (mono_cache, chunk_cache, smear_cache, p_raw, p, q, beta, enc)
    return context, diagnostics, cache


def expected_step_backward(params: SharedHeadParams, cfg: HeadConfig, cache,
                           dcontext: np.ndarray, dalpha_next=None):
    """Reverse one expected-mode step.

    ``dalpha_next`` carries the gradient flowing into this step's alpha from
    the next step's recurrence. Returns (ds, dh, dalpha_prev, grads) where
    grads keys are "mono.*" / "chunk.*" and dh is the gradient w.r.t. the
    full (T, dim_h) encoder states.
    """
    mono_cache, chunk_cache, smear_cache, p_raw, p, q, beta, enc = cache
    k = cfg.num_heads
    dctx_heads = np.broadcast_to(dcontext / k, (k,) + dcontext.shape)
    dbeta = np.einsum("kd,ktd->kt", dctx_heads, enc.h_heads)
    dh_heads = beta[..., None] * dctx_heads[:, None, :]
    dalpha, du = att.expected_chunk_attention_backward(smear_cache, cfg.chunk_width, dbeta)
    if dalpha_next is not None:
        dalpha = dalpha + dalpha_next
    dp, dalpha_prev = att.alignment_step_backward(p, q, dalpha)
    inside = (p_raw > att.P_CLAMP) & (p_raw < 1.0 - att.P_CLAMP)
    de = dp * inside * p_raw * (1.0 - p_raw)
    ds_m, dh_m, mono_grads = _stacked_energy_backward(params.mono, mono_cache, de,
                                                      normalized=True)
    ds_c, dh_c, chunk_grads = _stacked_energy_backward(params.chunk, chunk_cache, du,
                                                       normalized=False)
    dh = merge_heads(dh_heads + dh_m + dh_c)
    ds = merge_heads(ds_m + ds_c)
    grads = {f"mono.{n}": g for n, g in mono_grads.items()}
    grads.update({f"chunk.{n}": g for n, g in chunk_grads.items()})
    return ds, dh, dalpha_prev, grads


def expected_context(params: SharedHeadParams, cfg: HeadConfig, s: np.ndarray,
                     h: np.ndarray, alpha_prev=None, noise=None):
    """Single-call convenience: context and diagnostics for one step over raw
    encoder states (first output step unless ``alpha_prev`` is given)."""
    enc = project_encoder_states(params, cfg, h)
    if alpha_prev is None:
        alpha_prev = initial_head_alignment(cfg, h.shape[0], dtype=h.dtype)
    context, diagnostics, _ = expected_step(params, cfg, s, enc, alpha_prev, noise)
    return context, diagnostics


# ---------------------------------------------------------------------------
# hard (streaming) mode
# ---------------------------------------------------------------------------

class HeadFrameView:
    """Per-head slice of a frame provider, for the streaming scan."""

    def __init__(self, source, head: int, num_heads: int):
        self._source = source
        self._head = head
        self._num_heads = num_heads

    def get(self, j: int):
        frame = self._source.get(j)
        if frame is None:
            return None
        return split_heads(frame, self._num_heads)[self._head]


def hard_step(params: SharedHeadParams, cfg: HeadConfig, s: np.ndarray,
              frames, states: list):
    """One streaming step across heads.

    ``frames`` yields full encoder states through ``get(j)``; each head scans
    its own slice. Heads that have exhausted the input contribute a zero
    context and stay finished. Returns (per-head selections, averaged
    context, new states); a selection of None marks a head that saw no
    boundary.
    """
    k = cfg.num_heads
    s_heads = split_heads(s, k)
    head_dim = params.mono.w_h.shape[1]
    contexts = np.zeros((k, head_dim), dtype=s.dtype)
    picks, new_states = [], []
    for head in range(k):
        if states[head].finished:
            picks.append(None)
            new_states.append(states[head])
            continue
        view = HeadFrameView(frames, head, k)
        t, ctx, st = att.hard_decode_step(params.mono, params.chunk,
                                          s_heads[head], view, states[head],
                                          cfg.chunk_width)
        picks.append(t)
        contexts[head] = ctx
        new_states.append(st)
    return picks, contexts.mean(axis=0), new_states
