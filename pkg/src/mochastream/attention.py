"""Monotonic and chunkwise attention kernels.

Two modes share one parameterization:

* expected mode — differentiable marginalization over all monotonic
  alignments, used for training. Selection probabilities feed a
  division-free recurrence producing the expected selection distribution
  ``alpha``; a windowed softmax smears it into chunk weights ``beta``.
* hard mode — thresholded streaming selection for inference. Each output
  step scans forward from the previous selection point, stops at the first
  frame whose selection probability clears 0.5, and attends softly over the
  ``w`` frames ending there.

Frame indices are 0-based throughout. Every expected-mode op has an explicit
backward rule; the hard path is not differentiated.

Shapes: selection/chunk rows carry the frame axis last, so the same kernels
run on a single row ``(T,)`` or stacked heads ``(K, T)`` unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import DimensionError, RngStream, sigmoid, uniform_init

# Selection probabilities are clamped away from {0, 1} before the recurrence
# so log-space diagnostics stay finite; the effect is below test tolerances.
P_CLAMP = 1e-9

# Default offset for the energy bias r: keeps initial selection probabilities
# low so early training sees long contexts.
INIT_R = -4.0


@dataclass
class MonotonicEnergyParams:
    """Learnable tensors of the normalized additive monotonic energy."""

    w_s: np.ndarray  # (d, dim_s)
    w_h: np.ndarray  # (d, dim_h)
    v: np.ndarray    # (d,)
    b: np.ndarray    # (d,)
    g: np.ndarray    # scalar, shape ()
    r: np.ndarray    # scalar, shape ()


@dataclass
class ChunkEnergyParams:
    """Chunk-energy parameters: same bilinear-tanh form, but no g/r since the
    downstream windowed softmax is shift- and scale-invariant."""

    w_s: np.ndarray
    w_h: np.ndarray
    v: np.ndarray
    b: np.ndarray


def init_monotonic_energy_params(rng: RngStream, energy_dim: int, dim_s: int,
                                 dim_h: int, dtype=np.float32) -> MonotonicEnergyParams:
    return MonotonicEnergyParams(
        w_s=uniform_init(rng, (energy_dim, dim_s), dim_s, dtype),
        w_h=uniform_init(rng, (energy_dim, dim_h), dim_h, dtype),
        v=uniform_init(rng, (energy_dim,), energy_dim, dtype),
        b=np.zeros(energy_dim, dtype=dtype),
        g=np.array(1.0, dtype=dtype),
        r=np.array(INIT_R, dtype=dtype),
    )


def init_chunk_energy_params(rng: RngStream, energy_dim: int, dim_s: int,
                             dim_h: int, dtype=np.float32) -> ChunkEnergyParams:
    return ChunkEnergyParams(
        w_s=uniform_init(rng, (energy_dim, dim_s), dim_s, dtype),
        w_h=uniform_init(rng, (energy_dim, dim_h), dim_h, dtype),
        v=uniform_init(rng, (energy_dim,), energy_dim, dtype),
        b=np.zeros(energy_dim, dtype=dtype),
    )


# ---------------------------------------------------------------------------
# energies
# ---------------------------------------------------------------------------

def monotonic_energy(params: MonotonicEnergyParams, s: np.ndarray, h: np.ndarray):
    """Monotonic energy g * (v/|v|) . tanh(W_s s + W_h h_j + b) + r.

    ``s`` is the (dim_s,) query; ``h`` is one frame (dim_h,) or a stack
    (T, dim_h). Returns a scalar or (T,) energies. Invariant under positive
    rescaling of v thanks to the normalization.
    """
    e, _ = monotonic_energy_cached(params, s, h)
    return e


def monotonic_energy_cached(params, s, h):
    single = h.ndim == 1
    hs = h[None, :] if single else h
    norm = float(np.linalg.norm(params.v.astype(np.float64)))
    if norm == 0.0:
        raise ValueError("monotonic energy requires a nonzero v")
    vn = (params.v / np.asarray(norm, dtype=params.v.dtype))
    pre = s @ params.w_s.T + hs @ params.w_h.T + params.b  # (T, d)
    act = np.tanh(pre)
    proj = act @ vn
    e = params.g * proj + params.r
    cache = (s, hs, vn, norm, act, proj)
    return (float(e[0]) if single else e), cache


def monotonic_energy_backward(params, cache, de):
    """Gradients of the energies w.r.t. query, frames, and every parameter."""
    s, hs, vn, norm, act, proj = cache
    de = np.atleast_1d(np.asarray(de, dtype=act.dtype))
    g = float(params.g)
    grads = {}
    grads["g"] = np.asarray(np.dot(de, proj), dtype=params.g.dtype)
    grads["r"] = np.asarray(de.sum(), dtype=params.r.dtype)
    dproj = de * g                       # (T,)
    dact = dproj[:, None] * vn[None, :]  # (T, d)
    dvn = act.T @ dproj                  # (d,)
    # v enters through vn = v/|v|: project out the radial component.
    grads["v"] = ((dvn - vn * np.dot(vn, dvn)) / norm).astype(params.v.dtype)
    dpre = dact * (1.0 - act * act)
    grads["w_s"] = np.outer(dpre.sum(axis=0), s).astype(params.w_s.dtype)
    grads["w_h"] = (dpre.T @ hs).astype(params.w_h.dtype)
    grads["b"] = dpre.sum(axis=0).astype(params.b.dtype)
    ds = dpre.sum(axis=0) @ params.w_s
    dh = dpre @ params.w_h
    return ds, dh, grads


def chunk_energy(params: ChunkEnergyParams, s: np.ndarray, h: np.ndarray):
    u, _ = chunk_energy_cached(params, s, h)
    return u


def chunk_energy_cached(params, s, h):
    single = h.ndim == 1
    hs = h[None, :] if single else h
    pre = s @ params.w_s.T + hs @ params.w_h.T + params.b
    act = np.tanh(pre)
    u = act @ params.v
    cache = (s, hs, act)
    return (float(u[0]) if single else u), cache


def chunk_energy_backward(params, cache, du):
    s, hs, act = cache
    du = np.atleast_1d(np.asarray(du, dtype=act.dtype))
    grads = {"v": (act.T @ du).astype(params.v.dtype)}
    dact = du[:, None] * params.v[None, :]
    dpre = dact * (1.0 - act * act)
    grads["w_s"] = np.outer(dpre.sum(axis=0), s).astype(params.w_s.dtype)
    grads["w_h"] = (dpre.T @ hs).astype(params.w_h.dtype)
    grads["b"] = dpre.sum(axis=0).astype(params.b.dtype)
    ds = dpre.sum(axis=0) @ params.w_s
    dh = dpre @ params.w_h
    return ds, dh, grads


def selection_probability(e, rng: RngStream | None = None, mode: str = "infer",
                          noise=None):
    """Selection probability sigma(e [+ noise]).

    Training mode perturbs the energies with unit Gaussian noise (drawn from
    ``rng`` unless pre-drawn ``noise`` is supplied) to push probabilities
    toward binary; inference is deterministic.
    """
    if mode == "train":
        if noise is None:
            if rng is None:
                raise ValueError("train mode needs an rng or pre-drawn noise")
            noise = rng.normal(np.shape(e))
        e = e + noise
    elif mode != "infer":
        raise ValueError(f"unknown mode {mode!r}")
    return sigmoid(e)


# ---------------------------------------------------------------------------
# expected (soft) mode
# ---------------------------------------------------------------------------

def clamp_probabilities(p):
    return np.clip(p, P_CLAMP, 1.0 - P_CLAMP)


def alignment_step(p, alpha_prev):
    """One output step of the division-free selection recurrence.

    q[j] = (1 - p[j-1]) q[j-1] + alpha_prev[j];  alpha[j] = p[j] q[j].
    ``p`` and ``alpha_prev`` have the frame axis last. Returns (alpha, q);
    ``q`` is cached for the backward pass.
    """
    frames = p.shape[-1]
    q = np.empty_like(p)
    q[..., 0] = alpha_prev[..., 0]
    for j in range(1, frames):
        q[..., j] = (1.0 - p[..., j - 1]) * q[..., j - 1] + alpha_prev[..., j]
    return p * q, q


def alignment_step_backward(p, q, dalpha, dq_in=None):
    """Reverse of one recurrence step: returns (dp, dalpha_prev)."""
    frames = p.shape[-1]
    dp = dalpha * q
    dq = dalpha * p
    if dq_in is not None:
        dq = dq + dq_in
    dalpha_prev = np.empty_like(dq)
    for j in range(frames - 1, 0, -1):
        dalpha_prev[..., j] = dq[..., j]
        dp[..., j - 1] += -q[..., j - 1] * dq[..., j]
        dq[..., j - 1] += (1.0 - p[..., j - 1]) * dq[..., j]
    dalpha_prev[..., 0] = dq[..., 0]
    return dp, dalpha_prev


def initial_alignment(frames: int, dtype=np.float64, lead_shape=()):
    """The "start before frame 0" convention: all mass on frame 0."""
    alpha = np.zeros(lead_shape + (frames,), dtype=dtype)
    alpha[..., 0] = 1.0
    return alpha


def expected_alignment(p: np.ndarray) -> np.ndarray:
    """Expected selection distribution for all output steps at once.

    ``p`` is (U, T) selection probabilities in [0, 1]; returns alpha (U, T)
    where row i is the probability that step i selects each frame.
    """
    alpha, _ = expected_alignment_cached(p)
    return alpha


def expected_alignment_cached(p):
    p = np.asarray(p)
    if p.ndim != 2:
        raise DimensionError("expected_alignment wants a (steps, frames) matrix")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("selection probabilities must lie in [0, 1]")
    pc = clamp_probabilities(p)
    steps, frames = pc.shape
    alpha = np.empty_like(pc)
    qs = np.empty_like(pc)
    prev = initial_alignment(frames, dtype=pc.dtype)
    for i in range(steps):
        alpha[i], qs[i] = alignment_step(pc[i], prev)
        prev = alpha[i]
    return alpha, (p, pc, alpha, qs)


def expected_alignment_backward(cache, dalpha):
    """Gradient w.r.t. the raw selection probabilities."""
    p, pc, alpha, qs = cache
    steps = pc.shape[0]
    dp = np.zeros_like(pc)
    carry = None  # gradient flowing into row i's alpha from row i+1's recurrence
    for i in range(steps - 1, -1, -1):
        da = dalpha[i] + carry if carry is not None else dalpha[i]
        dp[i], carry = alignment_step_backward(pc[i], qs[i], da)
    # clamp passes gradient only where it did not bind
    inside = (p > P_CLAMP) & (p < 1.0 - P_CLAMP)
    return dp * inside


def _window_view(u, w):
    """(..., T) -> (..., T, w) where slot [k, o] holds u[k - w + 1 + o],
    padded with -inf left of frame 0."""
    lead = u.shape[:-1]
    frames = u.shape[-1]
    win = np.full(lead + (frames, w), -np.inf, dtype=u.dtype)
    for d in range(w):  # d = k - j, the lag of slot w-1-d
        win[..., d:, w - 1 - d] = u[..., : frames - d]
    return win


def chunk_softmax_weights(u, w):
    """Per-window softmax weights s[k, o] over the w frames ending at k."""
    win = _window_view(u, w)
    m = np.max(win, axis=-1, keepdims=True)
    e = np.exp(win - m)
    return e / e.sum(axis=-1, keepdims=True)


def expected_chunk_attention(alpha, u, w: int):
    """Smear selection mass over length-``w`` windows via chunk energies.

    beta[j] collects, from every selection point k within w frames to the
    right, alpha[k] times the softmax weight of frame j inside k's window.
    Mass is conserved: sum(beta) == sum(alpha) row-wise.
    """
    beta, _ = expected_chunk_attention_cached(alpha, u, w)
    return beta


def expected_chunk_attention_cached(alpha, u, w):
    if w < 1:
        raise ValueError(f"chunk width must be >= 1, got {w}")
    frames = alpha.shape[-1]
    s = chunk_softmax_weights(u, w)
    beta = np.zeros_like(alpha)
    for d in range(min(w, frames)):
        beta[..., : frames - d] += alpha[..., d:] * s[..., d:, w - 1 - d]
    return beta, (alpha, s)


def expected_chunk_attention_backward(cache, w, dbeta):
    """Returns (dalpha, du) for the windowed smearing."""
    alpha, s = cache
    frames = alpha.shape[-1]
    dalpha = np.zeros_like(alpha)
    ds = np.zeros_like(s)
    for d in range(min(w, frames)):
        dalpha[..., d:] += dbeta[..., : frames - d] * s[..., d:, w - 1 - d]
        ds[..., d:, w - 1 - d] = alpha[..., d:] * dbeta[..., : frames - d]
    # softmax backward inside each window, then scatter back to frame order
    inner = np.sum(ds * s, axis=-1, keepdims=True)
    duwin = s * (ds - inner)
    du = np.zeros_like(alpha)
    for d in range(min(w, frames)):
        du[..., : frames - d] += duwin[..., d:, w - 1 - d]
    return dalpha, du


def soft_context(beta, h):
    """Context vectors c = beta . h; beta (..., T), h (T, D) -> (..., D)."""
    if beta.shape[-1] != h.shape[0]:
        raise DimensionError(f"beta frames {beta.shape[-1]} != encoder frames {h.shape[0]}")
    return beta @ h


def soft_context_backward(beta, h, dc):
    dbeta = dc @ h.T
    dh = np.outer(beta, dc) if beta.ndim == 1 else beta.T @ dc
    return dbeta, dh


# ---------------------------------------------------------------------------
# hard (streaming) mode
# ---------------------------------------------------------------------------

@dataclass
class HardDecodeState:
    """Per-utterance scan state for one attention instance."""

    t_prev: int = 0
    finished: bool = False


class ArrayFrameView:
    """Adapter exposing a fixed (T, D) array through the pull interface."""

    def __init__(self, h: np.ndarray):
        self._h = h

    def get(self, j: int):
        return self._h[j] if 0 <= j < self._h.shape[0] else None


def hard_decode_step(mono_params: MonotonicEnergyParams,
                     chunk_params: ChunkEnergyParams,
                     s: np.ndarray, frames, state: HardDecodeState, w: int):
    """One streaming output step: scan, select, attend over the chunk.

    ``frames`` is either a (T, D) array or any object with ``get(j)``
    returning frame j or None past the end; frames are requested in order so
    the caller can physically withhold future input. Scanning starts at the
    previous selection point and stops at the first frame whose selection
    probability reaches 0.5 (no noise at inference). If the input ends first,
    the context is zero and the state is marked finished.

    Returns (selected index or None, context, new state).
    """
    if state.finished:
        raise RuntimeError("hard_decode_step called on a finished state")
    if w < 1:
        raise ValueError(f"chunk width must be >= 1, got {w}")
    if isinstance(frames, np.ndarray):
        frames = ArrayFrameView(frames)

    dim_h = mono_params.w_h.shape[1]
    j = state.t_prev
    seen = []  # frames from t_prev onward, for the chunk window
    while True:
        h_j = frames.get(j)
        if h_j is None:
            ctx = np.zeros(dim_h, dtype=mono_params.w_h.dtype)
            return None, ctx, HardDecodeState(t_prev=state.t_prev, finished=True)
        seen.append(h_j)
        e = monotonic_energy(mono_params, s, h_j)
        if sigmoid(np.float64(e)) >= 0.5:
            break
        j += 1

    lo = max(0, j - w + 1)
    # the chunk may reach left of t_prev; those frames were pulled earlier
    window = [frames.get(idx) for idx in range(lo, state.t_prev)]
    window += seen[max(0, lo - state.t_prev):]
    window = np.stack(window, axis=0)
    u = chunk_energy(chunk_params, s, window)
    shifted = np.exp(u - np.max(u))
    weights = shifted / shifted.sum()
    ctx = weights @ window
    return j, ctx, HardDecodeState(t_prev=j, finished=False)
