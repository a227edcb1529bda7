"""Toy-scale streaming encoder-decoder around multi-head chunkwise attention.

Encoder: stacked unidirectional LSTM layers with elementwise max pooling
along time after configured layers (the only subsampling). Decoder: LSTM
layers that all receive the (projected) attention context concatenated to
their input; logits are an affine map of the top state. The attention query
for output step i is the decoder's top hidden state from step i-1.

Two execution paths share the parameters:

* ``forward_train`` — teacher-forced expected-mode attention, fully
  differentiable via ``forward_train_backward``;
* ``forward_stream`` — hard-mode greedy decoding over a pull-based frame
  source that is consumed strictly left to right, so emitted tokens can
  never depend on frames beyond the reported horizon.

Parameters live in a flat name->array dict (see ``init_params``) that maps
1:1 onto the checkpoint container.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import attention as att
from . import multihead as mh
from . import container
from .numeric import RngStream, check_finite, sigmoid, tanh, uniform_init

EOS_ID = 0
DECODE_LEN_FACTOR = 2
DECODE_LEN_SLACK = 10


@dataclass
class ModelConfig:
    """Architecture hyperparameters; the desk-scale defaults follow the
    w=2 / 4-head recipe with dims cut down to CPU size."""

    vocab_size: int
    feature_dim: int
    encoder_layers: int = 2
    encoder_width: int = 64
    decoder_layers: int = 2
    decoder_width: int = 64
    embed_dim: int = 16
    context_width: int = 64
    energy_dim: int = 16
    num_heads: int = 4
    chunk_width: int = 2
    pooling_after: tuple = (1, 2)
    pooling_width: int = 2

    def __post_init__(self):
        self.pooling_after = tuple(self.pooling_after)
        if self.vocab_size < 2:
            raise ValueError("vocabulary needs at least the end token and one symbol")
        for layer in self.pooling_after:
            if not 1 <= layer <= self.encoder_layers:
                raise ValueError(f"pooling position {layer} outside encoder layers")
        if self.pooling_width < 1:
            raise ValueError("pooling width must be >= 1")
        self.head_config()  # validates divisibility

    def head_config(self) -> mh.HeadConfig:
        cfg = mh.HeadConfig(num_heads=self.num_heads, chunk_width=self.chunk_width)
        cfg.head_dim(self.encoder_width)
        cfg.head_dim(self.decoder_width)
        return cfg

    @property
    def subsampling_factor(self) -> int:
        return self.pooling_width ** len(self.pooling_after)

    def encoded_length(self, num_frames: int) -> int:
        """Encoder output length for an input of ``num_frames`` (ceil at
        every pooling stage)."""
        length = num_frames
        for _ in self.pooling_after:
            length = math.ceil(length / self.pooling_width)
        return length

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def _init_lstm(rng, prefix, in_dim, width, dtype, out):
    out[f"{prefix}.w"] = uniform_init(rng.derive(1), (4 * width, in_dim), in_dim, dtype)
    out[f"{prefix}.u"] = uniform_init(rng.derive(2), (4 * width, width), width, dtype)
    bias = np.zeros(4 * width, dtype=dtype)
    bias[width:2 * width] = 1.0  # open forget gates at the start
    out[f"{prefix}.b"] = bias


def init_params(cfg: ModelConfig, rng: RngStream, dtype=np.float32) -> dict:
    """Deterministic parameter initialization from the given stream."""
    params = {}
    in_dim = cfg.feature_dim
    for layer in range(cfg.encoder_layers):
        _init_lstm(rng.derive(10 + layer), f"enc{layer}", in_dim, cfg.encoder_width,
                   dtype, params)
        in_dim = cfg.encoder_width
    head_cfg = cfg.head_config()
    shared = mh.init_shared_head_params(rng.derive(20), cfg.energy_dim,
                                        cfg.decoder_width, cfg.encoder_width,
                                        head_cfg, dtype)
    for group, energy in (("mono", shared.mono), ("chunk", shared.chunk)):
        for name, val in vars(energy).items():
            params[f"attn.{group}.{name}"] = val
    head_dim = head_cfg.head_dim(cfg.encoder_width)
    params["ctx_proj"] = uniform_init(rng.derive(30), (cfg.context_width, head_dim),
                                      head_dim, dtype)
    params["embed"] = uniform_init(rng.derive(31), (cfg.vocab_size, cfg.embed_dim),
                                   cfg.embed_dim, dtype)
    in_dim = cfg.embed_dim + cfg.context_width
    for layer in range(cfg.decoder_layers):
        _init_lstm(rng.derive(40 + layer), f"dec{layer}", in_dim, cfg.decoder_width,
                   dtype, params)
        in_dim = cfg.decoder_width + cfg.context_width
    params["out.w"] = uniform_init(rng.derive(50), (cfg.vocab_size, cfg.decoder_width),
                                   cfg.decoder_width, dtype)
    params["out.b"] = np.zeros(cfg.vocab_size, dtype=dtype)
    return params


def attention_view(params: dict) -> mh.SharedHeadParams:
    """Dataclass view over the attention entries of the flat dict."""
    return mh.SharedHeadParams(
        mono=att.MonotonicEnergyParams(
            w_s=params["attn.mono.w_s"], w_h=params["attn.mono.w_h"],
            v=params["attn.mono.v"], b=params["attn.mono.b"],
            g=params["attn.mono.g"], r=params["attn.mono.r"]),
        chunk=att.ChunkEnergyParams(
            w_s=params["attn.chunk.w_s"], w_h=params["attn.chunk.w_h"],
            v=params["attn.chunk.v"], b=params["attn.chunk.b"]),
    )


def zero_grads(params: dict) -> dict:
    return {name: np.zeros_like(arr) for name, arr in params.items()}


def accumulate(grads: dict, update: dict, prefix: str = "") -> None:
    for name, val in update.items():
        grads[prefix + name] += val


def num_parameters(params: dict) -> int:
    return sum(arr.size for arr in params.values())


# ---------------------------------------------------------------------------
# recurrent cell
# ---------------------------------------------------------------------------

def lstm_step(w, u, b, x, h_prev, c_prev):
    width = h_prev.shape[0]
    z = w @ x + u @ h_prev + b
    zi, zf, zg, zo = (z[:width], z[width:2 * width],
                      z[2 * width:3 * width], z[3 * width:])
    gi, gf, go = sigmoid(zi), sigmoid(zf), sigmoid(zo)
    gg = tanh(zg)
    c = gf * c_prev + gi * gg
    hc = tanh(c)
    h = go * hc
    return h, c, (x, h_prev, c_prev, gi, gf, gg, go, hc)


def lstm_step_backward(w, u, cache, dh, dc):
    x, h_prev, c_prev, gi, gf, gg, go, hc = cache
    do = dh * hc
    dc_total = dc + dh * go * (1.0 - hc * hc)
    dzi = dc_total * gg * gi * (1.0 - gi)
    dzf = dc_total * c_prev * gf * (1.0 - gf)
    dzg = dc_total * gi * (1.0 - gg * gg)
    dzo = do * go * (1.0 - go)
    dz = np.concatenate([dzi, dzf, dzg, dzo])
    grads = {"w": np.outer(dz, x), "u": np.outer(dz, h_prev), "b": dz}
    dx = w.T @ dz
    dh_prev = u.T @ dz
    dc_prev = dc_total * gf
    return dx, dh_prev, dc_prev, grads


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def max_pool_time(states: np.ndarray, width: int):
    """Elementwise max over consecutive windows along time; the final window
    may be partial (ceil semantics). Returns (pooled, argmax rows)."""
    if width < 1:
        raise ValueError(f"pooling width must be >= 1, got {width}")
    frames, dim = states.shape
    out_len = math.ceil(frames / width)
    pooled = np.empty((out_len, dim), dtype=states.dtype)
    winners = np.empty((out_len, dim), dtype=np.int64)
    cols = np.arange(dim)
    for m in range(out_len):
        lo = m * width
        seg = states[lo:min(lo + width, frames)]
        arg = seg.argmax(axis=0)
        winners[m] = lo + arg
        pooled[m] = seg[arg, cols]
    return pooled, winners


def max_pool_time_backward(dpooled, winners, in_shape):
    dstates = np.zeros(in_shape, dtype=dpooled.dtype)
    cols = np.broadcast_to(np.arange(in_shape[1]), winners.shape)
    np.add.at(dstates, (winners, cols), dpooled)
    return dstates


# ---------------------------------------------------------------------------
# encoder
# ---------------------------------------------------------------------------

def encode(cfg: ModelConfig, params: dict, feats: np.ndarray):
    """Run the full encoder stack; returns (states, cache) with causal states:
    pooled frame m depends only on input frames < (m+1) * subsampling."""
    frames = feats.shape[0]
    if frames < cfg.subsampling_factor:
        raise ValueError(
            f"sequence of {frames} frames is shorter than the subsampling "
            f"factor {cfg.subsampling_factor}")
    x_seq = feats
    layer_caches = []
    for layer in range(cfg.encoder_layers):
        w, u, b = (params[f"enc{layer}.w"], params[f"enc{layer}.u"],
                   params[f"enc{layer}.b"])
        width = cfg.encoder_width
        h = np.zeros(width, dtype=x_seq.dtype)
        c = np.zeros(width, dtype=x_seq.dtype)
        outs = np.empty((x_seq.shape[0], width), dtype=x_seq.dtype)
        steps = []
        for t in range(x_seq.shape[0]):
            h, c, step_cache = lstm_step(w, u, b, x_seq[t], h, c)
            outs[t] = h
            steps.append(step_cache)
        pooled_cache = None
        if (layer + 1) in cfg.pooling_after:
            pooled, winners = max_pool_time(outs, cfg.pooling_width)
            pooled_cache = (winners, outs.shape)
            next_seq = pooled
        else:
            next_seq = outs
        layer_caches.append((steps, pooled_cache, x_seq.shape))
        x_seq = next_seq
    return x_seq, layer_caches


def encode_backward(cfg: ModelConfig, params: dict, layer_caches, dstates, grads):
    dseq = dstates
    for layer in range(cfg.encoder_layers - 1, -1, -1):
        steps, pooled_cache, in_shape = layer_caches[layer]
        if pooled_cache is not None:
            winners, out_shape = pooled_cache
            dseq = max_pool_time_backward(dseq, winners, out_shape)
        w, u = params[f"enc{layer}.w"], params[f"enc{layer}.u"]
        dh = np.zeros(cfg.encoder_width, dtype=dseq.dtype)
        dc = np.zeros(cfg.encoder_width, dtype=dseq.dtype)
        dx_seq = np.empty(in_shape, dtype=dseq.dtype)
        for t in range(len(steps) - 1, -1, -1):
            dx, dh, dc, step_grads = lstm_step_backward(w, u, steps[t],
                                                        dseq[t] + dh, dc)
            dx_seq[t] = dx
            accumulate(grads, step_grads, prefix=f"enc{layer}.")
        dseq = dx_seq
    return dseq


# ---------------------------------------------------------------------------
# decoder
# ---------------------------------------------------------------------------

def init_decoder_state(cfg: ModelConfig, dtype):
    return [(np.zeros(cfg.decoder_width, dtype=dtype),
             np.zeros(cfg.decoder_width, dtype=dtype))
            for _ in range(cfg.decoder_layers)]


def decode_step_teacher_forced(cfg: ModelConfig, params: dict, prev_token: int,
                               state, context: np.ndarray):
    """One decoder step: embed the previous token, feed the context into
    every layer, return logits over the vocabulary."""
    if not 0 <= prev_token < cfg.vocab_size:
        raise ValueError(f"token id {prev_token} outside vocabulary")
    x = np.concatenate([params["embed"][prev_token], context])
    new_state, caches = [], []
    for layer in range(cfg.decoder_layers):
        if layer > 0:
            x = np.concatenate([x, context])
        h, c, cache = lstm_step(params[f"dec{layer}.w"], params[f"dec{layer}.u"],
                                params[f"dec{layer}.b"], x,
                                state[layer][0], state[layer][1])
        new_state.append((h, c))
        caches.append(cache)
        x = h
    logits = params["out.w"] @ x + params["out.b"]
    return logits, new_state, (prev_token, caches, x)


def decode_step_backward(cfg: ModelConfig, params: dict, step_cache, dlogits,
                         dstate, dtop_extra, grads):
    """Reverse one decoder step. ``dstate`` carries (dh, dc) per layer from
    the future; ``dtop_extra`` is extra gradient on the top hidden state
    (attention query use). Returns (dcontext, dstate_prev, dembed_row info)."""
    prev_token, caches, top = step_cache
    grads["out.w"] += np.outer(dlogits, top)
    grads["out.b"] += dlogits
    dx = params["out.w"].T @ dlogits + dtop_extra
    dcontext = np.zeros(cfg.context_width, dtype=top.dtype)
    dstate_prev = []
    for layer in range(cfg.decoder_layers - 1, -1, -1):
        dh = dx + dstate[layer][0]
        dc = dstate[layer][1]
        dx, dh_prev, dc_prev, step_grads = lstm_step_backward(
            params[f"dec{layer}.w"], params[f"dec{layer}.u"], caches[layer], dh, dc)
        accumulate(grads, step_grads, prefix=f"dec{layer}.")
        dstate_prev.append((dh_prev, dc_prev))
        if layer > 0:
            dcontext += dx[-cfg.context_width:]
            dx = dx[:-cfg.context_width]
    dcontext += dx[cfg.embed_dim:]
    grads["embed"][prev_token] += dx[:cfg.embed_dim]
    dstate_prev.reverse()
    return dcontext, dstate_prev


# ---------------------------------------------------------------------------
# teacher-forced training forward/backward
# ---------------------------------------------------------------------------

@dataclass
class TrainForward:
    logits: np.ndarray        # (U, V)
    alpha: np.ndarray         # (U, K, T') expected selection per head
    beta: np.ndarray          # (U, K, T') chunk weights per head
    enc_states: np.ndarray    # (T', D)
    _caches: dict = field(repr=False, default_factory=dict)


def forward_train(cfg: ModelConfig, params: dict, feats: np.ndarray,
                  targets, noise: np.ndarray | None = None) -> TrainForward:
    """Teacher-forced expected-mode pass.

    ``targets`` must end with the end token; step i consumes target i-1
    (the end token bootstraps step 0). ``noise`` is an optional pre-drawn
    (U, K, T') Gaussian tensor applied to the monotonic energies.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if targets.ndim != 1 or targets.size < 1:
        raise ValueError("need a non-empty 1-D target sequence")
    if targets[-1] != EOS_ID:
        raise ValueError("target sequence must end with the end token")
    enc_states, enc_cache = encode(cfg, params, feats)
    shared = attention_view(params)
    head_cfg = cfg.head_config()
    enc_proj = mh.project_encoder_states(shared, head_cfg, enc_states)
    num_steps = targets.size
    num_frames = enc_states.shape[0]
    if noise is not None and noise.shape != (num_steps, cfg.num_heads, num_frames):
        raise ValueError(f"noise shape {noise.shape} does not match "
                         f"{(num_steps, cfg.num_heads, num_frames)}")

    logits = np.empty((num_steps, cfg.vocab_size), dtype=enc_states.dtype)
    alpha = np.empty((num_steps, cfg.num_heads, num_frames), dtype=enc_states.dtype)
    beta = np.empty_like(alpha)
    alpha_prev = mh.initial_head_alignment(head_cfg, num_frames, dtype=enc_states.dtype)
    dec_state = init_decoder_state(cfg, enc_states.dtype)
    query = np.zeros(cfg.decoder_width, dtype=enc_states.dtype)
    prev_token = EOS_ID
    att_caches, dec_caches, ctx_heads = [], [], []
    for i in range(num_steps):
        step_noise = noise[i] if noise is not None else None
        ctx_head, diag, att_cache = mh.expected_step(shared, head_cfg, query,
                                                     enc_proj, alpha_prev, step_noise)
        alpha[i], beta[i] = diag["alpha"], diag["beta"]
        alpha_prev = diag["alpha"]
        context = params["ctx_proj"] @ ctx_head
        logits[i], dec_state, dec_cache = decode_step_teacher_forced(
            cfg, params, prev_token, dec_state, context)
        att_caches.append(att_cache)
        dec_caches.append(dec_cache)
        ctx_heads.append(ctx_head)
        query = dec_state[-1][0]
        prev_token = int(targets[i])
    check_finite(logits, "decoder logits")
    return TrainForward(
        logits=logits, alpha=alpha, beta=beta, enc_states=enc_states,
        _caches={"enc": enc_cache, "att": att_caches, "dec": dec_caches,
                 "ctx_heads": ctx_heads, "shared": shared, "head_cfg": head_cfg,
                 "feats_shape": feats.shape})


def forward_train_backward(cfg: ModelConfig, params: dict, fwd: TrainForward,
                           dlogits: np.ndarray, grads: dict | None = None):
    """Backpropagate through the whole teacher-forced pass.

    Returns (grads, dfeats); ``grads`` may be passed in to accumulate across
    utterances.
    """
    caches = fwd._caches
    shared, head_cfg = caches["shared"], caches["head_cfg"]
    if grads is None:
        grads = zero_grads(params)
    num_steps = dlogits.shape[0]
    denc = np.zeros_like(fwd.enc_states)
    dquery_next = np.zeros(cfg.decoder_width, dtype=dlogits.dtype)
    dstate = [(np.zeros(cfg.decoder_width, dtype=dlogits.dtype),
               np.zeros(cfg.decoder_width, dtype=dlogits.dtype))
              for _ in range(cfg.decoder_layers)]
    dalpha_next = None
    for i in range(num_steps - 1, -1, -1):
        dcontext, dstate = decode_step_backward(cfg, params, caches["dec"][i],
                                                dlogits[i], dstate, dquery_next,
                                                grads)
        grads["ctx_proj"] += np.outer(dcontext, caches["ctx_heads"][i])
        dctx_head = params["ctx_proj"].T @ dcontext
        dquery_next, dh, dalpha_next, att_grads = mh.expected_step_backward(
            shared, head_cfg, caches["att"][i], dctx_head, dalpha_next)
        denc += dh
        accumulate(grads, att_grads, prefix="attn.")
    # step 0's query is the zero vector; its gradient goes nowhere
    dfeats = encode_backward(cfg, params, caches["enc"], denc, grads)
    return grads, dfeats


def teacher_forced_error_rate(fwd: TrainForward, targets) -> float:
    """Fraction of teacher-forced argmax predictions that miss the target."""
    pred = fwd.logits.argmax(axis=1)
    targets = np.asarray(targets)
    return float(np.mean(pred != targets))


# ---------------------------------------------------------------------------
# streaming inference
# ---------------------------------------------------------------------------

class ArraySource:
    """Pull interface over an in-memory utterance: next() yields frames in
    order and None at the end."""

    def __init__(self, feats: np.ndarray):
        self._feats = feats
        self._cursor = 0

    def next(self):
        if self._cursor >= self._feats.shape[0]:
            return None
        frame = self._feats[self._cursor]
        self._cursor += 1
        return frame


class FrameHorizonError(RuntimeError):
    """A decoder tried to pull input beyond what its emissions justify."""


class GuardedSource(ArraySource):
    """ArraySource that faults when pulled past ``limit`` frames; used to
    prove emitted tokens never depend on frames beyond their horizon.
    Reading past the true end of input is normal end-of-stream, not a fault."""

    def __init__(self, feats: np.ndarray, limit: int):
        super().__init__(feats)
        self.limit = limit

    def next(self):
        if self._cursor >= self._feats.shape[0]:
            return None
        if self._cursor >= self.limit:
            raise FrameHorizonError(
                f"attempted to read frame {self._cursor} beyond horizon {self.limit}")
        return super().next()


class _LstmStreamState:
    def __init__(self, width, dtype):
        self.h = np.zeros(width, dtype=dtype)
        self.c = np.zeros(width, dtype=dtype)


class StreamingEncoder:
    """Incremental twin of ``encode``: push frames one at a time, collect
    encoder states as pooling windows fill. Produces bitwise the same states
    as the offline path."""

    def __init__(self, cfg: ModelConfig, params: dict, dtype=np.float32):
        self.cfg, self.params = cfg, params
        self._lstm = [_LstmStreamState(cfg.encoder_width, dtype)
                      for _ in range(cfg.encoder_layers)]
        self._pool_buf = {layer: [] for layer in range(cfg.encoder_layers)
                          if (layer + 1) in cfg.pooling_after}
        self._finished = False

    def _feed(self, layer: int, x):
        """Feed one frame into ``layer``; returns states popping out the top."""
        cfg = self.cfg
        if layer == cfg.encoder_layers:
            return [x]
        state = self._lstm[layer]
        state.h, state.c, _ = lstm_step(self.params[f"enc{layer}.w"],
                                        self.params[f"enc{layer}.u"],
                                        self.params[f"enc{layer}.b"],
                                        x, state.h, state.c)
        y = state.h
        if layer in self._pool_buf:
            buf = self._pool_buf[layer]
            buf.append(y)
            if len(buf) < cfg.pooling_width:
                return []
            y = np.max(np.stack(buf), axis=0)
            buf.clear()
        return self._feed(layer + 1, y)

    def push(self, frame) -> list:
        if self._finished:
            raise RuntimeError("push after finish")
        return self._feed(0, frame)

    def finish(self) -> list:
        """Flush partial pooling windows (ceil semantics)."""
        self._finished = True
        out = []
        for layer in sorted(self._pool_buf):
            buf = self._pool_buf[layer]
            if not buf:
                continue
            y = np.max(np.stack(buf), axis=0)
            buf.clear()
            out.extend(self._feed(layer + 1, y))
        return out


class StreamingStateProvider:
    """Lazily materialized encoder states over a pull-based frame source.

    ``get(j)`` pulls exactly as many raw frames as needed to produce encoder
    state j, or returns None once the input is exhausted. ``frames_pulled``
    is the raw-frame watermark used for horizon reporting.
    """

    def __init__(self, cfg: ModelConfig, params: dict, source, dtype=np.float32):
        self._encoder = StreamingEncoder(cfg, params, dtype)
        self._source = source
        self._states = []
        self._exhausted = False
        self.frames_pulled = 0

    def get(self, j: int):
        while j >= len(self._states) and not self._exhausted:
            frame = self._source.next()
            if frame is None:
                self._exhausted = True
                self._states.extend(self._encoder.finish())
                break
            self.frames_pulled += 1
            self._states.extend(self._encoder.push(frame))
        return self._states[j] if j < len(self._states) else None

    @property
    def num_states(self):
        return len(self._states) if self._exhausted else None


@dataclass
class StreamResult:
    tokens: list          # emitted token ids, end token not included
    horizons: list        # raw frames consumed when each token was emitted
    selections: list      # per-token per-head encoder-frame picks


def forward_stream(cfg: ModelConfig, params: dict, source,
                   max_len: int | None = None) -> StreamResult:
    """Greedy hard-mode streaming decode over a pull-based source."""
    dtype = params["embed"].dtype
    provider = StreamingStateProvider(cfg, params, source, dtype)
    shared = attention_view(params)
    head_cfg = cfg.head_config()
    head_states = [att.HardDecodeState() for _ in range(cfg.num_heads)]
    dec_state = init_decoder_state(cfg, dtype)
    query = np.zeros(cfg.decoder_width, dtype=dtype)
    prev_token = EOS_ID
    tokens, horizons, selections = [], [], []
    step = 0
    while True:
        if max_len is not None and step >= max_len:
            break
        if max_len is None and provider.num_states is not None:
            if step >= DECODE_LEN_FACTOR * provider.num_states + DECODE_LEN_SLACK:
                break
        picks, ctx_head, head_states = mh.hard_step(shared, head_cfg, query,
                                                    provider, head_states)
        context = params["ctx_proj"] @ ctx_head
        logits, dec_state, _ = decode_step_teacher_forced(cfg, params, prev_token,
                                                          dec_state, context)
        token = int(logits.argmax())
        step += 1
        if token == EOS_ID:
            break
        tokens.append(token)
        horizons.append(provider.frames_pulled)
        selections.append(picks)
        query = dec_state[-1][0]
        prev_token = token
    return StreamResult(tokens=tokens, horizons=horizons, selections=selections)


def decode_offline(cfg: ModelConfig, params: dict, feats: np.ndarray,
                   max_len: int | None = None) -> StreamResult:
    """Hard decode over fully encoded input (the non-incremental path)."""
    enc_states, _ = encode(cfg, params, feats)
    shared = attention_view(params)
    head_cfg = cfg.head_config()
    frames_view = att.ArrayFrameView(enc_states)
    head_states = [att.HardDecodeState() for _ in range(cfg.num_heads)]
    dec_state = init_decoder_state(cfg, enc_states.dtype)
    query = np.zeros(cfg.decoder_width, dtype=enc_states.dtype)
    prev_token = EOS_ID
    limit = max_len if max_len is not None else (
        DECODE_LEN_FACTOR * enc_states.shape[0] + DECODE_LEN_SLACK)
    tokens, horizons, selections = [], [], []
    for _ in range(limit):
        picks, ctx_head, head_states = mh.hard_step(shared, head_cfg, query,
                                                    frames_view, head_states)
        context = params["ctx_proj"] @ ctx_head
        logits, dec_state, _ = decode_step_teacher_forced(cfg, params, prev_token,
                                                          dec_state, context)
        token = int(logits.argmax())
        if token == EOS_ID:
            break
        tokens.append(token)
        chosen = [t for t in picks if t is not None]
        watermark = (max(chosen) + 1) * cfg.subsampling_factor if chosen else feats.shape[0]
        horizons.append(min(watermark, feats.shape[0]))
        selections.append(picks)
        query = dec_state[-1][0]
        prev_token = token
    return StreamResult(tokens=tokens, horizons=horizons, selections=selections)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(prefix, params: dict, cfg: ModelConfig) -> None:
    """Write ``<prefix>.mthm`` (tensors) and ``<prefix>.json`` (config)."""
    container.write_tensors(f"{prefix}.mthm", params)
    with open(f"{prefix}.json", "w", encoding="utf-8") as fh:
        fh.write(cfg.to_json() + "\n")


def load_checkpoint(prefix):
    params = container.read_tensors(f"{prefix}.mthm")
    with open(f"{prefix}.json", "r", encoding="utf-8") as fh:
        cfg = ModelConfig.from_json(fh.read())
    return params, cfg
