"""Losses, beam search, discriminative fine-tuning, and the update loop.

Training runs in two phases: label-smoothed cross-entropy first, then an
optional expected-error phase that renormalizes an N-best list from beam
search and pushes probability mass toward low-edit-distance hypotheses
(mean-error baseline subtraction, interpolated with cross-entropy for
stability). Both phases share the Adam-style optimizer with global-norm
gradient clipping.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

from . import model as md
from . import multihead as mh
from .augment import SpecAugmentPolicy, apply_specaugment
from .numeric import NonFiniteError, RngStream, check_finite


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def log_softmax(logits):
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def cross_entropy_label_smoothed(logits: np.ndarray, targets, epsilon: float):
    """Label-smoothed cross-entropy averaged over steps.

    The target distribution puts 1-epsilon on the target token and spreads
    epsilon uniformly over the other V-1. Returns (loss, dloss/dlogits).
    """
    if not 0.0 <= epsilon < 1.0:
        raise ValueError("label smoothing must lie in [0, 1)")
    targets = np.asarray(targets, dtype=np.int64)
    steps, vocab = logits.shape
    if targets.shape != (steps,):
        raise ValueError(f"need {steps} targets, got shape {targets.shape}")
    if np.any(targets < 0) or np.any(targets >= vocab):
        raise ValueError("target token outside vocabulary")
    logp = log_softmax(logits.astype(np.float64, copy=False))
    smooth = epsilon / (vocab - 1)
    q = np.full((steps, vocab), smooth)
    q[np.arange(steps), targets] = 1.0 - epsilon
    loss = float(-np.sum(q * logp) / steps)
    dlogits = ((np.exp(logp) - q) / steps).astype(logits.dtype)
    return loss, dlogits


def edit_distance(hyp, ref) -> int:
    """Levenshtein distance with unit substitution/insertion/deletion costs."""
    hyp, ref = list(hyp), list(ref)
    if len(hyp) < len(ref):
        hyp, ref = ref, hyp
    previous = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, start=1):
        current = [i] + [0] * len(ref)
        for j, r in enumerate(ref, start=1):
            current[j] = min(previous[j] + 1,
                             current[j - 1] + 1,
                             previous[j - 1] + (h != r))
        previous = current
    return previous[len(ref)]


def character_error_rate(hyps, refs) -> float:
    """Aggregate edit distance over aggregate reference length."""
    total_edits = sum(edit_distance(h, r) for h, r in zip(hyps, refs))
    total_len = sum(len(r) for r in refs)
    return total_edits / max(1, total_len)


# ---------------------------------------------------------------------------
# beam search
# ---------------------------------------------------------------------------

@dataclass
class Hypothesis:
    """A candidate transcription: non-terminal tokens plus its accumulated
    log-probability (including the end token for finished hypotheses)."""

    tokens: tuple
    score: float
    finished: bool

    # decoding state, dropped once search ends
    dec_state: list = field(default=None, repr=False)
    query: np.ndarray = field(default=None, repr=False)
    alpha_prev: np.ndarray = field(default=None, repr=False)
    prev_token: int = field(default=md.EOS_ID, repr=False)


def beam_search(cfg: md.ModelConfig, params: dict, feats: np.ndarray,
                beam_width: int, nbest: int, max_len: int | None = None):
    """Length-bounded beam search over the expected-mode (noiseless) decoder.

    Returns up to ``nbest`` hypotheses sorted by score descending (ties broken
    by token order); scores are exact sums of token log-probabilities.
    Hypotheses still alive at the length bound are returned unfinished,
    scored without an end-token factor.
    """
    if not beam_width >= nbest >= 1:
        raise ValueError("need beam width >= nbest >= 1")
    enc_states, _ = md.encode(cfg, params, feats)
    shared = md.attention_view(params)
    head_cfg = cfg.head_config()
    enc_proj = mh.project_encoder_states(shared, head_cfg, enc_states)
    num_frames = enc_states.shape[0]
    if max_len is None:
        max_len = md.DECODE_LEN_FACTOR * num_frames + md.DECODE_LEN_SLACK

    root = Hypothesis(
        tokens=(), score=0.0, finished=False,
        dec_state=md.init_decoder_state(cfg, enc_states.dtype),
        query=np.zeros(cfg.decoder_width, dtype=enc_states.dtype),
        alpha_prev=mh.initial_head_alignment(head_cfg, num_frames,
                                             dtype=enc_states.dtype))
    alive = [root]
    finals = []

    def final_sort_key(h):
        return (-h.score, h.tokens)

    for _ in range(max_len):
        if not alive:
            break
        # scores only fall as hypotheses grow, so once the N-th best final
        # outranks every alive hypothesis the search is exact
        if len(finals) >= nbest:
            cutoff = sorted(finals, key=final_sort_key)[nbest - 1].score
            if max(h.score for h in alive) < cutoff:
                break
        candidates = []
        for hyp in alive:
            ctx_head, diag, _ = mh.expected_step(shared, head_cfg, hyp.query,
                                                 enc_proj, hyp.alpha_prev)
            context = params["ctx_proj"] @ ctx_head
            logits, dec_state, _ = md.decode_step_teacher_forced(
                cfg, params, hyp.prev_token, hyp.dec_state, context)
            logp = log_softmax(logits)
            for token in range(cfg.vocab_size):
                score = hyp.score + float(logp[token])
                if token == md.EOS_ID:
                    candidates.append(Hypothesis(tokens=hyp.tokens, score=score,
                                                 finished=True))
                else:
                    candidates.append(Hypothesis(
                        tokens=hyp.tokens + (token,), score=score,
                        finished=False, dec_state=dec_state,
                        query=dec_state[-1][0], alpha_prev=diag["alpha"],
                        prev_token=token))
        # finished extensions compete for beam slots like any other
        # candidate, which makes beam_width=1 coincide with greedy decoding
        candidates.sort(key=final_sort_key)
        kept = candidates[:beam_width]
        finals.extend(h for h in kept if h.finished)
        alive = [h for h in kept if not h.finished]
    finals.extend(alive)  # length bound reached: truncated hypotheses
    finals.sort(key=final_sort_key)
    out = []
    for hyp in finals[:nbest]:
        out.append(Hypothesis(tokens=hyp.tokens, score=hyp.score,
                              finished=hyp.finished))
    return out


def sequence_log_probability(cfg, params, feats, tokens) -> float:
    """Teacher-forced log P(tokens + end) under the noiseless expected mode."""
    targets = list(tokens) + [md.EOS_ID]
    fwd = md.forward_train(cfg, params, feats, targets)
    logp = log_softmax(fwd.logits)
    return float(logp[np.arange(len(targets)), targets].sum())


def next_token_scorer(cfg, params, feats):
    """Conditional next-token log-probabilities as a function of the prefix;
    the interface consumed by the exhaustive expectation oracle."""
    def scorer(prefix):
        targets = list(prefix) + [md.EOS_ID]
        fwd = md.forward_train(cfg, params, feats, targets)
        return log_softmax(fwd.logits)[len(prefix)]
    return scorer


# ---------------------------------------------------------------------------
# expected-error (MWER-style) loss
# ---------------------------------------------------------------------------

@dataclass
class MWERConfig:
    interpolation: float = 0.01  # weight of the cross-entropy stabilizer
    nbest: int = 4
    beam_width: int = 8
    epochs: int = 1
    learning_rate: float = 1e-4

    def __post_init__(self):
        if self.interpolation < 0:
            raise ValueError("interpolation weight must be >= 0")
        if not self.beam_width >= self.nbest >= 1:
            raise ValueError("need beam width >= nbest >= 1")


def mwer_loss(nbest, ref, interpolation: float, ce_loss: float):
    """Expected edit distance over the renormalized N-best, with the N-best
    mean error subtracted as a baseline, plus ``interpolation * ce_loss``.

    Returns (loss, gradient w.r.t. hypothesis scores). Renormalization makes
    the loss invariant to a constant shift of all scores, and equal errors
    give exactly zero score gradients.
    """
    if not nbest:
        raise ValueError("empty N-best list")
    scores = np.array([h.score for h in nbest], dtype=np.float64)
    errors = np.array([edit_distance(h.tokens, ref) for h in nbest],
                      dtype=np.float64)
    shifted = scores - scores.max()
    probs = np.exp(shifted) / np.exp(shifted).sum()
    centered = errors - errors.mean()
    expected = float(probs @ centered)
    loss = expected + interpolation * ce_loss
    dscores = probs * (centered - expected)
    return loss, dscores


def nbest_expected_error(nbest, ref) -> float:
    """Renormalized expectation of N-best edit distances (no baseline)."""
    if not nbest:
        raise ValueError("empty N-best list")
    scores = np.array([h.score for h in nbest], dtype=np.float64)
    errors = np.array([edit_distance(h.tokens, ref) for h in nbest],
                      dtype=np.float64)
    shifted = scores - scores.max()
    probs = np.exp(shifted) / np.exp(shifted).sum()
    return float(probs @ errors)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    """Adam moments plus global-norm clipping."""

    learning_rate: float
    clip_norm: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def init_optimizer(params: dict, learning_rate: float,
                   clip_norm: float = 5.0) -> OptimizerState:
    state = OptimizerState(learning_rate=learning_rate, clip_norm=clip_norm)
    for name, arr in params.items():
        state.m[name] = np.zeros_like(arr, dtype=np.float64)
        state.v[name] = np.zeros_like(arr, dtype=np.float64)
    return state


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2))
                             for g in grads.values())))


def apply_gradients(params: dict, grads: dict, state: OptimizerState) -> float:
    """Clipped Adam update, in place; returns the pre-clip gradient norm."""
    norm = global_norm(grads)
    scale = state.clip_norm / norm if norm > state.clip_norm else 1.0
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, grad in grads.items():
        g = grad.astype(np.float64) * scale
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        update = state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
        params[name] -= update.astype(params[name].dtype)
    return norm


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

class MetricsLog:
    """Line-oriented training records to stdout plus an optional CSV file
    with columns step,phase,loss,cer,grad_norm."""

    def __init__(self, csv_path=None, stream=None, echo_every: int = 20):
        self._csv = open(csv_path, "w", encoding="utf-8") if csv_path else None
        if self._csv:
            self._csv.write("step,phase,loss,cer,grad_norm\n")
        self._stream = stream if stream is not None else sys.stdout
        self._echo_every = max(1, echo_every)
        self.history = []

    def log(self, step, phase, loss, cer=None, grad_norm=None, echo=None):
        record = {"step": step, "phase": phase, "loss": loss, "cer": cer,
                  "grad_norm": grad_norm}
        self.history.append(record)
        if self._csv:
            cer_txt = "" if cer is None else f"{cer:.6f}"
            gn_txt = "" if grad_norm is None else f"{grad_norm:.6f}"
            self._csv.write(f"{step},{phase},{loss:.6f},{cer_txt},{gn_txt}\n")
        if echo or (echo is None and step % self._echo_every == 0):
            parts = [f"step={step}", f"phase={phase}", f"loss={loss:.4f}"]
            if cer is not None:
                parts.append(f"cer={cer:.4f}")
            if grad_norm is not None:
                parts.append(f"grad_norm={grad_norm:.3f}")
            print("  ".join(parts), file=self._stream)

    def close(self):
        if self._csv:
            self._csv.close()
            self._csv = None


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

@dataclass
class TrainHyper:
    batch_size: int = 8
    epochs: int = 4
    learning_rate: float = 3e-3
    clip_norm: float = 5.0
    label_smoothing: float = 0.1


def _draw_head_noise(cfg: md.ModelConfig, rng: RngStream, steps: int,
                     frames: int) -> np.ndarray:
    """Per-head noise from per-head substreams, (U, K, T')."""
    noise = np.empty((steps, cfg.num_heads, frames), dtype=np.float32)
    for head in range(cfg.num_heads):
        noise[:, head, :] = rng.derive(head).normal((steps, frames),
                                                    dtype=np.float32)
    return noise


def train_step(cfg: md.ModelConfig, params: dict, batch, optimizer,
               label_smoothing: float, with_noise: bool = True):
    """One cross-entropy update over ``batch`` = [(feats, symbols, rng), ...].

    Gradients are averaged over the batch by accumulating in a fixed order,
    so results are reproducible regardless of any data-loading parallelism.
    A non-finite loss aborts before touching the parameters.
    """
    grads = md.zero_grads(params)
    total_loss = 0.0
    scale = 1.0 / len(batch)
    for feats, symbols, rng in batch:
        targets = list(symbols) + [md.EOS_ID]
        noise = None
        if with_noise:
            frames = cfg.encoded_length(feats.shape[0])
            noise = _draw_head_noise(cfg, rng, len(targets), frames)
        fwd = md.forward_train(cfg, params, feats, targets, noise=noise)
        loss, dlogits = cross_entropy_label_smoothed(fwd.logits, targets,
                                                     label_smoothing)
        if not np.isfinite(loss):
            raise NonFiniteError(f"non-finite training loss {loss}")
        total_loss += loss * scale
        md.forward_train_backward(cfg, params, fwd, dlogits * scale, grads)
    for name, g in grads.items():
        check_finite(g, f"gradient of {name}")
    if optimizer is None:
        return total_loss, global_norm(grads)
    norm = apply_gradients(params, grads, optimizer)
    return total_loss, norm


def evaluate_cer(cfg: md.ModelConfig, params: dict, dataset, limit=None) -> float:
    """Corpus CER of offline hard decoding (identical to streaming output)."""
    feats_list = dataset.features[:limit] if limit else dataset.features
    labels = dataset.labels[:limit] if limit else dataset.labels
    hyps = [md.decode_offline(cfg, params, feats).tokens for feats in feats_list]
    return character_error_rate(hyps, labels)


def fit_cross_entropy(cfg: md.ModelConfig, params: dict, train_data,
                      hyper: TrainHyper, rng: RngStream,
                      augment_policy: SpecAugmentPolicy | None = None,
                      eval_data=None, metrics: MetricsLog | None = None,
                      eval_limit=None):
    """Phase 1: teacher-forced label-smoothed cross-entropy with optional
    feature masking. Returns the final evaluation CER (or None)."""
    optimizer = init_optimizer(params, hyper.learning_rate, hyper.clip_norm)
    metrics = metrics or MetricsLog()
    step = 0
    final_cer = None
    for epoch in range(hyper.epochs):
        order = rng.derive(100, epoch).permutation(len(train_data))
        for start in range(0, len(order), hyper.batch_size):
            chosen = order[start:start + hyper.batch_size]
            batch = []
            for index in chosen:
                feats = train_data.features[index]
                if augment_policy is not None:
                    feats = apply_specaugment(
                        feats, augment_policy, rng.derive(200, epoch, int(index)))
                batch.append((feats, train_data.labels[index],
                              rng.derive(300, epoch, int(index))))
            loss, norm = train_step(cfg, params, batch, optimizer,
                                    hyper.label_smoothing)
            step += 1
            metrics.log(step, "ce", loss, grad_norm=norm)
        if eval_data is not None:
            final_cer = evaluate_cer(cfg, params, eval_data, limit=eval_limit)
            metrics.log(step, "ce-eval", loss, cer=final_cer, echo=True)
    return final_cer


def mwer_train_step(cfg: md.ModelConfig, params: dict, batch, optimizer,
                    mwer_cfg: MWERConfig, label_smoothing: float):
    """One expected-error update over [(feats, symbols), ...].

    Hypothesis scores are differentiated by replaying each hypothesis through
    the noiseless teacher-forced path (identical floats to the beam's own
    scoring); the cross-entropy stabilizer uses the reference targets.
    """
    grads = md.zero_grads(params)
    total_loss = 0.0
    scale = 1.0 / len(batch)
    for feats, symbols in batch:
        targets = list(symbols) + [md.EOS_ID]
        ref_fwd = md.forward_train(cfg, params, feats, targets)
        ce_loss, ce_dlogits = cross_entropy_label_smoothed(
            ref_fwd.logits, targets, label_smoothing)
        nbest = beam_search(cfg, params, feats, mwer_cfg.beam_width,
                            mwer_cfg.nbest)
        loss, dscores = mwer_loss(nbest, symbols, mwer_cfg.interpolation, ce_loss)
        if not np.isfinite(loss):
            raise NonFiniteError(f"non-finite expected-error loss {loss}")
        total_loss += loss * scale
        md.forward_train_backward(cfg, params, ref_fwd,
                                  ce_dlogits * (mwer_cfg.interpolation * scale),
                                  grads)
        for hyp, dscore in zip(nbest, dscores):
            if dscore == 0.0:
                continue
            hyp_targets = list(hyp.tokens) + [md.EOS_ID]
            fwd = md.forward_train(cfg, params, feats, hyp_targets)
            probs = np.exp(log_softmax(fwd.logits))
            dlogits = -probs
            dlogits[np.arange(len(hyp_targets)), hyp_targets] += 1.0
            if not hyp.finished:
                dlogits[-1] = 0.0  # truncated: the end-token factor is not in the score
            md.forward_train_backward(cfg, params, fwd,
                                      dlogits * (dscore * scale), grads)
    norm = apply_gradients(params, grads, optimizer)
    return total_loss, norm


def fit_mwer(cfg: md.ModelConfig, params: dict, train_data,
             mwer_cfg: MWERConfig, hyper: TrainHyper, rng: RngStream,
             eval_data=None, metrics: MetricsLog | None = None,
             eval_limit=None):
    """Phase 2: expected-error fine-tuning from a cross-entropy checkpoint."""
    optimizer = init_optimizer(params, mwer_cfg.learning_rate, hyper.clip_norm)
    metrics = metrics or MetricsLog()
    step = 0
    final_cer = None
    for epoch in range(mwer_cfg.epochs):
        order = rng.derive(400, epoch).permutation(len(train_data))
        for start in range(0, len(order), hyper.batch_size):
            chosen = order[start:start + hyper.batch_size]
            batch = [(train_data.features[i], train_data.labels[i])
                     for i in chosen]
            loss, norm = mwer_train_step(cfg, params, batch, optimizer,
                                         mwer_cfg, hyper.label_smoothing)
            step += 1
            metrics.log(step, "mwer", loss, grad_norm=norm)
        if eval_data is not None:
            final_cer = evaluate_cer(cfg, params, eval_data, limit=eval_limit)
            metrics.log(step, "mwer-eval", loss, cer=final_cer, echo=True)
    return final_cer
