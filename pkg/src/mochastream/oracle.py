"""Brute-force and finite-difference verifiers.

Everything here is written directly against the math being checked —
path enumeration, naive double loops, central differences — and shares no
code with the kernels under test. Exponential in the instance size by
design; callers keep instances tiny.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numeric import NonFiniteError

MAX_ENUM_STEPS = 6
MAX_ENUM_FRAMES = 8


def _enumerate(p: np.ndarray):
    """Walk every monotonic selection path, accumulating exact probabilities.

    A path selects one frame per output step, never moving left; scanning past
    the last frame kills the path (the "no selection" event). Returns the
    per-step selection distribution and the total accounted mass.
    """
    num_steps, num_frames = p.shape
    alpha = np.zeros((num_steps, num_frames), dtype=np.float64)
    dead_mass = 0.0

    # stack of (step index, frame the scan starts at, probability so far)
    stack = [(0, 0, 1.0)]
    while stack:
        i, start, prob = stack.pop()
        if i == num_steps:
            continue
        skip = 1.0
        for j in range(start, num_frames):
            take = prob * skip * p[i, j]
            alpha[i, j] += take
            if i + 1 < num_steps:
                stack.append((i + 1, j, take))
            skip *= 1.0 - p[i, j]
        dead_mass += prob * skip

    # mass of paths that completed every step
    survived = alpha[num_steps - 1].sum() if num_steps else 1.0
    return alpha, survived + dead_mass


def enumerate_alignments(p: np.ndarray) -> np.ndarray:
    """Expected selection distribution by exhaustive path enumeration.

    ``p[i, j]`` is the probability that output step i stops at frame j given
    that its scan reached j. Only feasible for tiny instances.
    """
    p = np.asarray(p, dtype=np.float64)
    num_steps, num_frames = p.shape
    if num_steps > MAX_ENUM_STEPS or num_frames > MAX_ENUM_FRAMES:
        raise ValueError(
            f"instance too large for enumeration: {num_steps}x{num_frames} "
            f"(limit {MAX_ENUM_STEPS}x{MAX_ENUM_FRAMES})")
    alpha, _ = _enumerate(p)
    return alpha


def enumeration_total_mass(p: np.ndarray) -> float:
    """Total path mass including the no-selection event; should be 1."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape[0] > MAX_ENUM_STEPS or p.shape[1] > MAX_ENUM_FRAMES:
        raise ValueError("instance too large for enumeration")
    _, mass = _enumerate(p)
    return mass


def chunkwise_attention_reference(alpha: np.ndarray, u: np.ndarray, w: int) -> np.ndarray:
    """Naive double-loop evaluation of chunkwise smearing.

    beta[i, j] = sum over selection points k in [j, j+w) of
    alpha[i, k] * exp(u[i, j]) / sum_{l in (k-w, k]} exp(u[i, l]).
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    num_steps, num_frames = alpha.shape
    beta = np.zeros_like(alpha)
    for i in range(num_steps):
        for j in range(num_frames):
            acc = 0.0
            for k in range(j, min(j + w, num_frames)):
                lo = max(0, k - w + 1)
                denom = sum(np.exp(u[i, l]) for l in range(lo, k + 1))
                acc += alpha[i, k] * np.exp(u[i, j]) / denom
            beta[i, j] = acc
    return beta


def _levenshtein(a, b) -> int:
    """Textbook full-table edit distance, kept here so the oracle does not
    lean on the training module's implementation."""
    table = np.zeros((len(a) + 1, len(b) + 1), dtype=np.int64)
    table[:, 0] = np.arange(len(a) + 1)
    table[0, :] = np.arange(len(b) + 1)
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            table[i, j] = min(table[i - 1, j] + 1,
                              table[i, j - 1] + 1,
                              table[i - 1, j - 1] + cost)
    return int(table[len(a), len(b)])


def exhaustive_expected_error(next_logprobs, vocab_size: int, max_len: int,
                              ref, eos_id: int = 0) -> float:
    """Exact expected edit distance over every token sequence up to ``max_len``.

    ``next_logprobs(prefix)`` returns the length-V array of conditional
    log-probabilities after the given prefix of non-terminal tokens.
    Sequences either end with the end token or are truncated at ``max_len``;
    together these outcomes carry the full probability mass.
    """
    if vocab_size ** max_len > 100_000:
        raise ValueError("instance too large for exhaustive enumeration")
    ref = list(ref)
    total = 0.0

    def recurse(prefix, logprob):
        nonlocal total
        if len(prefix) == max_len:
            total += np.exp(logprob) * _levenshtein(prefix, ref)
            return
        lp = next_logprobs(tuple(prefix))
        for v in range(vocab_size):
            if v == eos_id:
                total += np.exp(logprob + lp[v]) * _levenshtein(prefix, ref)
            else:
                recurse(prefix + [v], logprob + lp[v])

    recurse([], 0.0)
    return float(total)


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    """Comparison of analytic gradients against central differences."""

    step: float
    tolerance: float
    max_rel_error: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)  # (param, coordinate, rel err)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def summary(self) -> str:
        lines = [f"gradient check: step={self.step:g} tolerance={self.tolerance:g}"]
        for name in sorted(self.max_rel_error):
            flag = "FAIL" if any(f[0] == name for f in self.failures) else "ok"
            lines.append(f"  {name:<28s} max rel err {self.max_rel_error[name]:.3e}  [{flag}]")
        return "\n".join(lines)


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-12)


def finite_difference_grad(loss_fn, params: dict, step: float = 1e-5) -> dict:
    """Central-difference gradients of ``loss_fn()`` w.r.t. every coordinate.

    ``params`` maps names to arrays that ``loss_fn`` reads; each coordinate is
    perturbed in place by h = step * max(1, |theta|) and restored.
    """
    grads = {}
    for name, theta in params.items():
        g = np.zeros(theta.shape, dtype=np.float64)
        for idx in range(theta.size):
            orig = float(theta.flat[idx])
            h = step * max(1.0, abs(orig))
            theta.flat[idx] = orig + h
            f_plus = float(loss_fn())
            theta.flat[idx] = orig - h
            f_minus = float(loss_fn())
            theta.flat[idx] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NonFiniteError(f"non-finite loss while probing {name}[{idx}]")
            g.flat[idx] = (f_plus - f_minus) / (2.0 * h)
        grads[name] = g
    return grads


def grad_check(loss_fn, params: dict, analytic: dict, step: float = 1e-5,
               tolerance: float = 1e-6) -> GradCheckReport:
    """Compare analytic gradients to finite differences coordinate by coordinate."""
    report = GradCheckReport(step=step, tolerance=tolerance)
    numeric = finite_difference_grad(loss_fn, params, step=step)
    for name, theta in params.items():
        a = np.asarray(analytic[name], dtype=np.float64)
        n = numeric[name]
        if a.shape != theta.shape:
            raise ValueError(f"analytic gradient shape mismatch for {name}")
        worst = 0.0
        for idx in range(theta.size):
            err = relative_error(float(a.flat[idx]), float(n.flat[idx]))
            worst = max(worst, err)
            if err > tolerance:
                coord = np.unravel_index(idx, theta.shape) if theta.ndim else ()
                report.failures.append((name, coord, err))
        report.max_rel_error[name] = worst
    return report
