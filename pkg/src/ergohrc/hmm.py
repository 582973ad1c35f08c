"""Left-right hidden Markov models with diagonal Gaussian emissions.

All probability arithmetic runs in natural-log space. Sequences of equal
length are processed as one batch so the per-frame recursion is vectorised
across sequences.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ParseError, ValidationError

_log = logging.getLogger(__name__)

DEFAULT_STATES = 7
VARIANCE_FLOOR = 1e-4
DEFAULT_TOL = 1e-4
DEFAULT_MAX_ITERS = 100

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class GaussianHmm:
    """Immutable HMM parameters.

    Attributes
    ----------
    initial : ndarray, shape (n_states,)
        Initial state distribution.
    transitions : ndarray, shape (n_states, n_states)
        Row-stochastic; only self and next-state entries may be nonzero.
    means, variances : ndarray, shape (n_states, n_features)
        Per-state diagonal Gaussian parameters.
    """

    initial: np.ndarray
    transitions: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    variance_floor: float = VARIANCE_FLOOR

    def __post_init__(self):
        initial = np.array(self.initial, dtype=float).reshape(-1)
        trans = np.array(self.transitions, dtype=float)
        means = np.atleast_2d(np.array(self.means, dtype=float))
        var = np.atleast_2d(np.array(self.variances, dtype=float))
        k = initial.size
        if k < 1:
            raise ValidationError("model needs at least one state")
        if trans.shape != (k, k) or means.shape[0] != k or var.shape != means.shape:
            raise ValidationError("inconsistent parameter shapes")
        for name, arr in (("initial", initial), ("transitions", trans)):
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} must be finite and non-negative")
        if abs(initial.sum() - 1.0) > 1e-9:
            raise ValidationError("initial distribution does not sum to 1")
        if np.any(np.abs(trans.sum(axis=1) - 1.0) > 1e-9):
            raise ValidationError("transition rows do not sum to 1")
        if np.any(trans[~left_right_mask(k)] != 0):
            raise ValidationError("transitions violate left-right structure")
        if not np.all(np.isfinite(means)):
            raise ValidationError("non-finite emission mean")
        # small slack so a floored variance survives a text round trip
        if not np.all(np.isfinite(var)) or np.any(var < self.variance_floor * (1 - 1e-12)):
            raise ValidationError(f"variances must be >= {self.variance_floor}")
        for arr in (initial, trans, means, var):
            arr.setflags(write=False)
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "transitions", trans)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", var)

    @property
    def n_states(self) -> int:
        return self.initial.size

    @property
    def n_features(self) -> int:
        return self.means.shape[1]

    def __eq__(self, other):
        if not isinstance(other, GaussianHmm):
            return NotImplemented
        return self.variance_floor == other.variance_floor and all(
            np.array_equal(a, b)
            for a, b in zip(
                (self.initial, self.transitions, self.means, self.variances),
                (other.initial, other.transitions, other.means, other.variances),
            )
        )

    __hash__ = None


def left_right_mask(n_states: int) -> np.ndarray:
    """Boolean mask of the transitions a left-right model may use."""
    idx = np.arange(n_states)
    return (idx[None, :] == idx[:, None]) | (idx[None, :] == idx[:, None] + 1)


def _logsumexp(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.sum(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)


def _safe_log(a):
    with np.errstate(divide="ignore"):
        return np.log(a)


def _as_sequence(model, observations):
    obs = np.asarray(observations, dtype=float)
    if obs.ndim == 1:
        obs = obs[:, None] if model.n_features == 1 else obs[None, :]
    if obs.ndim != 2 or obs.shape[0] == 0:
        raise ValidationError("observation sequence is empty")
    if obs.shape[1] != model.n_features:
        raise ValidationError(
            f"observation arity {obs.shape[1]} != model feature dimension {model.n_features}"
        )
    return obs


def log_emission(model: GaussianHmm, obs: np.ndarray) -> np.ndarray:
    """Per-frame, per-state log densities; trailing axis is the state."""
    obs = np.asarray(obs, dtype=float)
    diff = obs[..., None, :] - model.means
    quad = np.sum(diff * diff / model.variances, axis=-1)
    norm = model.n_features * _LOG_2PI + np.sum(np.log(model.variances), axis=-1)
    return -0.5 * (norm + quad)


def _forward(log_pi, log_a, log_b):
    """Batched forward pass. ``log_b`` has shape (N, T, K)."""
    n, t_len, k = log_b.shape
    alpha = np.empty_like(log_b)
    alpha[:, 0] = log_pi + log_b[:, 0]
    for t in range(1, t_len):
        alpha[:, t] = _logsumexp(alpha[:, t - 1, :, None] + log_a, axis=1) + log_b[:, t]
    return alpha


def _backward(log_a, log_b):
    n, t_len, k = log_b.shape
    beta = np.zeros_like(log_b)
    for t in range(t_len - 2, -1, -1):
        beta[:, t] = _logsumexp(log_a + (log_b[:, t + 1] + beta[:, t + 1])[:, None, :], axis=2)
    return beta


def forward_log_likelihood(model: GaussianHmm, observations) -> float:
    """Log-probability density of one observation sequence under ``model``."""
    obs = _as_sequence(model, observations)
    log_b = log_emission(model, obs)[None]
    alpha = _forward(_safe_log(model.initial), _safe_log(model.transitions), log_b)
    return float(_logsumexp(alpha[0, -1], axis=0))


def _group_by_length(sequences):
    groups = {}
    for i, seq in enumerate(sequences):
        groups.setdefault(seq.shape[0], []).append(i)
    return groups


def score_sequences(model: GaussianHmm, sequences: Sequence) -> np.ndarray:
    """Log-likelihood of every sequence, batched by length."""
    seqs = [_as_sequence(model, s) for s in sequences]
    out = np.empty(len(seqs))
    log_pi, log_a = _safe_log(model.initial), _safe_log(model.transitions)
    for _, idx in _group_by_length(seqs).items():
        batch = np.stack([seqs[i] for i in idx])
        alpha = _forward(log_pi, log_a, log_emission(model, batch))
        out[idx] = _logsumexp(alpha[:, -1], axis=1)
    return out


def viterbi_path(model: GaussianHmm, observations) -> np.ndarray:
    """Most probable state path.

    Among equally scored optimal paths the lexicographically smallest is
    returned, so a tie between staying and advancing resolves to staying.
    """
    obs = _as_sequence(model, observations)
    log_b = log_emission(model, obs)
    log_a = _safe_log(model.transitions)
    t_len = obs.shape[0]
    # best score obtainable from frame t onwards given state i at t
    to_go = np.zeros((t_len, model.n_states))
    for t in range(t_len - 2, -1, -1):
        to_go[t] = np.max(log_a + (log_b[t + 1] + to_go[t + 1])[None, :], axis=1)
    path = np.empty(t_len, dtype=int)
    path[0] = np.argmax(_safe_log(model.initial) + log_b[0] + to_go[0])
    for t in range(1, t_len):
        path[t] = np.argmax(log_a[path[t - 1]] + log_b[t] + to_go[t])
    return path


def init_left_right(state_count: int, feature_dim: int, training_sample,
                    variance_floor: float = VARIANCE_FLOOR) -> GaussianHmm:
    """Build a left-right starting model from contiguous chunks of data.

    Each sample is split into ``state_count`` contiguous chunks; the k-th
    chunks of all samples are pooled to give state k's mean and variance.
    ``training_sample`` is one (T, D) array or a list of them.
    """
    if state_count < 1 or feature_dim < 1:
        raise ValidationError("state_count and feature_dim must be >= 1")
    samples = training_sample
    if isinstance(samples, np.ndarray) and samples.ndim <= 2:
        samples = [samples]
    chunks = [[] for _ in range(state_count)]
    for s in samples:
        s = np.asarray(s, dtype=float)
        if s.ndim == 1:
            s = s[:, None] if feature_dim == 1 else s[None, :]
        if s.shape[1] != feature_dim:
            raise ValidationError(f"sample arity {s.shape[1]} != feature_dim {feature_dim}")
        if s.shape[0] < state_count:
            raise ValidationError(
                f"sample of {s.shape[0]} frames is shorter than {state_count} states"
            )
        for k, part in enumerate(np.array_split(s, state_count)):
            chunks[k].append(part)
    if not chunks[0]:
        raise ValidationError("no training sample given")
    pooled = [np.concatenate(c) for c in chunks]
    means = np.array([p.mean(axis=0) for p in pooled])
    variances = np.maximum(np.array([p.var(axis=0) for p in pooled]), variance_floor)

    trans = np.zeros((state_count, state_count))
    for i in range(state_count - 1):
        trans[i, i] = trans[i, i + 1] = 0.5
    trans[-1, -1] = 1.0
    initial = np.zeros(state_count)
    initial[0] = 1.0
    return GaussianHmm(initial, trans, means, variances, variance_floor)


def _e_step(model, groups):
    k, d = model.n_states, model.n_features
    log_pi, log_a = _safe_log(model.initial), _safe_log(model.transitions)
    stats = {
        "initial": np.zeros(k),
        "trans": np.zeros((k, k)),
        "occupancy": np.zeros(k),
        "weighted_sum": np.zeros((k, d)),
        "batches": [],
    }
    total = 0.0
    for batch in groups:
        log_b = log_emission(model, batch)
        alpha = _forward(log_pi, log_a, log_b)
        beta = _backward(log_a, log_b)
        ll = _logsumexp(alpha[:, -1], axis=1)
        total += float(ll.sum())
        gamma = np.exp(alpha + beta - ll[:, None, None])
        stats["initial"] += gamma[:, 0].sum(axis=0)
        if batch.shape[1] > 1:
            log_xi = (alpha[:, :-1, :, None] + log_a
                      + (log_b[:, 1:] + beta[:, 1:])[:, :, None, :]
                      - ll[:, None, None, None])
            stats["trans"] += np.exp(log_xi).sum(axis=(0, 1))
        stats["occupancy"] += gamma.sum(axis=(0, 1))
        stats["weighted_sum"] += np.einsum("ntk,ntd->kd", gamma, batch)
        stats["batches"].append((batch, gamma))
    return stats, total


def _m_step(model, stats, n_sequences):
    initial = stats["initial"] / n_sequences
    initial /= initial.sum()

    trans = model.transitions.copy()
    row_mass = stats["trans"].sum(axis=1)
    seen = row_mass > 0
    trans[seen] = stats["trans"][seen] / row_mass[seen, None]
    trans[~left_right_mask(model.n_states)] = 0.0

    occ = stats["occupancy"]
    used = occ > 0
    means = model.means.copy()
    means[used] = stats["weighted_sum"][used] / occ[used, None]
    sq = np.zeros_like(means)
    for batch, gamma in stats["batches"]:
        diff = batch[:, :, None, :] - means
        sq += np.einsum("ntk,ntkd->kd", gamma, diff * diff)
    variances = model.variances.copy()
    variances[used] = sq[used] / occ[used, None]
    variances = np.maximum(variances, model.variance_floor)
    return GaussianHmm(initial, trans, means, variances, model.variance_floor)


def baum_welch_train(initial_model: GaussianHmm, clips: Iterable,
                     max_iters: int = DEFAULT_MAX_ITERS, tol: float = DEFAULT_TOL,
                     history: list | None = None) -> GaussianHmm:
    """Re-estimate ``initial_model`` on a collection of sequences by EM.

    Training stops after ``max_iters`` updates or once the total
    log-likelihood improves by less than ``tol``. If ``history`` is given,
    the total log-likelihood evaluated at each iteration is appended to it.
    Zero transitions stay zero, so the left-right structure is preserved.
    """
    seqs = [_as_sequence(initial_model, c) for c in clips]
    if not seqs:
        raise ValidationError("at least one training sequence is required")
    groups = [np.stack([seqs[i] for i in idx]) for idx in _group_by_length(seqs).values()]
    model = initial_model
    previous = None
    for iteration in range(max_iters):
        stats, total = _e_step(model, groups)
        if history is not None:
            history.append(total)
        _log.debug("iteration %d: log-likelihood %.8f", iteration, total)
        if previous is not None:
            if total < previous - 1e-8:
                _log.warning("log-likelihood decreased: %r -> %r", previous, total)
            if total - previous < tol:
                break
        model = _m_step(model, stats, len(seqs))
        previous = total
    return model


def train_left_right(sequences: Sequence, n_states: int = DEFAULT_STATES,
                     max_iters: int = DEFAULT_MAX_ITERS, tol: float = DEFAULT_TOL,
                     variance_floor: float = VARIANCE_FLOOR) -> GaussianHmm:
    """Chunk-initialise a left-right model and refine it with Baum-Welch."""
    seqs = [np.asarray(s, dtype=float) for s in sequences]
    if not seqs:
        raise ValidationError("at least one training sequence is required")
    start = init_left_right(n_states, seqs[0].shape[1], seqs, variance_floor)
    return baum_welch_train(start, seqs, max_iters=max_iters, tol=tol)


# -- serialisation ------------------------------------------------------------

_MAGIC = "ergohrc-hmm v1"


def _rows(arr):
    return [" ".join(f"{v:.17g}" for v in row) for row in np.atleast_2d(arr)]


def dump_model(model: GaussianHmm) -> str:
    lines = [
        _MAGIC,
        f"states {model.n_states}",
        f"dim {model.n_features}",
        f"variance_floor {model.variance_floor:.17g}",
        "initial", *_rows(model.initial),
        "transitions", *_rows(model.transitions),
        "means", *_rows(model.means),
        "variances", *_rows(model.variances),
        "end",
    ]
    return "\n".join(lines) + "\n"


def _take(lines, pos, keyword):
    if pos >= len(lines) or not lines[pos][1].startswith(keyword):
        lineno = lines[pos][0] if pos < len(lines) else None
        raise ParseError(f"expected '{keyword}'", lineno)
    return lines[pos][1][len(keyword):].strip(), pos + 1


def _matrix(lines, pos, n_rows, n_cols):
    rows = []
    for _ in range(n_rows):
        if pos >= len(lines):
            raise ParseError("truncated model")
        lineno, text = lines[pos]
        try:
            row = [float(v) for v in text.split()]
        except ValueError:
            raise ParseError("non-numeric matrix entry", lineno) from None
        if len(row) != n_cols:
            raise ParseError(f"expected {n_cols} values", lineno)
        rows.append(row)
        pos += 1
    return np.array(rows), pos


def _parse_model(lines, pos):
    _, pos = _take(lines, pos, _MAGIC)
    k, pos = _take(lines, pos, "states")
    d, pos = _take(lines, pos, "dim")
    floor, pos = _take(lines, pos, "variance_floor")
    k, d = int(k), int(d)
    _, pos = _take(lines, pos, "initial")
    initial, pos = _matrix(lines, pos, 1, k)
    _, pos = _take(lines, pos, "transitions")
    trans, pos = _matrix(lines, pos, k, k)
    _, pos = _take(lines, pos, "means")
    means, pos = _matrix(lines, pos, k, d)
    _, pos = _take(lines, pos, "variances")
    var, pos = _matrix(lines, pos, k, d)
    _, pos = _take(lines, pos, "end")
    try:
        model = GaussianHmm(initial[0], trans, means, var, float(floor))
    except ValidationError as exc:
        raise ParseError(str(exc)) from None
    return model, pos


def _content_lines(text):
    return [(n, s.strip()) for n, s in enumerate(text.splitlines(), start=1)
            if s.strip() and not s.strip().startswith("#")]


def load_model(text: str) -> GaussianHmm:
    model, _ = _parse_model(_content_lines(text), 0)
    return model


def dump_models(models: Mapping[int, GaussianHmm]) -> str:
    """Serialise a primitive-ID -> model mapping."""
    return "".join(f"model {pid}\n{dump_model(m)}" for pid, m in sorted(models.items()))


def load_models(text: str) -> dict[int, GaussianHmm]:
    lines = _content_lines(text)
    models = {}
    pos = 0
    while pos < len(lines):
        ident, pos = _take(lines, pos, "model")
        try:
            pid = int(ident)
        except ValueError:
            raise ParseError(f"bad model id {ident!r}", lines[pos - 1][0]) from None
        models[pid], pos = _parse_model(lines, pos)
    return models
