"""Continuous-density HMMs with diagonal-covariance GMM emissions.

Every probability is kept in the log domain.  Sequences of equal length
are evaluated together as one (N, T, S) array, which is what makes
training and batch scoring fast enough without compiled extensions.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.cluster.vq import kmeans2

from .errors import ConvergenceError, DegenerateDataWarning, DimensionMismatch, InsufficientData
from .frontend import FeatureSequence
from .logmath import logsumexp, safe_log

log = logging.getLogger(__name__)

MODEL_FORMAT = "cascade-verify-hmm/1"
_LOG_2PI = np.log(2.0 * np.pi)
_BATCH = 256
_ABS_VAR_FLOOR = 1e-8
_MIN_OCCUPANCY = 1e-12


@dataclass
class TrainConfig:
    n_states: int = 6
    n_mixtures: int = 3
    topology: str = "left_to_right"
    max_skip: int = 1
    max_iters: int = 30
    loglik_rel_tol: float = 1e-5
    variance_floor: float = 1e-3
    init_seed: int = 0
    kmeans_restarts: int = 3

    def validate(self):
        if self.n_states < 1 or self.n_mixtures < 1:
            raise ValueError("n_states and n_mixtures must be >= 1")
        if self.topology not in ("left_to_right", "ergodic"):
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.loglik_rel_tol > 0 or not self.variance_floor > 0:
            raise ValueError("loglik_rel_tol and variance_floor must be positive")


@dataclass
class Hmm:
    log_pi: np.ndarray      # (S,)
    log_A: np.ndarray       # (S, S)
    weights: np.ndarray     # (S, M)
    means: np.ndarray       # (S, M, D)
    variances: np.ndarray   # (S, M, D)
    label: str = ""
    topology: str = "ergodic"
    max_skip: int = 1

    def __post_init__(self):
        self.log_pi = np.asarray(self.log_pi, dtype=float)
        self.log_A = np.asarray(self.log_A, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.variances = np.asarray(self.variances, dtype=float)

    @property
    def n_states(self) -> int:
        return self.log_pi.shape[0]

    @property
    def n_mixtures(self) -> int:
        return self.weights.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.means.shape[2]

    def check(self, atol: float = 1e-9) -> None:
        """Raise ``ValueError`` if any structural invariant is broken."""
        S, M, D = self.means.shape
        if self.log_pi.shape != (S,) or self.log_A.shape != (S, S) or self.weights.shape != (S, M):
            raise ValueError("inconsistent parameter shapes")
        if self.variances.shape != (S, M, D):
            raise ValueError("variance shape does not match means")
        if abs(np.exp(self.log_pi).sum() - 1.0) > atol:
            raise ValueError("initial distribution does not sum to 1")
        if np.any(np.abs(np.exp(self.log_A).sum(axis=1) - 1.0) > atol):
            raise ValueError("transition rows do not sum to 1")
        if np.any(np.abs(self.weights.sum(axis=1) - 1.0) > atol):
            raise ValueError("mixture weights do not sum to 1")
        if np.any(self.variances <= 0):
            raise ValueError("non-positive variance")
        if self.topology == "left_to_right":
            i, j = np.indices((S, S))
            banned = (j < i) | (j > i + self.max_skip)
            if np.any(np.isfinite(self.log_A[banned])):
                raise ValueError("left-to-right model has a backward or over-long transition")

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "label": self.label,
            "topology": self.topology,
            "max_skip": self.max_skip,
            "n_states": self.n_states,
            "n_mixtures": self.n_mixtures,
            "feature_dim": self.feature_dim,
            "log_pi": self.log_pi.tolist(),
            "log_A": self.log_A.tolist(),
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hmm":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model format {d.get('format')!r}")
        model = cls(
            log_pi=d["log_pi"], log_A=d["log_A"], weights=d["weights"], means=d["means"],
            variances=d["variances"], label=d["label"], topology=d["topology"],
            max_skip=d["max_skip"],
        )
        if (model.n_states, model.n_mixtures, model.feature_dim) != (
            d["n_states"], d["n_mixtures"], d["feature_dim"]
        ):
            raise ValueError("declared dimensions disagree with parameter arrays")
        return model


def dumps_model(model: Hmm) -> str:
    # json writes floats with repr(), the shortest string that round-trips exactly
    return json.dumps(model.to_dict(), indent=1) + "\n"


def save_model(model: Hmm, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_model(model))


def load_model(path) -> Hmm:
    return Hmm.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# Likelihoods


def _as_matrix(seq) -> np.ndarray:
    if isinstance(seq, FeatureSequence):
        return seq.vectors
    x = np.asarray(seq, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def component_log_densities(model: Hmm, X: np.ndarray) -> np.ndarray:
    """log(w_sm * N(x_t; mu_sm, diag var_sm)) for every frame, shape (N, S, M)."""
    S, M, D = model.means.shape
    if X.shape[-1] != D:
        raise DimensionMismatch(f"features have D={X.shape[-1]}, model {model.label!r} expects {D}")
    prec = (1.0 / model.variances).reshape(S * M, D)
    mu = model.means.reshape(S * M, D)
    const = (
        -0.5 * (D * _LOG_2PI + np.log(model.variances).sum(axis=2)).reshape(S * M)
        - 0.5 * np.sum(mu * mu * prec, axis=1)
        + safe_log(model.weights).reshape(S * M)
    )
    quad = -0.5 * (X * X) @ prec.T + X @ (mu * prec).T
    return (quad + const).reshape(X.shape[0], S, M)


def emission_log_densities(model: Hmm, X: np.ndarray) -> np.ndarray:
    return logsumexp(component_log_densities(model, X), axis=2)


def _forward(log_pi, log_A, log_b):
    """alpha[n, t, s] = log P(o_1..o_t, q_t = s) for a batch of equal-length sequences."""
    alpha = np.empty_like(log_b)
    alpha[:, 0] = log_pi + log_b[:, 0]
    for t in range(1, log_b.shape[1]):
        alpha[:, t] = logsumexp(alpha[:, t - 1, :, None] + log_A, axis=1) + log_b[:, t]
    return alpha


def _backward(log_A, log_b):
    beta = np.empty_like(log_b)
    beta[:, -1] = 0.0
    for t in range(log_b.shape[1] - 2, -1, -1):
        beta[:, t] = logsumexp(log_A + (log_b[:, t + 1] + beta[:, t + 1])[:, None, :], axis=2)
    return beta


def _buckets(seqs: Sequence[np.ndarray]):
    """Group sequence indices by length, then chop each group into bounded batches."""
    by_len: dict[int, list[int]] = {}
    for i, x in enumerate(seqs):
        by_len.setdefault(x.shape[0], []).append(i)
    for length in sorted(by_len):
        idx = by_len[length]
        for start in range(0, len(idx), _BATCH):
            yield idx[start : start + _BATCH]


def batch_log_likelihood(model: Hmm, seqs) -> np.ndarray:
    """Total forward log-likelihood of each sequence."""
    mats = [_as_matrix(s) for s in seqs]
    out = np.empty(len(mats))
    S = model.n_states
    for idx in _buckets(mats):
        X = np.stack([mats[i] for i in idx])
        N, T, D = X.shape
        log_b = emission_log_densities(model, X.reshape(N * T, D)).reshape(N, T, S)
        alpha = _forward(model.log_pi, model.log_A, log_b)
        out[idx] = logsumexp(alpha[:, -1], axis=1)
    return out


def batch_avg_log_likelihood(model: Hmm, seqs) -> np.ndarray:
    lengths = np.array([_as_matrix(s).shape[0] for s in seqs], dtype=float)
    return batch_log_likelihood(model, seqs) / lengths


def log_likelihood(model: Hmm, seq) -> float:
    """log P(O | model) via the log-domain forward recursion."""
    return float(batch_log_likelihood(model, [seq])[0])


def avg_log_likelihood(model: Hmm, seq) -> float:
    """Frame-normalized log-likelihood, (1/T) log P(O | model)."""
    return log_likelihood(model, seq) / _as_matrix(seq).shape[0]


def viterbi(model: Hmm, seq) -> tuple[np.ndarray, float]:
    """Most likely state path and its joint log-probability.  Ties go to the lower state index."""
    X = _as_matrix(seq)
    T = X.shape[0]
    log_b = emission_log_densities(model, X)
    delta = model.log_pi + log_b[0]
    back = np.zeros((T, model.n_states), dtype=int)
    for t in range(1, T):
        cand = delta[:, None] + model.log_A
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(model.n_states)] + log_b[t]
    path = np.empty(T, dtype=int)
    path[-1] = int(np.argmax(delta))
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, float(delta[path[-1]])


# --------------------------------------------------------------------------
# Training


@dataclass
class _Stats:
    S: int
    M: int
    D: int
    loglik: float = 0.0
    pi: np.ndarray = field(init=False)
    trans: np.ndarray = field(init=False)
    occ: np.ndarray = field(init=False)
    first: np.ndarray = field(init=False)
    second: np.ndarray = field(init=False)

    def __post_init__(self):
        self.pi = np.zeros(self.S)
        self.trans = np.zeros((self.S, self.S))
        self.occ = np.zeros((self.S, self.M))
        self.first = np.zeros((self.S, self.M, self.D))
        self.second = np.zeros((self.S, self.M, self.D))


def _e_step(model: Hmm, mats) -> _Stats:
    S, M, D = model.means.shape
    st = _Stats(S, M, D)
    for idx in _buckets(mats):
        X = np.stack([mats[i] for i in idx])
        N, T, _ = X.shape
        flat = X.reshape(N * T, D)
        comp = component_log_densities(model, flat)
        log_b_flat = logsumexp(comp, axis=2)
        log_b = log_b_flat.reshape(N, T, S)

        alpha = _forward(model.log_pi, model.log_A, log_b)
        beta = _backward(model.log_A, log_b)
        ll = logsumexp(alpha[:, -1], axis=1)
        st.loglik += float(ll.sum())

        log_gamma = alpha + beta - ll[:, None, None]
        st.pi += np.exp(log_gamma[:, 0]).sum(axis=0)
        if T > 1:
            log_xi = (
                alpha[:, :-1, :, None]
                + model.log_A
                + (log_b[:, 1:] + beta[:, 1:])[:, :, None, :]
                - ll[:, None, None, None]
            )
            with np.errstate(invalid="ignore"):
                st.trans += np.nan_to_num(np.exp(log_xi), nan=0.0).sum(axis=(0, 1))

        with np.errstate(invalid="ignore"):
            r = log_gamma.reshape(N * T, S)[:, :, None] + comp - log_b_flat[:, :, None]
        r = np.where(np.isnan(r), -np.inf, r)
        resp = np.exp(r).reshape(N * T, S * M)
        st.occ += resp.sum(axis=0).reshape(S, M)
        st.first += (resp.T @ flat).reshape(S, M, D)
        st.second += (resp.T @ (flat * flat)).reshape(S, M, D)
    return st


def _m_step(model: Hmm, st: _Stats, var_floor: np.ndarray) -> Hmm:
    pi = st.pi / st.pi.sum()

    A = np.exp(model.log_A)
    rows = st.trans.sum(axis=1)
    live = rows > 0
    A[live] = st.trans[live] / rows[live, None]

    weights = model.weights.copy()
    state_occ = st.occ.sum(axis=1)
    ok_state = state_occ > _MIN_OCCUPANCY
    weights[ok_state] = st.occ[ok_state] / state_occ[ok_state, None]

    means = model.means.copy()
    variances = model.variances.copy()
    ok = st.occ > _MIN_OCCUPANCY
    means[ok] = st.first[ok] / st.occ[ok][:, None]
    raw_var = st.second[ok] / st.occ[ok][:, None] - means[ok] ** 2
    variances[ok] = np.maximum(raw_var, np.broadcast_to(var_floor, raw_var.shape))

    return Hmm(safe_log(pi), safe_log(A), weights, means, variances,
               model.label, model.topology, model.max_skip)


def _kmeans(data: np.ndarray, k: int, rng: np.random.Generator, restarts: int) -> np.ndarray:
    uniq = np.unique(data, axis=0)
    if len(uniq) <= k:
        return uniq[np.arange(k) % len(uniq)]
    best, best_cost = None, np.inf
    for _ in range(max(1, restarts)):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            centers, labels = kmeans2(data, k, iter=20, minit="++", rng=rng)
        cost = float(np.sum((data - centers[labels]) ** 2))
        if cost < best_cost:  # strict: the earliest restart wins ties
            best, best_cost = centers, cost
    return best


def initial_model(mats, cfg: TrainConfig, var_floor: np.ndarray, label: str = "") -> Hmm:
    """Flat-start: equal segmentation across states, k-means per state for mixture means."""
    S, M = cfg.n_states, cfg.n_mixtures
    D = mats[0].shape[1]
    rng = np.random.default_rng(cfg.init_seed)

    per_state: list[list[np.ndarray]] = [[] for _ in range(S)]
    for x in mats:
        owner = (np.arange(x.shape[0]) * S) // x.shape[0]
        for s in range(S):
            if np.any(owner == s):
                per_state[s].append(x[owner == s])
    everything = np.vstack(mats)

    means = np.empty((S, M, D))
    variances = np.empty((S, M, D))
    for s in range(S):
        seg = np.vstack(per_state[s]) if per_state[s] else everything
        means[s] = _kmeans(seg, M, rng, cfg.kmeans_restarts)
        variances[s] = np.maximum(seg.var(axis=0), var_floor)
    weights = np.full((S, M), 1.0 / M)

    mean_len = float(np.mean([x.shape[0] for x in mats]))
    if cfg.topology == "left_to_right":
        A = np.zeros((S, S))
        stay = min(0.95, max(0.5, 1.0 - S / max(mean_len, 1.0)))
        for i in range(S):
            reach = list(range(i + 1, min(S, i + cfg.max_skip + 1)))
            if not reach:
                A[i, i] = 1.0
                continue
            A[i, i] = stay
            A[i, reach] = (1.0 - stay) / len(reach)
        pi = np.zeros(S)
        pi[0] = 1.0
    else:
        A = np.full((S, S), 1.0 / S)
        pi = np.full(S, 1.0 / S)
    return Hmm(safe_log(pi), safe_log(A), weights, means, variances, label, cfg.topology, cfg.max_skip)


@dataclass
class TrainResult:
    model: Hmm
    trace: list[float]
    n_sequences: int
    n_frames: int
    variance_floor: np.ndarray


def train_baum_welch(data, cfg: TrainConfig, label: str = "") -> TrainResult:
    """Fit an HMM by EM from a flat start.

    Iterates until the relative log-likelihood gain drops below
    ``cfg.loglik_rel_tol`` or ``cfg.max_iters`` M-steps have run.  ``trace[i]``
    is the total log-likelihood of the model after ``i`` M-steps, so the
    returned model scores ``trace[-1]``.
    """
    cfg.validate()
    mats = [_as_matrix(s) for s in data]
    if not mats:
        raise InsufficientData(label or "model", "no sequences")
    D = mats[0].shape[1]
    if any(m.shape[1] != D for m in mats):
        raise DimensionMismatch("training sequences disagree on feature dimension")
    n_frames = sum(m.shape[0] for m in mats)
    if n_frames < cfg.n_states * cfg.n_mixtures:
        raise InsufficientData(
            label or "model", f"{n_frames} frames < n_states * n_mixtures = {cfg.n_states * cfg.n_mixtures}"
        )

    if len(mats) == 1:
        warnings.warn(f"{label or 'model'}: trained from a single sequence", DegenerateDataWarning, stacklevel=2)
    everything = np.vstack(mats)
    global_var = everything.var(axis=0)
    var_floor = np.maximum(cfg.variance_floor * global_var, _ABS_VAR_FLOOR)
    if np.any(cfg.variance_floor * global_var < _ABS_VAR_FLOOR):
        warnings.warn(
            f"{label or 'model'}: training frames are (nearly) constant in some dimension; "
            "variances pinned to the absolute floor",
            DegenerateDataWarning,
            stacklevel=2,
        )

    model = initial_model(mats, cfg, var_floor, label)
    stats = _e_step(model, mats)
    trace = [stats.loglik]
    for _ in range(cfg.max_iters):
        model = _m_step(model, stats, var_floor)
        stats = _e_step(model, mats)
        prev, cur = trace[-1], stats.loglik
        trace.append(cur)
        # summation round-off grows with the number of frames; 1e-8 alone is too tight for 1e5 frames
        slack = 1e-8 + 1e-13 * abs(prev)
        if cur < prev - slack:
            raise ConvergenceError(f"{label}: EM log-likelihood fell from {prev!r} to {cur!r}")
        if (cur - prev) / max(abs(prev), 1e-300) < cfg.loglik_rel_tol:
            break
    log.debug("%s: %d iterations, loglik %.6g", label, len(trace) - 1, trace[-1])
    return TrainResult(model, trace, len(mats), n_frames, var_floor)
