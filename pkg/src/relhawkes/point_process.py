"""Univariate Hawkes processes with exponential kernel.

Intensity ``lambda(t) = mu + sum_{tau < t} delta * omega * exp(-omega (t - tau))``.
``delta`` is the branching ratio (the kernel integrates to ``delta``) and
``omega`` the decay rate.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _backend
from .errors import (
    DomainError,
    NumericError,
    NumericWarning,
    SupercriticalError,
    ValidationError,
)

PARAM_NAMES = ("mu", "delta", "omega")


@dataclass(frozen=True)
class HawkesParams:
    mu: float
    delta: float
    omega: float

    def __post_init__(self):
        vals = (self.mu, self.delta, self.omega)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"non-finite Hawkes parameters {vals}")
        if self.mu <= 0 or self.omega <= 0 or self.delta < 0:
            raise ValidationError(
                f"need mu > 0, delta >= 0, omega > 0; got {vals}")

    def as_array(self) -> np.ndarray:
        return np.array([self.mu, self.delta, self.omega], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "HawkesParams":
        mu, delta, omega = (float(x) for x in arr)
        return cls(mu, delta, omega)


@dataclass(frozen=True, eq=False)
class EventSequence:
    """Strictly increasing event times observed on ``[0, t_end]``."""

    timestamps: np.ndarray
    t_end: float
    subject_id: str = ""

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float).reshape(-1)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "t_end", float(self.t_end))
        label = self.subject_id or "<unnamed>"
        if not math.isfinite(self.t_end) or self.t_end < 0:
            raise ValidationError(f"subject {label}: invalid t_end {self.t_end}")
        if ts.size:
            if not np.all(np.isfinite(ts)):
                raise ValidationError(f"subject {label}: non-finite timestamp")
            if ts[0] < 0:
                raise ValidationError(f"subject {label}: negative timestamp")
            if np.any(np.diff(ts) <= 0):
                raise ValidationError(
                    f"subject {label}: timestamps not strictly increasing")
            if ts[-1] > self.t_end:
                raise ValidationError(
                    f"subject {label}: timestamp {ts[-1]} beyond t_end {self.t_end}")

    def __len__(self):
        return self.timestamps.size


class PackedSequences:
    """Sequences concatenated into one buffer for the batch kernels."""

    def __init__(self, sequences: Sequence[EventSequence]):
        self.sequences = list(sequences)
        lengths = [len(s) for s in self.sequences]
        self.offsets = np.zeros(len(lengths) + 1, dtype=np.int64)
        np.cumsum(lengths, out=self.offsets[1:])
        if self.sequences and self.offsets[-1]:
            self.times = np.concatenate([s.timestamps for s in self.sequences])
        else:
            self.times = np.zeros(0)
        self.t_ends = np.array([s.t_end for s in self.sequences], dtype=float)
        self.counts = np.asarray(lengths, dtype=float)

    def __len__(self):
        return len(self.sequences)

    def evaluate(self, params, seq_idx, order=0, nu=None):
        """Log-likelihood rows for ``params[r]`` on sequence ``seq_idx[r]``.

        With ``nu`` set, the log barrier ``nu * sum(log theta)`` is added.
        Returns ``(values, grads, hessians)``; derivatives are zero when not
        requested by ``order``.
        """
        params = np.ascontiguousarray(params, dtype=float).reshape(-1, 3)
        seq_idx = np.ascontiguousarray(seq_idx, dtype=np.int64).reshape(-1)
        if not np.all(np.isfinite(params)):
            raise NumericError("non-finite Hawkes parameters")
        values, grads, hess, clamped = _backend.kernels.loglik_batch(
            params, seq_idx, self.times, self.offsets, self.t_ends, order)
        if clamped:
            warnings.warn(
                f"intensity clamped at 1e-300 for {clamped} events",
                NumericWarning, stacklevel=2)
        if nu is not None:
            if np.any(params <= 0):
                raise DomainError("log barrier needs strictly positive parameters")
            if nu:
                values = values + nu * np.log(params).sum(axis=1)
                if order > 0:
                    grads = grads + nu / params
                if order > 1:
                    diag = np.arange(3)
                    hess[:, diag, diag] -= nu / params**2
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            sid = self.sequences[seq_idx[bad]].subject_id
            raise NumericError("non-finite log-likelihood", subject_id=sid)
        return values, grads, hess


def _as_array(params) -> np.ndarray:
    if isinstance(params, HawkesParams):
        return params.as_array()
    arr = np.asarray(params, dtype=float).reshape(3)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"non-finite Hawkes parameters {arr}")
    return arr


def _single(params, seq, order, nu=None):
    packed = PackedSequences([seq])
    vals, grads, hess = packed.evaluate(_as_array(params)[None, :], [0], order, nu)
    return vals[0], grads[0], hess[0]


def intensity(params, history: EventSequence, t: float) -> float:
    """Conditional intensity at ``t``; events at exactly ``t`` are excluded."""
    t = float(t)
    theta = _as_array(params)
    if not math.isfinite(t) or t < 0:
        raise ValidationError(f"invalid time {t}")
    ts = history.timestamps if isinstance(history, EventSequence) else np.asarray(history, float)
    return float(_backend.kernels.intensity(theta[0], theta[1], theta[2],
                                   np.ascontiguousarray(ts, dtype=float), t))


def log_likelihood(params, seq: EventSequence) -> float:
    return float(_single(params, seq, 0)[0])


def log_likelihood_gradient(params, seq: EventSequence) -> np.ndarray:
    """Exact gradient with respect to (mu, delta, omega)."""
    return _single(params, seq, 1)[1]


def log_likelihood_hessian(params, seq: EventSequence) -> np.ndarray:
    return _single(params, seq, 2)[2]


def regularized_objective(params, seq: EventSequence, nu: float) -> float:
    """Log-likelihood plus ``nu * (log mu + log delta + log omega)``."""
    return float(_single(params, seq, 0, nu=nu)[0])


def regularized_gradient(params, seq: EventSequence, nu: float) -> np.ndarray:
    return _single(params, seq, 1, nu=nu)[1]


def regularized_hessian(params, seq: EventSequence, nu: float) -> np.ndarray:
    return _single(params, seq, 2, nu=nu)[2]


def simulate(params, t_end: float, rng_seed, subject_id: str = "",
             block: int = 256) -> EventSequence:
    """Draw one sequence on ``[0, t_end]`` by Ogata thinning.

    ``rng_seed`` may be an int, a ``SeedSequence`` or a ``numpy`` Generator.
    """
    mu, delta, omega = _as_array(params)
    if delta >= 1:
        raise SupercriticalError(f"branching ratio delta={delta} >= 1")
    if mu <= 0 or omega <= 0 or delta < 0:
        raise ValidationError("need mu > 0, delta >= 0, omega > 0")
    if not t_end > 0:
        raise ValidationError(f"t_end must be positive, got {t_end}")
    rng = np.random.default_rng(rng_seed)
    chunks = []
    t, excite, finished = 0.0, 0.0, False
    out = np.empty(block)
    while not finished:
        exps = rng.standard_exponential(block)
        unifs = rng.random(block)
        n_out, t, excite, _, finished = _backend.kernels.thin(
            mu, delta, omega, t, float(t_end), excite, exps, unifs, out)
        if n_out:
            chunks.append(out[:n_out].copy())
    times = np.concatenate(chunks) if chunks else np.zeros(0)
    return EventSequence(times, float(t_end), subject_id)


def normalize_sequences(seqs: Sequence[EventSequence]) -> list[EventSequence]:
    """Divide every timestamp and window by the largest timestamp overall."""
    maxima = [s.timestamps[-1] for s in seqs if len(s)]
    if not maxima:
        raise ValidationError("nothing to normalize: all sequences are empty")
    scale = float(max(maxima))
    return [EventSequence(s.timestamps / scale, s.t_end / scale, s.subject_id)
            for s in seqs]
