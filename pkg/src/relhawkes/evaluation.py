"""Hold-out predictive likelihood, multi-split model selection and baselines.

The last timestamp of every sequence with at least two events is held out;
the remaining prefix ends at its own last event, so the held-out item is the
next arrival after ``t_end`` of the prefix.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import _backend
from .errors import NumericError, ValidationError
from .meta_adaptation import PARAM_FLOOR, AdaptationConfig, meta_batch
from .point_process import EventSequence, HawkesParams, PackedSequences, _as_array

log = logging.getLogger(__name__)

LOG_FLOOR = math.log(PARAM_FLOOR)
# keeps line searches of the baselines away from exp overflow
LOG_CEIL = math.log(1e8)


# ---------------------------------------------------------------- hold-out

def hold_out_last(sequences):
    """Split off the last timestamp of every sequence with >= 2 events.

    Returns ``(train_sequences, eligible_index, held_out_times)``. Ineligible
    subjects keep their full sequence in ``train_sequences``.
    """
    train, idx, held = [], [], []
    for i, s in enumerate(sequences):
        if len(s) >= 2:
            ts = s.timestamps
            train.append(EventSequence(ts[:-1], ts[-2], s.subject_id))
            idx.append(i)
            held.append(ts[-1])
        else:
            train.append(s)
    return train, np.asarray(idx, dtype=np.int64), np.asarray(held, dtype=float)


@dataclass
class SplitPlan:
    """Held-out items and their validation/test assignment per repeat.

    ``validation[r, j]`` is True when item ``j`` belongs to the validation
    half in repeat ``r``.
    """

    subject_index: np.ndarray
    held_out: np.ndarray
    validation: np.ndarray
    seed: int
    n_excluded: int
    excluded_ids: list = field(default_factory=list)

    @property
    def n_repeats(self) -> int:
        return self.validation.shape[0]

    @property
    def n_items(self) -> int:
        return self.held_out.size


def make_split_plan(sequences, n_repeats: int = 30, seed: int = 0) -> SplitPlan:
    """50/50 validation/test splits of the held-out last timestamps."""
    if n_repeats < 1:
        raise ValidationError("n_repeats must be >= 1")
    _, idx, held = hold_out_last(sequences)
    if idx.size < 2:
        raise ValidationError("need at least two subjects with >= 2 events to split")
    excluded = [s.subject_id for i, s in enumerate(sequences) if i not in set(idx.tolist())]
    rng = np.random.default_rng(seed)
    n = idx.size
    n_val = n // 2
    val = np.zeros((n_repeats, n), dtype=bool)
    for r in range(n_repeats):
        val[r, rng.permutation(n)[:n_val]] = True
    return SplitPlan(idx, held, val, int(seed), len(excluded), excluded)


# ---------------------------------------------------------- predictive density

def _log_next_density(theta, prefix_times, next_time, exact):
    mu, delta, omega = theta
    last = prefix_times[-1]
    gap = next_time - last
    lam = _backend.kernels.intensity(mu, delta, omega, prefix_times, next_time)
    if exact:
        comp = mu * gap + delta * np.sum(np.exp(-omega * (last - prefix_times))
                                         - np.exp(-omega * (next_time - prefix_times)))
    else:
        comp = mu * gap + delta * (1.0 - math.exp(-omega * gap))
    return math.log(lam) - comp


def predictive_log_terms(thetas, gamma, adaptation, prefixes, next_times,
                         exact_compensator=False) -> np.ndarray:
    """log of the mixture next-arrival density for each prefix.

    ``thetas`` is ``(K, 3)`` (common models adapted per subject with
    ``adaptation``) or ``(n, K, 3)`` (subject-specific models used as is).
    ``gamma`` is ``(n, K)``.
    """
    n = len(prefixes)
    gamma = np.asarray(gamma, float).reshape(n, -1)
    k = gamma.shape[1]
    next_times = np.asarray(next_times, float).reshape(n)
    for s, t in zip(prefixes, next_times):
        if len(s) == 0:
            raise ValidationError(f"subject {s.subject_id!r}: empty prefix")
        if not t > s.timestamps[-1]:
            raise ValidationError(
                f"subject {s.subject_id!r}: next time {t} not after last event "
                f"{s.timestamps[-1]}")
    thetas = np.asarray(thetas, float)
    if thetas.ndim == 2:
        params = np.tile(thetas.reshape(k, 3), (n, 1))
        if adaptation is not None and adaptation.inner_lr > 0:
            packed = PackedSequences(prefixes)
            params = meta_batch(params, packed, np.repeat(np.arange(n), k),
                                adaptation, outer=False).adapted
        params = params.reshape(n, k, 3)
    else:
        params = thetas.reshape(n, k, 3)
    out = np.empty(n)
    for i in range(n):
        ts = np.ascontiguousarray(prefixes[i].timestamps)
        # overflow shows up as a non-finite term and is reported below
        with np.errstate(all="ignore"):
            logs = np.array([_log_next_density(params[i, j], ts, next_times[i],
                                               exact_compensator) for j in range(k)])
            out[i] = np.logaddexp.reduce(np.log(gamma[i]) + logs)
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.isfinite(out))[0])
        sid = prefixes[bad].subject_id
        raise NumericError(f"non-finite predictive likelihood for {sid!r}", subject_id=sid)
    return out


def predictive_likelihood(thetas, gamma_i, adaptation, seq_prefix: EventSequence,
                          next_time: float, exact_compensator=False) -> float:
    """Mixture next-arrival density of one subject.

    ``thetas`` is a ``ModelParams``, a ``HawkesParams`` or a ``(K, 3)`` array.

    By default the compensator between the last event and ``next_time`` keeps
    only the last event's excitation, ``mu*D + delta*(1 - exp(-omega*D))``;
    ``exact_compensator`` integrates the full history.
    """
    if isinstance(thetas, HawkesParams):
        thetas = thetas.as_array()
    elif hasattr(thetas, "thetas"):
        thetas = thetas.thetas
    thetas = np.asarray(thetas, float).reshape(-1, 3)
    gamma_i = np.atleast_1d(np.asarray(gamma_i, float))
    val = predictive_log_terms(thetas, gamma_i[None, :], adaptation, [seq_prefix],
                               [next_time], exact_compensator)
    return float(math.exp(val[0]))


# --------------------------------------------------------------- candidates

@dataclass
class Candidate:
    """A fitted model reduced to what prediction needs.

    Either ``thetas`` is ``(K, 3)`` and adapted per subject with
    ``adaptation``, or ``thetas`` is ``(N, K, 3)`` holding subject-specific
    models. ``gamma`` is ``(N, K)`` over all training subjects.
    """

    name: str
    thetas: np.ndarray
    gamma: np.ndarray
    adaptation: AdaptationConfig | None = None
    holdout: bool = False

    @classmethod
    def from_fit(cls, result, name="meta-em", holdout=None) -> "Candidate":
        flag = getattr(result, "holdout", False) if holdout is None else holdout
        return cls(name, result.model.thetas.copy(), result.state.gamma.copy(),
                   result.config.effective_adaptation, bool(flag))

    @classmethod
    def per_subject(cls, name, thetas, holdout=False) -> "Candidate":
        thetas = np.asarray(thetas, float).reshape(-1, 1, 3)
        return cls(name, thetas, np.ones((thetas.shape[0], 1)), None, holdout)

    @classmethod
    def common(cls, name, theta, n_subjects, holdout=False) -> "Candidate":
        return cls(name, _as_array(theta)[None, :], np.ones((n_subjects, 1)), None, holdout)

    def log_terms(self, train_sequences, plan: SplitPlan, exact_compensator=False):
        idx = plan.subject_index
        prefixes = [train_sequences[i] for i in idx]
        thetas = self.thetas if self.thetas.ndim == 2 else self.thetas[idx]
        return predictive_log_terms(thetas, self.gamma[idx], self.adaptation, prefixes,
                                    plan.held_out, exact_compensator)


@dataclass
class EvalReport:
    mean: float
    stderr: float
    test_ll: np.ndarray
    chosen: np.ndarray
    candidate_names: list
    subject_ids: list
    log_terms: np.ndarray
    n_excluded: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "n_repeats": int(self.test_ll.size),
            "test_ll": self.test_ll.tolist(),
            "chosen": self.chosen.tolist(),
            "candidates": list(self.candidate_names),
            "subject_ids": list(self.subject_ids),
            "log_terms": self.log_terms.tolist(),
            "n_excluded": self.n_excluded,
            "seed": self.seed,
        }

    def write_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["repeat", "chosen_model", "test_ll"])
            for r, (c, v) in enumerate(zip(self.chosen, self.test_ll)):
                w.writerow([r, int(c), repr(float(v))])


def standard_error(values) -> float:
    """Sample standard deviation over sqrt(n)."""
    v = np.asarray(values, float)
    if v.size < 2:
        return 0.0
    return float(np.std(v, ddof=1) / math.sqrt(v.size))


def multi_split_evaluate(candidates, sequences, plan: SplitPlan,
                         exact_compensator=False) -> EvalReport:
    """Select on validation, score on test, once per repeat.

    ``sequences`` are the full sequences; the candidates must have been
    trained on the hold-out prefixes. Ties go to the lowest candidate index.
    """
    if not candidates:
        raise ValidationError("need at least one candidate model")
    cands = [c if isinstance(c, Candidate) else Candidate.from_fit(c) for c in candidates]
    for j, c in enumerate(cands):
        if not c.holdout:
            raise ValidationError(
                f"candidate {j} ({c.name}) was not trained with the last timestamps held out")
        if c.gamma.shape[0] != len(sequences):
            raise ValidationError(
                f"candidate {j} covers {c.gamma.shape[0]} subjects, data has {len(sequences)}")
    train, idx, held = hold_out_last(sequences)
    if not (np.array_equal(idx, plan.subject_index) and np.array_equal(held, plan.held_out)):
        raise ValidationError("split plan does not match these sequences")
    terms = np.vstack([c.log_terms(train, plan, exact_compensator) for c in cands])
    val = plan.validation
    test = ~val
    val_means = (terms @ val.T.astype(float)) / val.sum(axis=1)
    chosen = np.argmax(val_means, axis=0)
    test_means = np.array([terms[chosen[r], test[r]].mean() for r in range(plan.n_repeats)])
    return EvalReport(float(test_means.mean()), standard_error(test_means), test_means,
                      chosen, [c.name for c in cands],
                      [sequences[i].subject_id for i in idx], terms, plan.n_excluded, plan.seed)


# ---------------------------------------------------------------- baselines

@dataclass
class BaselineFit:
    thetas: np.ndarray
    converged: np.ndarray
    flagged: list


def _objective(packed, rows, nu):
    """Negated sum of Q over ``rows`` in log-parameter coordinates."""
    rows = np.asarray(rows, dtype=np.int64)

    def f(x):
        theta = np.exp(x)
        vals, grads, _ = packed.evaluate(np.tile(theta, (rows.size, 1)), rows, 1,
                                         nu=nu if nu else None)
        return -float(vals.sum()), -(grads.sum(axis=0) * theta)
    return f


def _maximize(f, x0, max_iter):
    bounds = [(LOG_FLOOR, LOG_CEIL)] * len(x0)
    res = minimize(f, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": max_iter, "ftol": 1e-15, "gtol": 1e-9})
    if not np.all(np.isfinite(res.x)):
        raise NumericError("optimizer returned non-finite parameters")
    return np.exp(res.x), bool(res.success)


def _start(seqs):
    m = sum(len(s) for s in seqs)
    t = sum(s.t_end for s in seqs)
    mu = max(m / max(t, 1e-12), 1e-3) * 0.5
    omega = 1.0 / max(t / max(len(seqs), 1), 1e-12) * 10.0
    return np.log([mu, 0.5, omega])


def baseline_mle_sep(sequences, nu=1e-2, max_iter=2000) -> BaselineFit:
    """Independent maximization of each subject's regularized likelihood."""
    packed = PackedSequences(sequences)
    thetas = np.empty((len(sequences), 3))
    ok = np.zeros(len(sequences), dtype=bool)
    for i, s in enumerate(sequences):
        thetas[i], ok[i] = _maximize(_objective(packed, [i], nu), _start([s]), max_iter)
    flagged = [sequences[i].subject_id for i in np.flatnonzero(~ok)]
    if flagged:
        log.warning("MLE-Sep did not converge for %d subjects", len(flagged))
    return BaselineFit(thetas, ok, flagged)


def baseline_mle_com(sequences, nu=1e-2, max_iter=2000) -> HawkesParams:
    """One shared model maximizing the pooled regularized likelihood."""
    if not sequences:
        raise ValidationError("no sequences")
    packed = PackedSequences(sequences)
    theta, ok = _maximize(_objective(packed, np.arange(len(sequences)), nu),
                          _start(sequences), max_iter)
    if not ok:
        log.warning("MLE-Com did not converge")
    return HawkesParams.from_array(theta)


MTL_SMOOTH = 1e-9


def baseline_mtl(sequences, nu=1e-2, nu_mtl=0.1, max_iter=5000, init=None):
    """Joint fit of per-subject models tied to a common one.

    Maximizes ``sum_i Q_i(rho_i) - nu_mtl * ||rho_i - rho_0||`` with the norm
    smoothed as ``sqrt(|d|^2 + eps^2)``. Returns ``(rho_0, rho, converged)``.
    """
    if not nu_mtl > 0:
        raise ValidationError(f"nu_mtl must be > 0, got {nu_mtl}")
    n = len(sequences)
    packed = PackedSequences(sequences)
    rows = np.arange(n)

    def f(x):
        p = np.exp(x).reshape(n + 1, 3)
        rho0, rho = p[0], p[1:]
        vals, grads, _ = packed.evaluate(rho, rows, 1, nu=nu if nu else None)
        d = rho - rho0
        norm = np.sqrt((d * d).sum(axis=1) + MTL_SMOOTH**2)
        obj = vals.sum() - nu_mtl * norm.sum()
        u = d / norm[:, None]
        g = np.empty_like(p)
        g[1:] = grads - nu_mtl * u
        g[0] = nu_mtl * u.sum(axis=0)
        return -float(obj), -(g * p).ravel()

    if init is None:
        sep = baseline_mle_sep(sequences, nu).thetas
        init = np.vstack([np.exp(np.log(sep).mean(axis=0)), sep])
    x0 = np.log(np.maximum(np.asarray(init, float).reshape(n + 1, 3), PARAM_FLOOR)).ravel()
    p, ok = _maximize(f, x0, max_iter)
    p = p.reshape(n + 1, 3)
    if not ok:
        log.warning("MTL did not converge")
    return p[0], p[1:], ok
