"""Variational meta-EM training loop.

One sweep = E-step blocks (beta, gamma, phi/psi, beta), then the common-model
ascent step on ``sum_i gamma_ik Q_i(theta_tilde_k^(i))``, the closed-form B
update and, when enabled, the alpha step.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import relational_vi as vi
from .errors import NumericError, NumericWarning, ValidationError
from .meta_adaptation import PARAM_FLOOR, AdaptationConfig, meta_batch
from .point_process import EventSequence, PackedSequences

log = logging.getLogger(__name__)

# uniform ranges used to draw initial common models
INIT_RANGES = ((0.15, 10.0), (0.15, 0.85), (1.0, 10.0))
BACKOFF_LIMIT = 1024
# growth applied to the outer step size after each sweep, capped at outer_lr
LR_RECOVERY = 1.5
LOG_STEP_CLIP = 1.0
OUTER_STEPS = ("newton", "log", "raw")


@dataclass
class TrainConfig:
    K: int = 3
    adaptation: AdaptationConfig = field(default_factory=AdaptationConfig)
    outer_lr: float = 1.0
    alpha_lr: float = 0.0
    max_sweeps: int = 200
    elbo_rel_tol: float = 1e-6
    batch_size: int = 0
    rng_seed: int = 0
    learn_alpha: bool = False
    use_graph: bool = True
    tie_adapted: bool = False
    # "newton": damped Newton step in log-parameter coordinates using the
    # gamma-weighted curvature of Q at the adapted points; "log": ascent in
    # log coordinates normalised by the weighted event count; "raw": plain ascent.
    outer_step: str = "newton"
    # random restarts; the run with the highest final ELBO is kept
    n_init: int = 1

    def __post_init__(self):
        if isinstance(self.adaptation, dict):
            self.adaptation = AdaptationConfig(**self.adaptation)
        if int(self.K) != self.K or self.K < 1:
            raise ValidationError(f"K must be a positive integer, got {self.K}")
        if self.outer_lr < 0 or self.alpha_lr < 0:
            raise ValidationError("learning rates must be >= 0")
        if self.max_sweeps < 0 or self.batch_size < 0:
            raise ValidationError("max_sweeps and batch_size must be >= 0")
        if int(self.n_init) != self.n_init or self.n_init < 1:
            raise ValidationError(f"n_init must be a positive integer, got {self.n_init}")
        if self.outer_step not in OUTER_STEPS:
            raise ValidationError(f"unknown outer_step {self.outer_step!r}")

    @property
    def effective_adaptation(self) -> AdaptationConfig:
        return self.adaptation.tied() if self.tie_adapted else self.adaptation

    def to_dict(self) -> dict:
        a = self.adaptation
        return {
            "K": self.K,
            "adaptation": {"variant": a.variant.value, "inner_lr": a.inner_lr,
                           "inner_steps": a.inner_steps, "nu": a.nu},
            "outer_lr": self.outer_lr, "alpha_lr": self.alpha_lr,
            "max_sweeps": self.max_sweeps, "elbo_rel_tol": self.elbo_rel_tol,
            "batch_size": self.batch_size, "rng_seed": self.rng_seed,
            "learn_alpha": self.learn_alpha, "use_graph": self.use_graph,
            "tie_adapted": self.tie_adapted, "outer_step": self.outer_step,
            "n_init": self.n_init,
        }


@dataclass
class FitResult:
    model: vi.ModelParams
    state: vi.VariationalState
    elbo_trace: list
    warnings: dict
    config: TrainConfig
    converged: bool = False
    n_sweeps: int = 0
    final_outer_lr: float = 0.0
    fixed_gamma: bool = False


def initialize(sequences, graph, cfg: TrainConfig, seed=None):
    """Random common models from ``INIT_RANGES``; uniform variational state."""
    n, k = len(sequences), cfg.K
    rng = np.random.default_rng(cfg.rng_seed if seed is None else seed)
    thetas = np.column_stack([rng.uniform(lo, hi, size=k) for lo, hi in INIT_RANGES])
    model = vi.ModelParams(thetas, np.full((k, k), 0.5), np.ones(k))
    state = vi.VariationalState.uniform(n, k, model.alpha)
    if not cfg.use_graph:
        state.beta = model.alpha[None, :] + state.gamma
    return model, state


class _Trainer:
    def __init__(self, sequences, graph, cfg, model, state, fixed_gamma):
        self.cfg = cfg
        self.packed = PackedSequences(sequences)
        self.ids = [s.subject_id for s in sequences]
        self.n = len(sequences)
        self.k = cfg.K
        self.Y = graph.adjacency if (graph is not None and cfg.use_graph) else None
        self.use_graph = self.Y is not None
        self.adapt_cfg = cfg.effective_adaptation
        self.model, self.state = model, state
        self.fixed_gamma = fixed_gamma
        if fixed_gamma is not None:
            self.state.gamma = np.asarray(fixed_gamma, float).copy()
            self.state.beta = model.alpha[None, :] + self.state.gamma
        self.rows_all = np.repeat(np.arange(self.n), self.k)
        self.counters = {"intensity_clamps": 0, "zero_mass_blocks": 0, "backoffs": 0}

    def meta(self, thetas, rows=None):
        """Meta quantities for the (subject, identity) grid restricted to ``rows``."""
        rows = np.arange(self.n) if rows is None else rows
        seq_idx = np.repeat(rows, self.k)
        params = np.tile(thetas, (len(rows), 1))
        newton = self.cfg.outer_step == "newton"
        mb = meta_batch(params, self.packed, seq_idx, self.adapt_cfg, outer=True,
                        hessian=newton)
        aux = mb.hessian.reshape(len(rows), self.k, 3, 3) if newton else None
        nu = self.adapt_cfg.nu
        # regularizer at the adapted parameters, used only to accept theta steps
        self._reg = (nu * np.log(mb.adapted).sum(axis=1) if nu else np.zeros(len(seq_idx))
                     ).reshape(len(rows), self.k)
        return (mb.log_lik.reshape(len(rows), self.k),
                mb.outer.reshape(len(rows), self.k, 3), aux)

    def elbo(self, state, model, log_lik):
        return vi.elbo(state, model, log_lik, self.Y, self.use_graph)

    def estep(self, log_lik, rows=None, pairs=None):
        if self.fixed_gamma is not None:
            return
        st, alpha = self.state, self.model.alpha
        sel = slice(None) if rows is None else rows
        st.beta[sel] = vi.update_beta(st, alpha, self.use_graph)[sel]
        full_ll = log_lik
        if rows is not None:
            full_ll = np.zeros((self.n, self.k))
            full_ll[rows] = log_lik
        st.gamma = vi.update_gamma(st, full_ll, rows=rows, subject_ids=self.ids)
        if self.use_graph:
            st.phi, st.psi = vi.update_phi_psi(st, self.model.B, self.Y, pairs)
        st.beta[sel] = vi.update_beta(st, alpha, self.use_graph)[sel]

    def precondition(self, gamma, counts, hess, grad):
        """Per-identity scaling consumed by ``theta_step``."""
        if self.cfg.outer_step == "newton":
            # curvature in log-parameter space; theta_step rescales the direction
            thetas = self.model.thetas
            curv = -np.einsum("ik,ikab->kab", gamma, hess)
            curv = curv * thetas[:, :, None] * thetas[:, None, :]
            curv[:, [0, 1, 2], [0, 1, 2]] -= thetas * grad
            w, v = np.linalg.eigh(curv)
            w = np.abs(w)
            w = np.maximum(w, 1e-10 * np.max(w, axis=1, keepdims=True) + 1e-300)
            return np.einsum("kab,kb,kcb->kac", v, 1.0 / w, v)
        if self.cfg.outer_step == "log":
            return gamma.T @ (counts + 1.0)
        return None

    def theta_step(self, thetas, direction, precond, lr):
        kind = self.cfg.outer_step
        if kind == "raw":
            return np.maximum(thetas + lr * direction, PARAM_FLOOR)
        if kind == "log":
            step = lr * thetas * direction / np.maximum(precond, 1e-12)[:, None]
            step = np.clip(step, -LOG_STEP_CLIP, LOG_STEP_CLIP)
            return np.maximum(thetas * np.exp(step), PARAM_FLOOR)
        step = lr * np.einsum("kab,kb->ka", precond, thetas * direction)
        # trust region in log space: no coordinate may halve or double in one step;
        # the step is scaled as a whole so it stays an ascent direction
        size = np.abs(step).max(axis=1, keepdims=True)
        step = step * np.minimum(1.0, np.log(2.0) / np.maximum(size, 1e-300))
        return np.maximum(thetas * np.exp(step), PARAM_FLOOR)

    def mstep_graph(self, pairs=None):
        if self.use_graph:
            B, n_zero = vi.update_B(self.state, self.Y, self.model.B, pairs)
            self.counters["zero_mass_blocks"] += n_zero
            return B
        return self.model.B

    def mstep_alpha(self):
        if self.cfg.learn_alpha and self.cfg.alpha_lr > 0:
            return vi.update_alpha(self.model.alpha, self.state.beta, self.cfg.alpha_lr)
        return self.model.alpha

    def run(self):
        cfg = self.cfg
        lr = cfg.outer_lr
        lr_floor = cfg.outer_lr / BACKOFF_LIMIT
        log_lik, outer, aux = self.meta(self.model.thetas)
        trace = [self.elbo(self.state, self.model, log_lik)]
        converged = False
        full = cfg.batch_size == 0 or cfg.batch_size >= self.n
        rng = np.random.default_rng(cfg.rng_seed)
        iters_per_sweep = 1 if full else math.ceil(self.n / cfg.batch_size)
        sweeps = 0
        while sweeps < cfg.max_sweeps:
            if full:
                log_lik, outer, aux, lr = self._full_sweep(log_lik, outer, aux, lr, lr_floor)
                lr = min(lr * LR_RECOVERY, cfg.outer_lr)
                cur = self.elbo(self.state, self.model, log_lik)
            else:
                for _ in range(iters_per_sweep):
                    batch = np.sort(rng.choice(self.n, size=cfg.batch_size, replace=False))
                    self._stochastic_iteration(batch, lr)
                log_lik, outer, aux = self.meta(self.model.thetas)
                cur = self.elbo(self.state, self.model, log_lik)
            if not np.isfinite(cur):
                raise NumericError("non-finite ELBO after sweep", block="sweep")
            sweeps += 1
            prev = trace[-1]
            trace.append(cur)
            if abs(cur - prev) <= cfg.elbo_rel_tol * max(abs(prev), 1e-300):
                converged = True
                break
        return trace, converged, sweeps, lr

    def _full_sweep(self, log_lik, outer, aux, lr, lr_floor):
        self.estep(log_lik)
        gamma = self.state.gamma
        # theta ascends the regularized objective, so steps are judged on it
        e_obj = self.elbo(self.state, self.model, log_lik) + np.sum(gamma * self._reg)
        direction = np.einsum("ik,ikj->kj", gamma, outer)
        precond = self.precondition(gamma, self.packed.counts, aux, direction)
        B = self.mstep_graph()
        alpha = self.mstep_alpha()
        thetas0 = self.model.thetas
        while True:
            thetas = self.theta_step(thetas0, direction, precond, lr)
            cand = vi.ModelParams(thetas, B, alpha)
            new_ll, new_outer, new_aux = self.meta(thetas)
            m_obj = self.elbo(self.state, cand, new_ll) + np.sum(gamma * self._reg)
            if m_obj >= e_obj - 1e-6 * abs(e_obj) or lr <= lr_floor:
                break
            lr = max(lr / 2.0, lr_floor)
            self.counters["backoffs"] += 1
        self.model = cand
        return new_ll, new_outer, new_aux, lr

    def _stochastic_iteration(self, batch, lr):
        n = self.n
        scale = n / len(batch)
        log_lik, outer, aux = self.meta(self.model.thetas, batch)
        in_batch = np.zeros(n, dtype=bool)
        in_batch[batch] = True
        ii, jj = vi.offdiag_pairs(n)
        keep = in_batch[ii] | in_batch[jj]
        pairs = (ii[keep], jj[keep])
        self.estep(log_lik, rows=batch, pairs=pairs)
        gamma = self.state.gamma[batch]
        direction = scale * np.einsum("ik,ikj->kj", gamma, outer)
        precond = self.precondition(gamma, self.packed.counts[batch], aux, direction / scale)
        if self.cfg.outer_step == "newton":
            precond = precond / scale
        elif self.cfg.outer_step == "log":
            precond = precond * scale
        B = self.mstep_graph(pairs)
        alpha = self.mstep_alpha()
        thetas = self.theta_step(self.model.thetas, direction, precond, lr)
        self.model = vi.ModelParams(thetas, B, alpha)


def _validate_inputs(sequences, graph, cfg):
    if not sequences:
        raise ValidationError("no sequences to fit")
    if cfg.use_graph:
        if graph is None:
            raise ValidationError("use_graph is set but no graph was given")
        if graph.n_subjects != len(sequences):
            raise ValidationError(
                f"graph has {graph.n_subjects} subjects, data has {len(sequences)}")
    if cfg.K > 1 and len(sequences) < 1:
        raise ValidationError("need at least one subject")


def _count_warnings(caught, counters):
    for w in caught:
        if issubclass(w.category, NumericWarning) and "clamped" in str(w.message):
            counters["intensity_clamps"] += 1


def fit_stochastic(sequences: Sequence[EventSequence], graph, cfg: TrainConfig,
                   init=None, fixed_gamma=None) -> FitResult:
    """Fit by sweeps over subject mini-batches of ``cfg.batch_size``.

    ``batch_size`` 0 or >= N is the full-batch algorithm. ``init`` optionally
    supplies ``(ModelParams, VariationalState)``; ``fixed_gamma`` freezes the
    identity responsibilities (two-step procedure). Without ``init``,
    ``cfg.n_init`` random starts are run and the best final ELBO wins.
    """
    _validate_inputs(sequences, graph, cfg)
    if init is None and cfg.n_init > 1:
        runs = [_fit_once(sequences, graph, cfg,
                          initialize(sequences, graph, cfg, seed=[cfg.rng_seed, r] if r else None),
                          fixed_gamma) for r in range(cfg.n_init)]
        return max(runs, key=lambda res: res.elbo_trace[-1])
    if init is None:
        init = initialize(sequences, graph, cfg)
    return _fit_once(sequences, graph, cfg, init, fixed_gamma)


def _fit_once(sequences, graph, cfg, init, fixed_gamma) -> FitResult:
    model, state = init
    model, state = model.copy(), state.copy()
    trainer = _Trainer(sequences, graph, cfg, model, state, fixed_gamma)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NumericWarning)
        trace, converged, sweeps, lr = trainer.run()
    _count_warnings(caught, trainer.counters)
    guards = {k: v for k, v in trainer.counters.items() if k != "backoffs"}
    if any(guards.values()):
        log.warning("numerical guards fired during fit: %s", guards)
    log.info("fit: %d sweeps, converged=%s, %d step backoffs", sweeps, converged,
             trainer.counters["backoffs"])
    return FitResult(trainer.model, trainer.state, trace, dict(trainer.counters),
                     cfg, converged, sweeps, lr, fixed_gamma is not None)


def fit(sequences: Sequence[EventSequence], graph, cfg: TrainConfig, init=None,
        fixed_gamma=None) -> FitResult:
    """Full-batch variational meta-EM until the ELBO stalls or ``max_sweeps``."""
    return fit_stochastic(sequences, graph, replace(cfg, batch_size=0), init, fixed_gamma)


def fit_mmb(graph, K, seed=0, max_sweeps=200, tol=1e-8, alpha=None):
    """Blockmodel-only variational EM (no sequences).

    Returns ``(state, B)``; the identity estimate of subject ``i`` is
    ``beta_i / sum(beta_i)``. The pair responsibilities start from a random
    Dirichlet draw to break the label symmetry.
    """
    n = graph.n_subjects
    alpha = np.ones(K) if alpha is None else np.asarray(alpha, float)
    rng = np.random.default_rng(seed)
    phi = rng.dirichlet(np.ones(K), size=(n, n))
    psi = rng.dirichlet(np.ones(K), size=(n, n))
    state = vi.VariationalState(np.zeros((n, K)), np.zeros((n, K)), phi, psi)
    state.beta = vi.update_beta(state, alpha)
    B, _ = vi.update_B(state, graph.adjacency)
    model = vi.ModelParams(np.ones((K, 3)), B, alpha)
    prev = None
    for _ in range(max_sweeps):
        state.phi, state.psi = vi.update_phi_psi(state, B, graph.adjacency)
        state.beta = vi.update_beta(state, alpha)
        B, _ = vi.update_B(state, graph.adjacency, B)
        model.B = B
        cur = vi.elbo(state, model, np.zeros((n, K)), graph.adjacency)
        if prev is not None and abs(cur - prev) <= tol * abs(prev):
            break
        prev = cur
    return state, B


def fit_two_step(sequences, graph, cfg: TrainConfig, mmb_sweeps=200) -> FitResult:
    """Identities from the blockmodel alone, then common models with them frozen."""
    state, B = fit_mmb(graph, cfg.K, seed=cfg.rng_seed, max_sweeps=mmb_sweeps)
    pi_bar = state.beta / state.beta.sum(axis=1, keepdims=True)
    res = fit(sequences, None, replace(cfg, use_graph=False), fixed_gamma=pi_bar)
    res.model.B = B
    return res
