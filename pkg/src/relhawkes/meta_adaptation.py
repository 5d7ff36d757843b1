"""Per-subject adaptation of common Hawkes models (MAML, FOMAML, Reptile).

The inner step is gradient *ascent* on the regularized log-likelihood
``Q_i``: ``theta_tilde = proj(theta + eta * grad Q_i(theta))``, i.e. descent on
the loss ``-Q_i``. Every function here works on batches of (theta, subject)
rows so the trainer can evaluate all N*K pairs in one kernel call; the scalar
API wraps the batch one.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ValidationError
from .point_process import EventSequence, HawkesParams, PackedSequences, _as_array

PARAM_FLOOR = 1e-8


class Variant(str, enum.Enum):
    MAML = "maml"
    FOMAML = "fomaml"
    REPTILE = "reptile"


@dataclass(frozen=True)
class AdaptationConfig:
    variant: Variant = Variant.MAML
    inner_lr: float = 1e-4
    inner_steps: int = 1
    nu: float = 1e-2

    def __post_init__(self):
        try:
            object.__setattr__(self, "variant", Variant(str(getattr(self.variant, "value", self.variant)).lower()))
        except ValueError:
            raise ValidationError(f"unknown variant {self.variant!r}") from None
        if not (np.isfinite(self.inner_lr) and self.inner_lr >= 0):
            raise ValidationError(f"inner_lr must be >= 0, got {self.inner_lr}")
        if int(self.inner_steps) != self.inner_steps or self.inner_steps < 1:
            raise ValidationError(f"inner_steps must be a positive integer, got {self.inner_steps}")
        if self.variant is Variant.MAML and self.inner_steps > 1:
            raise ValidationError("MAML supports a single inner step only")
        if not (np.isfinite(self.nu) and self.nu >= 0):
            raise ValidationError(f"nu must be >= 0, got {self.nu}")

    def tied(self) -> "AdaptationConfig":
        """Same config with adaptation switched off (theta_tilde = theta)."""
        return AdaptationConfig(self.variant, 0.0, 1, self.nu)


@dataclass
class AdaptedModel:
    params: HawkesParams
    base_index: int
    subject_id: str


@dataclass
class MetaBatch:
    """Results for R (theta, subject) rows.

    adapted: (R, 3) adapted parameters; log_lik: (R,) raw log-likelihood at
    the adapted point; outer: (R, 3) unweighted outer-update directions;
    hessian: (R, 3, 3) Hessian of ``Q_i`` at the adapted point if requested.
    """

    adapted: np.ndarray
    log_lik: np.ndarray
    outer: np.ndarray | None
    clamped: np.ndarray
    hessian: np.ndarray | None = None


def _check_finite(grads, packed, seq_idx):
    bad = ~np.all(np.isfinite(grads), axis=1)
    if np.any(bad):
        r = int(np.flatnonzero(bad)[0])
        sid = packed.sequences[int(seq_idx[r])].subject_id
        raise NumericError(f"non-finite gradient for subject {sid!r}", subject_id=sid)


def meta_batch(thetas, packed: PackedSequences, seq_idx, cfg: AdaptationConfig,
               outer=True, hessian=False) -> MetaBatch:
    thetas = np.ascontiguousarray(thetas, dtype=float).reshape(-1, 3)
    seq_idx = np.asarray(seq_idx, dtype=np.int64)
    eta = cfg.inner_lr
    # without a barrier (nu = 0) boundary values such as delta = 0 are legal
    nu = cfg.nu if cfg.nu else None
    need_hess = outer and cfg.variant is Variant.MAML and eta > 0
    p = thetas.copy()
    clamped0 = np.zeros_like(p, dtype=bool)
    g0 = h0 = None
    if eta > 0:
        for step in range(cfg.inner_steps):
            order = 2 if (need_hess and step == 0) else 1
            _, g, h = packed.evaluate(p, seq_idx, order, nu=nu)
            _check_finite(g, packed, seq_idx)
            if step == 0:
                g0, h0 = g, h
            p = p + eta * g
            low = p < PARAM_FLOOR
            if step == 0:
                clamped0 = low
            p[low] = PARAM_FLOOR
    order = 2 if hessian else (1 if outer else 0)
    q_vals, g_t, h_t = packed.evaluate(p, seq_idx, order, nu=nu)
    log_lik = q_vals - nu * np.log(p).sum(axis=1) if nu else q_vals
    v = None
    if outer:
        _check_finite(g_t, packed, seq_idx)
        if eta == 0:
            # every variant degenerates to the plain gradient
            v = g_t
        elif cfg.variant is Variant.MAML:
            jac = np.eye(3)[None, :, :] + eta * h0
            jac[clamped0] = 0.0
            v = np.einsum("rji,rj->ri", jac, g_t)
        elif cfg.variant is Variant.FOMAML:
            v = g_t
        else:
            v = (p - thetas) / eta
    return MetaBatch(p, log_lik, v, clamped0, h_t if hessian else None)


def adapt(theta, seq: EventSequence, cfg: AdaptationConfig, base_index: int = 0) -> AdaptedModel:
    """Run ``cfg.inner_steps`` projected ascent steps on ``Q_i`` from ``theta``."""
    packed = PackedSequences([seq])
    res = meta_batch(_as_array(theta)[None, :], packed, [0], cfg, outer=False)
    return AdaptedModel(HawkesParams.from_array(res.adapted[0]), base_index, seq.subject_id)


def outer_gradient_contribution(theta, seq: EventSequence, gamma_ik: float,
                                cfg: AdaptationConfig) -> np.ndarray:
    """Subject ``i``'s weighted share of the common-model ascent direction.

    MAML differentiates through the inner step, ``(I + eta H) g(theta_tilde)``
    with ``H`` the Hessian of ``Q_i`` at ``theta``; FOMAML uses
    ``g(theta_tilde)``; Reptile uses ``(W - theta) / eta``.
    """
    if not 0.0 <= gamma_ik <= 1.0:
        raise ValidationError(f"gamma_ik must lie in [0, 1], got {gamma_ik}")
    packed = PackedSequences([seq])
    res = meta_batch(_as_array(theta)[None, :], packed, [0], cfg, outer=True)
    return gamma_ik * res.outer[0]


def composite_objective(theta, seq: EventSequence, cfg: AdaptationConfig) -> float:
    """``Q_i`` evaluated at the adapted point, as a function of ``theta``."""
    packed = PackedSequences([seq])
    res = meta_batch(_as_array(theta)[None, :], packed, [0], cfg, outer=False)
    return float(res.log_lik[0] + cfg.nu * np.log(res.adapted[0]).sum())


def maml_outer_gradient_check(theta, seq: EventSequence, cfg: AdaptationConfig,
                              rel_step: float = 1e-5) -> dict:
    """Compare the MAML outer gradient with central differences of the composite.

    The reported error is ``max|analytic - numeric| / max|numeric|``.
    """
    cfg = AdaptationConfig(Variant.MAML, cfg.inner_lr, 1, cfg.nu)
    theta = _as_array(theta)
    analytic = outer_gradient_contribution(theta, seq, 1.0, cfg)
    numeric = np.empty(3)
    for j in range(3):
        h = rel_step * max(abs(theta[j]), 1e-3)
        up, down = theta.copy(), theta.copy()
        up[j] += h
        down[j] -= h
        numeric[j] = (composite_objective(up, seq, cfg)
                      - composite_objective(down, seq, cfg)) / (2 * h)
    scale = max(np.max(np.abs(numeric)), 1e-300)
    return {
        "analytic": analytic,
        "numeric": numeric,
        "max_rel_error": float(np.max(np.abs(analytic - numeric)) / scale),
    }
