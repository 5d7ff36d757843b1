"""Mean-field variational inference for the relational mixture.

q(pi_i) = Dirichlet(beta_i), q(z_i) = Cat(gamma_i), q(z_{i->j}) = Cat(phi_ij),
q(z_{i<-j}) = Cat(psi_ij). ``psi_ij`` is the receiver identity of pair (i, j),
so it is driven by ``pi_j``. Self-pairs (i, i) are never used: the diagonal
of ``phi``/``psi`` is kept uniform and masked out of every sum.

All responsibilities are computed in the log domain.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln, logsumexp, xlogy

from .errors import DomainError, NumericError, NumericWarning, ValidationError

B_EPS = 1e-6
ALPHA_FLOOR = 1e-6


@dataclass
class RelationalGraph:
    n_subjects: int
    adjacency: np.ndarray
    subject_ids: list | None = None

    def __post_init__(self):
        Y = np.asarray(self.adjacency, dtype=float)
        if Y.shape != (self.n_subjects, self.n_subjects):
            raise ValidationError(
                f"adjacency shape {Y.shape} does not match {self.n_subjects} subjects")
        if not np.all((Y == 0) | (Y == 1)):
            raise ValidationError("adjacency entries must be 0 or 1")
        Y = Y.copy()
        np.fill_diagonal(Y, 0.0)
        self.adjacency = Y

    @classmethod
    def empty(cls, n, subject_ids=None):
        return cls(n, np.zeros((n, n)), subject_ids)

    @property
    def n_edges(self) -> int:
        """Number of undirected edges (symmetric adjacency assumed)."""
        return int(np.triu(self.adjacency, 1).sum())


@dataclass
class VariationalState:
    beta: np.ndarray
    gamma: np.ndarray
    phi: np.ndarray
    psi: np.ndarray

    @property
    def n_subjects(self):
        return self.gamma.shape[0]

    @property
    def n_identities(self):
        return self.gamma.shape[1]

    def copy(self) -> "VariationalState":
        return VariationalState(self.beta.copy(), self.gamma.copy(),
                                self.phi.copy(), self.psi.copy())

    @classmethod
    def uniform(cls, n, k, alpha=None):
        alpha = np.ones(k) if alpha is None else np.asarray(alpha, float)
        gamma = np.full((n, k), 1.0 / k)
        phi = np.full((n, n, k), 1.0 / k)
        beta = alpha[None, :] + 1.0 / k + 2.0 * (n - 1) / k + np.zeros((n, k))
        return cls(beta, gamma, phi, phi.copy())

    def validate(self, tol=1e-12):
        if np.any(~(self.beta > 0)):
            raise ValidationError("beta must be strictly positive")
        for name in ("gamma", "phi", "psi"):
            arr = getattr(self, name)
            if np.any(arr < 0) or np.any(np.abs(arr.sum(axis=-1) - 1.0) > tol):
                raise ValidationError(f"{name} rows are not on the simplex")


@dataclass
class ModelParams:
    thetas: np.ndarray
    B: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        self.thetas = np.asarray(self.thetas, dtype=float).reshape(-1, 3)
        k = self.thetas.shape[0]
        self.B = np.asarray(self.B, dtype=float).reshape(k, k)
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(k)

    @property
    def n_identities(self):
        return self.thetas.shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(self.thetas.copy(), self.B.copy(), self.alpha.copy())


def offdiag_pairs(n):
    ii, jj = np.nonzero(~np.eye(n, dtype=bool))
    return ii, jj


def expected_log_pi(beta) -> np.ndarray:
    """E_q[log pi] under Dirichlet(beta); accepts one row or a matrix."""
    beta = np.asarray(beta, dtype=float)
    if np.any(~(beta > 0)):
        raise DomainError("Dirichlet parameters must be positive")
    return digamma(beta) - digamma(beta.sum(axis=-1, keepdims=True))


def update_beta(state: VariationalState, alpha, use_graph=True) -> np.ndarray:
    """beta_i = alpha + gamma_i + sum_{j != i} phi_ij + sum_{j != i} psi_ji."""
    beta = np.asarray(alpha, float)[None, :] + state.gamma
    if use_graph:
        n = state.n_subjects
        mask = (~np.eye(n, dtype=bool))[:, :, None]
        beta = beta + (state.phi * mask).sum(axis=1) + (state.psi * mask).sum(axis=0)
    return beta


def _softmax_rows(logits, subject_ids=None, rows=None):
    norm = logsumexp(logits, axis=-1, keepdims=True)
    bad = ~np.isfinite(norm[..., 0])
    if np.any(bad):
        r = int(np.flatnonzero(bad)[0])
        if rows is not None:
            r = int(rows[r])
        sid = subject_ids[r] if subject_ids is not None else r
        raise NumericError(f"degenerate responsibilities for subject {sid!r}",
                           subject_id=sid, block="gamma")
    return np.exp(logits - norm)


def update_gamma(state: VariationalState, log_lik, rows=None, subject_ids=None) -> np.ndarray:
    """gamma_ik proportional to exp(E[log pi_ik]) * L_i(theta_tilde_k^(i)).

    ``log_lik`` is the (N, K) matrix of adapted log-likelihoods. ``rows``
    restricts the update to a subset of subjects.
    """
    gamma = state.gamma.copy()
    rows = np.arange(state.n_subjects) if rows is None else np.asarray(rows)
    logits = expected_log_pi(state.beta[rows]) + np.asarray(log_lik)[rows]
    gamma[rows] = _softmax_rows(logits, subject_ids, rows)
    return gamma


def _bernoulli_logs(B):
    B = np.asarray(B, float)
    if np.any(B <= 0) or np.any(B >= 1):
        raise DomainError("B entries must lie strictly inside (0, 1)")
    return np.log(B), np.log1p(-B)


def update_phi_psi(state: VariationalState, B, Y, pairs=None):
    """Sender then receiver responsibilities for the given ordered pairs.

    ``pairs`` is ``(ii, jj)``; defaults to all pairs with i != j.
    """
    log_b, log_1mb = _bernoulli_logs(B)
    diff = log_b - log_1mb
    ii, jj = offdiag_pairs(state.n_subjects) if pairs is None else pairs
    elog = expected_log_pi(state.beta)
    y = np.asarray(Y, float)[ii, jj][:, None]
    phi, psi = state.phi.copy(), state.psi.copy()
    psi_p = psi[ii, jj]
    logits = elog[ii] + y * (psi_p @ diff.T) + psi_p @ log_1mb.T
    phi_p = _softmax_rows(logits)
    phi[ii, jj] = phi_p
    logits = elog[jj] + y * (phi_p @ diff) + phi_p @ log_1mb
    psi[ii, jj] = _softmax_rows(logits)
    return phi, psi


def block_sums(state: VariationalState, Y, pairs=None):
    """Numerator and denominator of the closed-form B update."""
    ii, jj = offdiag_pairs(state.n_subjects) if pairs is None else pairs
    phi_p, psi_p = state.phi[ii, jj], state.psi[ii, jj]
    y = np.asarray(Y, float)[ii, jj]
    num = np.einsum("p,pk,pl->kl", y, phi_p, psi_p)
    den = np.einsum("pk,pl->kl", phi_p, psi_p)
    return num, den


def update_B(state: VariationalState, Y, B_prev=None, pairs=None, eps=B_EPS):
    """B_kl = sum Y phi_k psi_l / sum phi_k psi_l over ordered pairs i != j.

    Entries with a zero denominator keep their previous value (0.5 when no
    previous B is given). Returns ``(B, n_zero_denominators)``.
    """
    num, den = block_sums(state, Y, pairs)
    k = num.shape[0]
    B = np.full((k, k), 0.5) if B_prev is None else np.array(B_prev, float)
    ok = den > 0
    B[ok] = num[ok] / den[ok]
    n_zero = int((~ok).sum())
    if n_zero:
        warnings.warn(f"{n_zero} block(s) with zero mass left unchanged",
                      NumericWarning, stacklevel=2)
    return np.clip(B, eps, 1.0 - eps), n_zero


def alpha_gradient(alpha, beta) -> np.ndarray:
    alpha = np.asarray(alpha, float)
    n = beta.shape[0]
    return (n * (digamma(alpha.sum()) - digamma(alpha))
            + expected_log_pi(beta).sum(axis=0))


def update_alpha(alpha, beta, step) -> np.ndarray:
    """One gradient-ascent step on the Dirichlet prior parameters."""
    alpha = np.asarray(alpha, float)
    if np.any(alpha <= 0):
        raise DomainError("alpha must be positive")
    if step == 0:
        return alpha.copy()
    return np.maximum(alpha + step * alpha_gradient(alpha, beta), ALPHA_FLOOR)


def elbo_terms(state: VariationalState, model: ModelParams, log_lik, Y=None,
               use_graph=True) -> dict:
    """ELBO broken into its factors.

    Constants that do not depend on any learnable quantity are omitted.
    """
    elog = expected_log_pi(state.beta)
    alpha = model.alpha
    n = state.n_subjects
    terms = {}
    terms["sequences"] = float(np.sum(state.gamma * log_lik))
    terms["z"] = float(np.sum(state.gamma * elog))
    terms["pi_prior"] = float(n * (gammaln(alpha.sum()) - gammaln(alpha).sum())
                              + np.sum((alpha - 1.0) * elog))
    terms["q_pi"] = float(np.sum(gammaln(state.beta.sum(axis=1)))
                          - np.sum(gammaln(state.beta))
                          + np.sum((state.beta - 1.0) * elog))
    terms["q_z"] = float(np.sum(xlogy(state.gamma, state.gamma)))
    if use_graph:
        ii, jj = offdiag_pairs(n)
        phi_p, psi_p = state.phi[ii, jj], state.psi[ii, jj]
        log_b, log_1mb = _bernoulli_logs(model.B)
        y = np.asarray(Y, float)[ii, jj]
        terms["z_send"] = float(np.sum(phi_p * elog[ii]))
        terms["z_recv"] = float(np.sum(psi_p * elog[jj]))
        exp_b = np.einsum("pk,pl,kl->p", phi_p, psi_p, log_b)
        exp_1mb = np.einsum("pk,pl,kl->p", phi_p, psi_p, log_1mb)
        terms["graph"] = float(np.sum(y * exp_b + (1.0 - y) * exp_1mb))
        terms["q_send"] = float(np.sum(xlogy(phi_p, phi_p)))
        terms["q_recv"] = float(np.sum(xlogy(psi_p, psi_p)))
    for name, val in terms.items():
        if not np.isfinite(val):
            raise NumericError(f"non-finite ELBO term {name!r}", block=name)
    return terms


_NEGATIVE = ("q_pi", "q_z", "q_send", "q_recv")


def elbo(state: VariationalState, model: ModelParams, log_lik, Y=None,
         use_graph=True) -> float:
    """E_q[log p(z, z_send, z_recv, pi, T, Y)] - E_q[log q]."""
    terms = elbo_terms(state, model, log_lik, Y, use_graph)
    return float(sum(-v if k in _NEGATIVE else v for k, v in terms.items()))
