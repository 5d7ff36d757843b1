"""Synthetic benchmark: K communities, perturbed per-subject Hawkes models,
and a block-structured graph."""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import NumericWarning, ValidationError
from .point_process import EventSequence, normalize_sequences, simulate
from .relational_vi import RelationalGraph

COMMUNITY_RANGES = ((0.15, 10.0), (0.15, 0.85), (1.0, 10.0))
# variances of the per-subject Gaussian perturbation of (mu, delta, omega)
PERTURB_VAR = (0.01, 0.01, 0.05)
DIAG_MASS = 5.0


@dataclass
class SynthConfig:
    n_subjects: int = 50
    K: int = 6
    S: float = 1.0
    t_end: float = 20.0
    seed: int = 0
    community_thetas: np.ndarray | None = None
    mmb_edges: bool = False
    normalize: bool = True

    def __post_init__(self):
        if self.S < 0:
            raise ValidationError(f"S must be >= 0, got {self.S}")
        if self.K < 1 or self.K > self.n_subjects:
            raise ValidationError("need 1 <= K <= n_subjects")
        if self.t_end <= 0:
            raise ValidationError("t_end must be positive")
        if self.community_thetas is not None:
            ct = np.asarray(self.community_thetas, float).reshape(self.K, 3)
            if np.any(ct[:, 1] >= 1) or np.any(ct <= 0):
                raise ValidationError("community parameters must be positive with delta < 1")
            self.community_thetas = ct


@dataclass
class SynthTruth:
    community_thetas: np.ndarray
    pis: np.ndarray
    zs: np.ndarray
    subject_thetas: np.ndarray
    B_true: np.ndarray
    time_scale: float = 1.0
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "community_thetas": self.community_thetas.tolist(),
            "pis": self.pis.tolist(),
            "zs": self.zs.tolist(),
            "subject_thetas": self.subject_thetas.tolist(),
            "B_true": self.B_true.tolist(),
            "time_scale": self.time_scale,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d) -> "SynthTruth":
        return cls(np.asarray(d["community_thetas"], float), np.asarray(d["pis"], float),
                   np.asarray(d["zs"], int), np.asarray(d["subject_thetas"], float),
                   np.asarray(d["B_true"], float), float(d.get("time_scale", 1.0)),
                   list(d.get("warnings", [])))


def _perturb(rng, base):
    sd = np.sqrt(PERTURB_VAR)
    while True:
        theta = base + sd * rng.standard_normal(3)
        if theta[0] > 0 and theta[2] > 0 and 0 < theta[1] < 1:
            return theta


def generate(cfg: SynthConfig):
    """Return ``(sequences, graph, truth)``.

    Edge probabilities use the planted labels: B_kl = S/N off the diagonal
    and 5 / #{i: z_i = k} on it, one Bernoulli draw per unordered pair.
    """
    rng = np.random.default_rng(cfg.seed)
    n, k = cfg.n_subjects, cfg.K
    if cfg.community_thetas is None:
        thetas = np.column_stack([rng.uniform(lo, hi, size=k) for lo, hi in COMMUNITY_RANGES])
    else:
        thetas = cfg.community_thetas.copy()
    pis = rng.dirichlet(np.ones(k), size=n)
    zs = np.array([rng.choice(k, p=p) for p in pis])
    subject_thetas = np.array([_perturb(rng, thetas[z]) for z in zs])

    sim_seeds = np.random.SeedSequence(cfg.seed).spawn(n)
    ids = [f"s{i:04d}" for i in range(n)]
    seqs = [simulate(subject_thetas[i], cfg.t_end, sim_seeds[i], ids[i]) for i in range(n)]
    scale = 1.0
    if cfg.normalize and any(len(s) for s in seqs):
        scale = max(s.timestamps[-1] for s in seqs if len(s))
        seqs = normalize_sequences(seqs)

    notes = []
    sizes = np.bincount(zs, minlength=k)
    if np.any(sizes == 0):
        empty = np.flatnonzero(sizes == 0).tolist()
        msg = f"communities {empty} received no subjects; diagonal uses count 1"
        warnings.warn(msg, NumericWarning, stacklevel=2)
        notes.append(msg)
    B = np.full((k, k), cfg.S / n)
    np.fill_diagonal(B, DIAG_MASS / np.maximum(sizes, 1))
    probs = np.clip(B, 0.0, 1.0)

    Y = np.zeros((n, n))
    iu, ju = np.triu_indices(n, 1)
    if cfg.mmb_edges:
        send = np.array([rng.choice(k, p=pis[i]) for i in iu])
        recv = np.array([rng.choice(k, p=pis[j]) for j in ju])
        p_edge = probs[send, recv]
    else:
        p_edge = probs[zs[iu], zs[ju]]
    edges = rng.random(iu.size) < p_edge
    Y[iu[edges], ju[edges]] = 1.0
    Y = Y + Y.T
    truth = SynthTruth(thetas, pis, zs, subject_thetas, B, float(scale), notes)
    return seqs, RelationalGraph(n, Y, ids), truth


def planted_accuracy(estimated_gammas, truth) -> float:
    """Fraction of subjects whose argmax identity matches the planted label
    under the best one-to-one relabelling."""
    est = np.argmax(np.asarray(estimated_gammas), axis=1)
    zs = truth.zs if isinstance(truth, SynthTruth) else np.asarray(truth)
    k_est = int(np.asarray(estimated_gammas).shape[1])
    k_true = int(max(zs.max() + 1, truth.B_true.shape[0] if isinstance(truth, SynthTruth) else 0))
    conf = np.zeros((k_est, k_true))
    np.add.at(conf, (est, zs), 1.0)
    if max(k_est, k_true) <= 8:
        if k_est <= k_true:
            best = max(sum(conf[a, b] for a, b in zip(range(k_est), perm))
                       for perm in itertools.permutations(range(k_true), k_est))
        else:
            best = max(sum(conf[a, b] for a, b in zip(perm, range(k_true)))
                       for perm in itertools.permutations(range(k_est), k_true))
    else:
        r, c = linear_sum_assignment(-conf)
        best = conf[r, c].sum()
    return float(best / len(zs))
