"""File formats: JSONL sequences, CSV edge lists, JSON checkpoints and the
community-colour export.

Floats are written by ``json`` (shortest repr), which round-trips every
double exactly.
"""
from __future__ import annotations

import colorsys
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import relational_vi as vi
from .errors import ValidationError
from .evaluation import Candidate
from .meta_adaptation import AdaptationConfig
from .point_process import EventSequence
from .relational_vi import RelationalGraph

FORMAT_VERSION = 1

# Base palette (RGB, 0-255), indexed by identity.
PALETTE = (
    (31, 119, 180),   # blue
    (255, 127, 14),   # orange
    (44, 160, 44),    # green
    (214, 39, 40),    # red
    (148, 103, 189),  # purple
    (140, 86, 75),    # brown
    (227, 119, 194),  # pink
    (127, 127, 127),  # grey
    (188, 189, 34),   # olive
    (23, 190, 207),   # cyan
    (174, 199, 232),  # light blue
    (255, 187, 120),  # light orange
)


# ---------------------------------------------------------------- sequences

def read_sequences(path) -> list[EventSequence]:
    """One JSON object per line: ``subject_id``, ``timestamps``, ``t_end``."""
    seqs, seen = [], set()
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                sid = str(rec["subject_id"])
                ts = rec["timestamps"]
                t_end = rec["t_end"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValidationError(f"{path}:{lineno}: malformed record ({exc})") from None
            if sid in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate subject {sid!r}")
            seen.add(sid)
            try:
                seqs.append(EventSequence(np.asarray(ts, dtype=float), float(t_end), sid))
            except (TypeError, ValueError) as exc:
                if isinstance(exc, ValidationError):
                    raise ValidationError(f"{path}:{lineno}: {exc}") from None
                raise ValidationError(
                    f"{path}:{lineno}: subject {sid!r}: bad numeric field ({exc})") from None
    return seqs


def write_sequences(sequences, path):
    with open(path, "w") as f:
        for s in sequences:
            f.write(json.dumps({"subject_id": s.subject_id,
                                "timestamps": s.timestamps.tolist(),
                                "t_end": s.t_end}) + "\n")


# -------------------------------------------------------------------- graph

def read_graph(path, subject_ids) -> RelationalGraph:
    """Undirected edge list ``id_a,id_b``; blank lines and ``#`` comments skipped."""
    ids = list(subject_ids)
    index = {sid: i for i, sid in enumerate(ids)}
    n = len(ids)
    Y = np.zeros((n, n))
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), 1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            if len(row) != 2:
                raise ValidationError(f"{path}:{lineno}: expected two subject ids")
            a, b = (x.strip() for x in row)
            for x in (a, b):
                if x not in index:
                    raise ValidationError(f"{path}:{lineno}: unknown subject {x!r}")
            if a == b:
                raise ValidationError(f"{path}:{lineno}: self-loop on {a!r}")
            i, j = index[a], index[b]
            Y[i, j] = Y[j, i] = 1.0
    return RelationalGraph(n, Y, ids)


def write_graph(graph: RelationalGraph, path):
    ids = graph.subject_ids or [str(i) for i in range(graph.n_subjects)]
    iu, ju = np.nonzero(np.triu(graph.adjacency, 1))
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        for i, j in zip(iu, ju):
            w.writerow([ids[i], ids[j]])


# -------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    """Serialized fit.

    ``kind`` is one of ``meta-em``, ``two-step``, ``mle-sep``, ``mle-com``,
    ``mtl``. Baselines store their models in ``subject_thetas`` (per
    subject) or ``model.thetas`` (common) and carry no variational state.
    """

    kind: str
    model: vi.ModelParams
    state: vi.VariationalState | None
    config: dict
    holdout: bool
    subject_ids: list
    elbo_trace: list = field(default_factory=list)
    subject_thetas: np.ndarray | None = None
    extra: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @classmethod
    def from_fit(cls, result, subject_ids, holdout, kind="meta-em") -> "Checkpoint":
        extra = {"converged": bool(result.converged), "n_sweeps": int(result.n_sweeps),
                 "warnings": dict(result.warnings),
                 "final_outer_lr": float(result.final_outer_lr)}
        return cls(kind, result.model.copy(), result.state.copy(), result.config.to_dict(),
                   bool(holdout), list(subject_ids), [float(x) for x in result.elbo_trace],
                   None, extra)

    def to_candidate(self, name=None) -> Candidate:
        name = name or self.kind
        n = len(self.subject_ids)
        if self.subject_thetas is not None:
            return Candidate.per_subject(name, self.subject_thetas, self.holdout)
        if self.state is None:
            return Candidate(name, self.model.thetas.copy(), np.ones((n, self.model.thetas.shape[0])),
                             None, self.holdout)
        a = self.config.get("adaptation", {})
        adapt = AdaptationConfig(a.get("variant", "maml"), a.get("inner_lr", 0.0),
                                 a.get("inner_steps", 1), a.get("nu", 1e-2))
        if self.config.get("tie_adapted"):
            adapt = adapt.tied()
        return Candidate(name, self.model.thetas.copy(), self.state.gamma.copy(), adapt,
                         self.holdout)

    def to_dict(self) -> dict:
        d = {
            "format_version": self.format_version,
            "kind": self.kind,
            "holdout": self.holdout,
            "subject_ids": list(self.subject_ids),
            "config": self.config,
            "model": {"thetas": self.model.thetas.tolist(), "B": self.model.B.tolist(),
                      "alpha": self.model.alpha.tolist()},
            "state": None,
            "elbo_trace": list(self.elbo_trace),
            "subject_thetas": None if self.subject_thetas is None else self.subject_thetas.tolist(),
            "extra": self.extra,
        }
        if self.state is not None:
            st = self.state
            d["state"] = {"beta": st.beta.tolist(), "gamma": st.gamma.tolist(),
                          "phi": st.phi.tolist(), "psi": st.psi.tolist()}
        return d

    @classmethod
    def from_dict(cls, d) -> "Checkpoint":
        version = d.get("format_version")
        if version != FORMAT_VERSION:
            raise ValidationError(f"unsupported checkpoint format_version {version!r}")
        try:
            m = d["model"]
            model = vi.ModelParams(np.asarray(m["thetas"], float), np.asarray(m["B"], float),
                                   np.asarray(m["alpha"], float))
            state = None
            if d.get("state") is not None:
                s = d["state"]
                state = vi.VariationalState(*(np.asarray(s[k], float)
                                              for k in ("beta", "gamma", "phi", "psi")))
            st = d.get("subject_thetas")
            return cls(d["kind"], model, state, d.get("config", {}), bool(d["holdout"]),
                       list(d["subject_ids"]), list(d.get("elbo_trace", [])),
                       None if st is None else np.asarray(st, float), d.get("extra", {}),
                       version)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"malformed checkpoint ({exc})") from None


def save_checkpoint(ckpt: Checkpoint, path):
    with open(path, "w") as f:
        json.dump(ckpt.to_dict(), f)


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path) as f:
            d = json.load(f)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from None
    return Checkpoint.from_dict(d)


# ------------------------------------------------------------ visualization

def palette(k: int) -> np.ndarray:
    """``(k, 3)`` RGB rows: the fixed palette, or evenly spaced hues past 12."""
    if k <= len(PALETTE):
        return np.asarray(PALETTE[:k], dtype=float)
    return np.array([[255.0 * c for c in colorsys.hsv_to_rgb(j / k, 0.65, 0.9)]
                     for j in range(k)])


def community_colors(beta):
    """Posterior-mean proportions and the blended RGB colour per subject."""
    beta = np.asarray(beta, float)
    pi_bar = beta / beta.sum(axis=1, keepdims=True)
    return pi_bar, pi_bar @ palette(beta.shape[1])


def _hex(rgb):
    r, g, b = (int(np.clip(np.rint(c), 0, 255)) for c in rgb)
    return f"#{r:02x}{g:02x}{b:02x}"


def _dot_id(s):
    return '"' + str(s).replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_community_colors(state: vi.VariationalState, graph: RelationalGraph, path,
                            subject_ids=None, json_path=None):
    """Write a DOT graph with blended node colours plus a JSON sidecar.

    Returns the JSON payload. The sidecar defaults to ``path`` with a
    ``.json`` suffix.
    """
    n = state.n_subjects
    if graph.n_subjects != n:
        raise ValidationError(f"graph has {graph.n_subjects} subjects, state has {n}")
    ids = list(subject_ids or graph.subject_ids or [str(i) for i in range(n)])
    pi_bar, rgb = community_colors(state.beta)
    lines = ["graph communities {", "  node [style=filled];"]
    for sid, c in zip(ids, rgb):
        lines.append(f"  {_dot_id(sid)} [fillcolor=\"{_hex(c)}\"];")
    iu, ju = np.nonzero(np.triu(graph.adjacency, 1))
    for i, j in zip(iu, ju):
        lines.append(f"  {_dot_id(ids[i])} -- {_dot_id(ids[j])};")
    lines.append("}")
    Path(path).write_text("\n".join(lines) + "\n")
    payload = {
        "palette": palette(state.n_identities).tolist(),
        "subjects": {sid: {"rgb": c.tolist(), "pi_bar": p.tolist()}
                     for sid, c, p in zip(ids, rgb, pi_bar)},
    }
    json_path = Path(path).with_suffix(".json") if json_path is None else json_path
    with open(json_path, "w") as f:
        json.dump(payload, f, indent=1)
    return payload
