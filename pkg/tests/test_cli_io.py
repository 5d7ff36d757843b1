import json

import numpy as np
import pytest

from relhawkes import cli_io
from relhawkes.cli import main
from relhawkes.errors import ValidationError
from relhawkes.relational_vi import ModelParams, RelationalGraph, VariationalState
from relhawkes.trainer import TrainConfig, initialize


# ---------------------------------------------------------------- sequences

def test_read_sequences(tmp_path):
    p = tmp_path / "s.jsonl"
    p.write_text('{"subject_id":"a","timestamps":[0.1,0.4],"t_end":1.0}\n\n'
                 '{"subject_id":"b","timestamps":[],"t_end":2.0}\n')
    a, b = cli_io.read_sequences(p)
    assert len(a) == 2 and a.subject_id == "a" and a.t_end == 1.0
    assert len(b) == 0 and b.t_end == 2.0
    out = tmp_path / "o.jsonl"
    cli_io.write_sequences([a, b], out)
    again = cli_io.read_sequences(out)
    assert np.array_equal(again[0].timestamps, a.timestamps)


@pytest.mark.parametrize("line,match", [
    ('{"subject_id":"a","timestamps":[0.4,0.1],"t_end":1.0}', "subject a"),
    ('{"subject_id":"a","timestamps":[0.1]', ":2:"),
    ('{"subject_id":"a","t_end":1.0}', ":2:"),
    ('{"subject_id":"z","timestamps":[0.1],"t_end":1.0}', "duplicate"),
])
def test_read_sequences_errors(tmp_path, line, match):
    p = tmp_path / "s.jsonl"
    p.write_text('{"subject_id":"z","timestamps":[],"t_end":1.0}\n' + line + "\n")
    with pytest.raises(ValidationError, match=match):
        cli_io.read_sequences(p)


# -------------------------------------------------------------------- graph

def test_read_graph(tmp_path):
    p = tmp_path / "g.csv"
    p.write_text("# comment\na,b\n\nb,c\na,b\n")
    g = cli_io.read_graph(p, ["a", "b", "c"])
    assert g.adjacency[0, 1] == g.adjacency[1, 0] == 1 and g.n_edges == 2
    once = tmp_path / "once.csv"
    once.write_text("a,b\nb,c\n")
    assert np.array_equal(cli_io.read_graph(once, ["a", "b", "c"]).adjacency, g.adjacency)
    out = tmp_path / "w.csv"
    cli_io.write_graph(g, out)
    assert np.array_equal(cli_io.read_graph(out, ["a", "b", "c"]).adjacency, g.adjacency)


@pytest.mark.parametrize("body,match", [
    ("a,b\na,a\n", ":2: self-loop"),
    ("a,b\nb,q\n", ":2: unknown subject 'q'"),
    ("a,b,c\n", ":1: expected two"),
])
def test_read_graph_errors(tmp_path, body, match):
    p = tmp_path / "g.csv"
    p.write_text(body)
    with pytest.raises(ValidationError, match=match):
        cli_io.read_graph(p, ["a", "b", "c"])


# -------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    n, k = 5, 3
    beta = rng.gamma(2.0, size=(n, k))
    gamma = rng.dirichlet(np.ones(k), size=n)
    phi = rng.dirichlet(np.ones(k), size=(n, n))
    psi = rng.dirichlet(np.ones(k), size=(n, n))
    model = ModelParams(rng.random((k, 3)) + [0, 0, 1], rng.random((k, k)), np.ones(k) * 0.3)
    ck = cli_io.Checkpoint("meta-em", model, VariationalState(beta, gamma, phi, psi),
                           TrainConfig(K=k).to_dict(), True, [f"s{i}" for i in range(n)],
                           [-1.0 / 3, 2.0 ** 0.5], None, {"note": 1})
    p = tmp_path / "c.json"
    cli_io.save_checkpoint(ck, p)
    back = cli_io.load_checkpoint(p)
    for a, b in [(back.model.thetas, model.thetas), (back.model.B, model.B),
                 (back.state.beta, beta), (back.state.phi, phi), (back.state.psi, psi)]:
        assert np.array_equal(a, b)
    assert back.elbo_trace == ck.elbo_trace and back.config == ck.config
    assert back.holdout and back.subject_ids == ck.subject_ids


def test_checkpoint_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ValidationError):
        cli_io.load_checkpoint(p)
    p.write_text(json.dumps({"format_version": 99}))
    with pytest.raises(ValidationError, match="format_version"):
        cli_io.load_checkpoint(p)


# ------------------------------------------------------------------ colours

def test_palette_colors():
    k = 4
    beta = np.full((3, k), 1e-300)
    beta[0, 2] = 1.0
    beta[1] = 2.5
    beta[2] = [1, 2, 3, 4]
    pi_bar, rgb = cli_io.community_colors(beta)
    pal = np.asarray(cli_io.PALETTE[:k], float)
    assert np.array_equal(rgb[0], pal[2])
    assert np.allclose(rgb[1], pal.mean(axis=0), rtol=0, atol=1e-12)
    assert np.allclose(pi_bar.sum(axis=1), 1.0, rtol=0, atol=1e-12)


def test_palette_fallback():
    p = cli_io.palette(15)
    assert p.shape == (15, 3) and np.all((p >= 0) & (p <= 255))
    assert np.array_equal(p, cli_io.palette(15))
    assert len({tuple(r) for r in p}) == 15
    assert np.array_equal(cli_io.palette(12), np.asarray(cli_io.PALETTE, float))


def test_export_community_colors(tmp_path):
    beta = np.array([[5.0, 1e-300], [1.0, 1.0], [1e-300, 2.0]])
    n, k = beta.shape
    state = VariationalState(beta, np.full((n, k), 0.5), np.full((n, n, k), 0.5),
                             np.full((n, n, k), 0.5))
    Y = np.zeros((n, n))
    Y[0, 1] = Y[1, 0] = 1
    ids = ["a", 'b"q', "c"]
    dot = tmp_path / "g.dot"
    payload = cli_io.export_community_colors(state, RelationalGraph(n, Y, ids), dot, ids)
    text = dot.read_text()
    assert text.startswith("graph communities {") and text.rstrip().endswith("}")
    assert '"a" [fillcolor="#1f77b4"];' in text
    assert '"c" [fillcolor="#ff7f0e"];' in text
    assert '"a" -- "b\\"q";' in text
    side = json.loads(dot.with_suffix(".json").read_text())
    assert side == json.loads(json.dumps(payload))
    for rec in side["subjects"].values():
        assert abs(sum(rec["pi_bar"]) - 1) <= 1e-12


# --------------------------------------------------------------------- CLI

@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--nodes", "12", "--communities", "2", "--seed", "42",
                 "--out", str(d)]) == 0
    return d


def test_simulate_is_byte_identical(sim_dir, tmp_path):
    assert main(["simulate", "--nodes", "12", "--communities", "2", "--seed", "42",
                 "--out", str(tmp_path)]) == 0
    for name in ("sequences.jsonl", "edges.csv", "truth.json"):
        assert (sim_dir / name).read_bytes() == (tmp_path / name).read_bytes()


def test_fit_zero_sweeps_is_initializer(sim_dir, tmp_path):
    out = tmp_path / "m.json"
    assert main(["fit", "--sequences", str(sim_dir / "sequences.jsonl"),
                 "--graph", str(sim_dir / "edges.csv"), "--k", "2", "--max-sweeps", "0",
                 "--seed", "3", "--out", str(out)]) == 0
    ck = cli_io.load_checkpoint(out)
    from relhawkes.evaluation import hold_out_last
    seqs = cli_io.read_sequences(sim_dir / "sequences.jsonl")
    graph = cli_io.read_graph(sim_dir / "edges.csv", [s.subject_id for s in seqs])
    model, state = initialize(hold_out_last(seqs)[0], graph, TrainConfig(K=2, rng_seed=3))
    assert np.array_equal(ck.model.thetas, model.thetas)
    assert np.array_equal(ck.state.beta, state.beta)
    assert ck.holdout


def test_evaluate_single_model(sim_dir, tmp_path):
    seqs = str(sim_dir / "sequences.jsonl")
    model = tmp_path / "com.json"
    assert main(["fit-baseline", "--method", "mle-com", "--sequences", seqs,
                 "--out", str(model)]) == 0
    rep = tmp_path / "r.json"
    assert main(["evaluate", "--models", str(model), "--sequences", seqs, "--repeats", "5",
                 "--out", str(rep)]) == 0
    d = json.loads(rep.read_text())
    assert d["chosen"] == [0] * 5 and len(d["test_ll"]) == 5
    assert rep.with_suffix(".csv").exists()


def test_evaluate_refuses_full_sequence_models(sim_dir, tmp_path, capsys):
    seqs = str(sim_dir / "sequences.jsonl")
    model = tmp_path / "full.json"
    assert main(["fit-baseline", "--method", "mle-com", "--no-holdout", "--sequences", seqs,
                 "--out", str(model)]) == 0
    assert main(["evaluate", "--models", str(model), "--sequences", seqs,
                 "--out", str(tmp_path / "r.json")]) == 2
    assert "refusing" in capsys.readouterr().err


def test_exit_codes(sim_dir, tmp_path):
    assert main(["simulate", "--bogus"]) == 2
    assert main(["frobnicate"]) == 2
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"subject_id":"a","timestamps":[0.4,0.1],"t_end":1.0}\n')
    assert main(["fit-baseline", "--method", "mle-com", "--sequences", str(bad),
                 "--out", str(tmp_path / "x.json")]) == 2
    assert main(["fit", "--sequences", str(sim_dir / "sequences.jsonl"),
                 "--out", str(tmp_path / "x.json")]) == 2
    # a model whose intensity overflows makes evaluation fail numerically
    seqs = str(sim_dir / "sequences.jsonl")
    ids = [s.subject_id for s in cli_io.read_sequences(seqs)]
    ck = cli_io.Checkpoint("mle-com", ModelParams(np.array([[1e308, 1e308, 1e308]]),
                                                  np.full((1, 1), 0.5), np.ones(1)),
                           None, {}, True, ids)
    cli_io.save_checkpoint(ck, tmp_path / "huge.json")
    assert main(["evaluate", "--models", str(tmp_path / "huge.json"), "--sequences", seqs,
                 "--repeats", "2", "--out", str(tmp_path / "r.json")]) == 3


def test_visualize(sim_dir, tmp_path):
    seqs = str(sim_dir / "sequences.jsonl")
    model = tmp_path / "m.json"
    assert main(["fit", "--sequences", seqs, "--graph", str(sim_dir / "edges.csv"),
                 "--k", "2", "--max-sweeps", "3", "--out", str(model)]) == 0
    dot = tmp_path / "g.dot"
    assert main(["visualize", "--model", str(model), "--graph", str(sim_dir / "edges.csv"),
                 "--out", str(dot)]) == 0
    assert dot.read_text().startswith("graph communities {")
    base = tmp_path / "b.json"
    main(["fit-baseline", "--method", "mle-sep", "--sequences", seqs, "--out", str(base)])
    assert main(["visualize", "--model", str(base), "--graph", str(sim_dir / "edges.csv"),
                 "--out", str(dot)]) == 2
