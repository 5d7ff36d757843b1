import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from relhawkes.errors import ValidationError
from relhawkes.evaluation import (
    Candidate,
    SplitPlan,
    baseline_mle_com,
    baseline_mle_sep,
    baseline_mtl,
    hold_out_last,
    make_split_plan,
    multi_split_evaluate,
    predictive_likelihood,
    predictive_log_terms,
    standard_error,
)
from relhawkes.meta_adaptation import AdaptationConfig
from relhawkes.point_process import EventSequence, simulate


def _seq(ts, t_end=None, sid="a"):
    ts = np.asarray(ts, float)
    return EventSequence(ts, float(ts[-1] if t_end is None else t_end), sid)


# ------------------------------------------------------------ predictive density

def test_poisson_next_arrival():
    p = predictive_likelihood([1.0, 0.0, 1.0], [1.0], None, _seq([0.2]), 0.5)
    assert p == pytest.approx(math.exp(-0.3), rel=1e-12)


def test_mixture_collapse():
    theta = [1.3, 0.4, 2.0]
    prefix = _seq([0.1, 0.5, 0.9])
    one = predictive_likelihood([theta], [1.0], None, prefix, 1.4)
    for g in ([0.2, 0.8], [0.5, 0.5], [1.0, 0.0]):
        assert predictive_likelihood([theta, theta], g, None, prefix, 1.4) == pytest.approx(
            one, rel=1e-13)


def test_single_event_against_quadrature():
    mu, delta, omega = 1.0, 0.5, 2.0
    lam = lambda t: mu + delta * omega * math.exp(-omega * t)
    integral = quad(lam, 0.0, 1.0, epsabs=1e-14)[0]
    expected = (1 + math.exp(-2)) * math.exp(-integral)
    assert integral == pytest.approx(1 + 0.5 * (1 - math.exp(-2)), rel=1e-12)
    for exact in (False, True):
        got = predictive_likelihood([mu, delta, omega], [1.0], None, _seq([0.0], 0.0), 1.0,
                                    exact_compensator=exact)
        assert got == pytest.approx(expected, rel=1e-10)


def test_exact_compensator_against_quadrature():
    mu, delta, omega = 0.7, 0.6, 3.0
    ts = np.array([0.1, 0.4, 0.45, 1.0])
    nxt = 1.6
    lam = lambda t: mu + delta * omega * np.exp(-omega * (t - ts)).sum()
    integral = quad(lam, ts[-1], nxt, epsabs=1e-14)[0]
    expected = lam(nxt) * math.exp(-integral)
    got = predictive_likelihood([mu, delta, omega], [1.0], None, _seq(ts), nxt,
                                exact_compensator=True)
    assert got == pytest.approx(expected, rel=1e-10)
    # the default form keeps only the last event's excitation in the exponent
    last_only = lam(nxt) * math.exp(-(mu * (nxt - ts[-1]) + delta * (1 - math.exp(-omega * 0.6))))
    assert predictive_likelihood([mu, delta, omega], [1.0], None, _seq(ts), nxt) == \
        pytest.approx(last_only, rel=1e-12)


def test_adapted_prediction_uses_adaptation():
    prefix = _seq([0.1, 0.2, 0.3, 0.35, 0.4])
    theta = [[1.0, 0.3, 2.0]]
    base = predictive_likelihood(theta, [1.0], None, prefix, 0.6)
    tied = predictive_likelihood(theta, [1.0], AdaptationConfig("maml", 0.0), prefix, 0.6)
    adapted = predictive_likelihood(theta, [1.0], AdaptationConfig("maml", 1e-2), prefix, 0.6)
    assert base == tied and adapted != base


def test_predictive_validation():
    with pytest.raises(ValidationError):
        predictive_log_terms([[1, 0.1, 1]], [[1.0]], None, [EventSequence([], 1.0, "e")], [2.0])
    with pytest.raises(ValidationError, match="not after"):
        predictive_likelihood([1, 0.1, 1], [1.0], None, _seq([0.5]), 0.5)


@settings(max_examples=40)
@given(st.floats(0.05, 5), st.floats(0.0, 0.95), st.floats(0.5, 20), st.floats(1e-3, 3))
def test_density_positive_finite(mu, delta, omega, gap):
    prefix = _seq([0.0, 0.3, 0.31])
    for exact in (False, True):
        p = predictive_likelihood([mu, delta, omega], [1.0], None, prefix, 0.31 + gap, exact)
        assert math.isfinite(p) and p > 0


# ----------------------------------------------------------------- splitting

def _dataset(n=9, seed=0):
    rng = np.random.default_rng(seed)
    seqs = [simulate((3.0, 0.3, 4.0), 5.0, rng, f"s{i}") for i in range(n)]
    seqs.append(EventSequence([2.0], 5.0, "lonely"))
    return seqs


def test_hold_out_last():
    seqs = _dataset()
    train, idx, held = hold_out_last(seqs)
    assert len(train) == len(seqs) and seqs[idx[-1]].subject_id != "lonely"
    for j, i in enumerate(idx):
        assert held[j] == seqs[i].timestamps[-1]
        assert np.array_equal(train[i].timestamps, seqs[i].timestamps[:-1])
        assert train[i].t_end == seqs[i].timestamps[-2]
    assert train[-1] is seqs[-1]


def test_split_exhaustive_and_reproducible():
    seqs = _dataset()
    plan = make_split_plan(seqs, n_repeats=30, seed=3)
    assert plan.n_excluded == 1 and plan.excluded_ids == ["lonely"]
    n_val = plan.validation.sum(axis=1)
    n_test = (~plan.validation).sum(axis=1)
    assert np.all(n_val + n_test == plan.n_items) and np.all(np.abs(n_val - n_test) <= 1)
    again = make_split_plan(seqs, n_repeats=30, seed=3)
    assert np.array_equal(plan.validation, again.validation)
    assert not np.array_equal(plan.validation, make_split_plan(seqs, 30, 4).validation)
    with pytest.raises(ValidationError):
        make_split_plan(seqs, n_repeats=0)


def test_standard_error():
    assert standard_error([1.0, 2.0, 4.0]) == pytest.approx(
        math.sqrt(((1 - 7 / 3) ** 2 + (2 - 7 / 3) ** 2 + (4 - 7 / 3) ** 2) / 2) / math.sqrt(3))
    assert standard_error([5.0]) == 0.0


def _plan_and_candidates():
    seqs = _dataset()
    train = hold_out_last(seqs)[0]
    com = baseline_mle_com(train)
    sep = baseline_mle_sep(train)
    cands = [Candidate.common("com", com, len(seqs), holdout=True),
             Candidate.per_subject("sep", sep.thetas, holdout=True)]
    return seqs, cands


def test_report_by_hand_three_repeats():
    seqs, cands = _plan_and_candidates()
    plan = make_split_plan(seqs, n_repeats=3, seed=1)
    rep = multi_split_evaluate(cands, seqs, plan)
    train = hold_out_last(seqs)[0]
    terms = np.vstack([c.log_terms(train, plan) for c in cands])
    test_means = []
    for r in range(3):
        v = plan.validation[r]
        pick = int(np.argmax([terms[c, v].mean() for c in range(2)]))
        test_means.append(terms[pick, ~v].mean())
    assert rep.test_ll == pytest.approx(test_means, rel=1e-13)
    assert rep.mean == pytest.approx(np.mean(test_means), rel=1e-13)
    m = np.mean(test_means)
    se = math.sqrt(sum((x - m) ** 2 for x in test_means) / 2 / 3)
    assert rep.stderr == pytest.approx(se, rel=1e-12)


def test_single_and_duplicate_candidates(tmp_path):
    seqs, cands = _plan_and_candidates()
    plan = make_split_plan(seqs, 30, 0)
    single = multi_split_evaluate(cands[:1], seqs, plan)
    train = hold_out_last(seqs)[0]
    terms = cands[0].log_terms(train, plan)
    assert single.mean == pytest.approx(
        np.mean([terms[~plan.validation[r]].mean() for r in range(30)]), rel=1e-13)
    dup = multi_split_evaluate([cands[0], cands[0]], seqs, plan)
    assert dup.mean == single.mean and np.all(dup.chosen == 0)
    again = multi_split_evaluate(cands, seqs, make_split_plan(seqs, 30, 0))
    first = multi_split_evaluate(cands, seqs, plan)
    assert np.array_equal(first.test_ll, again.test_ll)
    first.write_json(tmp_path / "r.json")
    first.write_csv(tmp_path / "r.csv")
    d = json.loads((tmp_path / "r.json").read_text())
    assert d["mean"] == first.mean
    rows = (tmp_path / "r.csv").read_text().strip().splitlines()
    assert rows[0] == "repeat,chosen_model,test_ll" and len(rows) == 31


def test_leakage_and_mismatch_rejected():
    seqs, cands = _plan_and_candidates()
    plan = make_split_plan(seqs, 5, 0)
    leaky = Candidate("leaky", cands[0].thetas, cands[0].gamma, None, holdout=False)
    with pytest.raises(ValidationError, match="held out"):
        multi_split_evaluate([cands[0], leaky], seqs, plan)
    short = Candidate.common("c", [1, 0.1, 1], len(seqs) - 1, holdout=True)
    with pytest.raises(ValidationError):
        multi_split_evaluate([short], seqs, plan)
    with pytest.raises(ValidationError, match="split plan"):
        multi_split_evaluate(cands, seqs, make_split_plan(_dataset(seed=1), 5, 0))
    with pytest.raises(ValidationError):
        multi_split_evaluate([], seqs, plan)


# ---------------------------------------------------------------- baselines

def test_mle_sep_regular_events_give_poisson_rate():
    # evenly spaced events push the excitation to its floor
    seqs = [_seq(np.arange(1, m + 1) * 0.5, m * 0.5 + 0.25, f"r{m}") for m in (10, 20, 40)]
    fit = baseline_mle_sep(seqs, nu=0.0)
    for s, th in zip(seqs, fit.thetas):
        assert th[1] < 1e-3
        assert th[0] == pytest.approx(len(s) / s.t_end, abs=1e-3)
    com = baseline_mle_com(seqs, nu=0.0)
    pooled = sum(len(s) for s in seqs) / sum(s.t_end for s in seqs)
    assert com.mu == pytest.approx(pooled, abs=1e-3)


def test_mle_compensator_matches_count():
    # at an interior maximum of the unregularized likelihood the compensator equals M
    s = simulate((2.0, 0.5, 3.0), 30.0, np.random.default_rng(1), "x")
    mu, delta, omega = baseline_mle_sep([s], nu=0.0).thetas[0]
    comp = mu * s.t_end + delta * np.sum(1 - np.exp(-omega * (s.t_end - s.timestamps)))
    assert comp == pytest.approx(len(s), rel=1e-4)


def test_mle_single_event_is_finite():
    fit = baseline_mle_sep([_seq([0.3], 1.0)], nu=1e-2)
    assert np.all(np.isfinite(fit.thetas)) and np.all(fit.thetas > 0)


def test_mle_identical_and_permutation():
    rng = np.random.default_rng(2)
    s = simulate((2.0, 0.4, 3.0), 10.0, rng, "x")
    seqs = [EventSequence(s.timestamps, s.t_end, f"c{i}") for i in range(3)]
    sep = baseline_mle_sep(seqs).thetas
    assert np.array_equal(sep[0], sep[1]) and np.array_equal(sep[1], sep[2])
    assert np.allclose(baseline_mle_com(seqs).as_array(), sep[0], rtol=1e-4)
    mixed = [simulate((2.0, 0.4, 3.0), 10.0, rng, f"m{i}") for i in range(4)]
    a = baseline_mle_com(mixed).as_array()
    b = baseline_mle_com(mixed[::-1]).as_array()
    assert np.allclose(a, b, rtol=1e-6)


@pytest.fixture(scope="module")
def mtl_data():
    rng = np.random.default_rng(5)
    return [simulate(th, 15.0, rng, f"t{i}")
            for i, th in enumerate([(1.0, 0.3, 2.0), (3.0, 0.5, 4.0), (2.0, 0.2, 6.0)])]


def test_mtl_strong_coupling_pools(mtl_data):
    rho0, rho, _ = baseline_mtl(mtl_data, nu_mtl=1e3)
    sep = baseline_mle_sep(mtl_data).thetas
    assert np.linalg.norm(rho - rho0, axis=1).max() < 1e-2
    assert np.linalg.norm(sep - sep.mean(axis=0), axis=1).max() > 1e-2


def test_mtl_weak_coupling_recovers_sep(mtl_data):
    _, rho, _ = baseline_mtl(mtl_data, nu_mtl=1e-9)
    sep = baseline_mle_sep(mtl_data).thetas
    assert np.allclose(rho, sep, rtol=1e-3)


def test_mtl_identical_sequences(mtl_data):
    s = mtl_data[0]
    seqs = [EventSequence(s.timestamps, s.t_end, f"d{i}") for i in range(3)]
    _, rho, _ = baseline_mtl(seqs, nu_mtl=0.1)
    assert np.allclose(rho, rho[0], rtol=1e-6)
    with pytest.raises(ValidationError):
        baseline_mtl(seqs, nu_mtl=0.0)
