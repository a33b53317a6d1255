import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cogc.channel import NetworkModel
from cogc.errors import DivergenceError, InvalidParamsError, RetryExhaustedError
from cogc.gc_code import CodeParams
from cogc.training import (
    ModelSpec,
    QuadraticModel,
    SoftmaxModel,
    Strategy,
    TrainConfig,
    d2_start_points,
    evaluate,
    generate_heterogeneous_data,
    local_sgd,
    train,
)


def quad(M=4, D=3, skew=1.0, seed=7):
    return QuadraticModel(generate_heterogeneous_data(M, D, skew, seed))


def softmax(M=4, skew=0.5, **kw):
    spec = ModelSpec(family="softmax", D=3, skew=skew, **kw)
    return SoftmaxModel(generate_heterogeneous_data(M, 3, skew, 1, spec))


def test_quadratic_data():
    m = quad(skew=0.0)
    np.testing.assert_allclose(m.data.centers, 0)
    assert evaluate(m, m.optimum()).grad_norm <= 1e-12
    m = quad(M=4, skew=1.0, seed=7)
    np.testing.assert_allclose(m.optimum(), m.data.centers.mean(axis=0), atol=1e-12)
    assert evaluate(m, m.data.centers.mean(axis=0)).grad_norm <= 1e-12
    with pytest.raises(InvalidParamsError):
        generate_heterogeneous_data(4, 3, -1.0, 0)


def test_softmax_labels():
    spread = softmax(M=6, skew=np.inf)
    for c in spread.data.clients:
        props = np.bincount(c.y, minlength=3) / len(c.y)
        assert np.all(props > 0.15)
    one = softmax(M=3, skew=1.0, one_class_per_client=True)
    assert [set(c.y) for c in one.data.clients] == [{0}, {1}, {2}]
    assert evaluate(one, np.zeros(one.dim)).accuracy == pytest.approx(1 / 3)


def test_local_sgd_closed_forms():
    m = quad()
    g0 = np.array([1.0, -2.0, 0.5])
    c = m.data.centers[1]
    np.testing.assert_allclose(local_sgd(m, 1, g0, 1, 0.1), -0.1 * (g0 - c), atol=1e-12)
    np.testing.assert_allclose(local_sgd(m, 1, g0, 3, 0.2), ((0.8) ** 3 - 1) * (g0 - c), atol=1e-12)
    np.testing.assert_array_equal(local_sgd(m, 1, g0, 4, 0.0), 0)
    with pytest.raises(DivergenceError):
        local_sgd(m, 0, np.full(3, 1e300), 50, 1e10)
    with pytest.raises(InvalidParamsError):
        local_sgd(m, 0, g0, 0, 0.1)


def test_minibatch_is_reproducible():
    m = quad()
    a = local_sgd(m, 0, np.zeros(3), 5, 0.1, batch=4, rng=np.random.default_rng(3))
    b = local_sgd(m, 0, np.zeros(3), 5, 0.1, batch=4, rng=np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, local_sgd(m, 0, np.zeros(3), 5, 0.1))


def _fd_grad(model, g):
    eps = 1e-6
    out = np.zeros_like(g)
    for i in range(g.size):
        e = np.zeros_like(g)
        e[i] = eps
        out[i] = (evaluate(model, g + e).loss - evaluate(model, g - e).loss) / (2 * eps)
    return out


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    for model in (quad(), softmax()):
        g = rng.standard_normal(model.dim)
        analytic = np.mean([model.client_grad(g, m) for m in range(model.M)], axis=0)
        fd = _fd_grad(model, g)
        assert np.linalg.norm(analytic - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-3)
        assert evaluate(model, g).grad_norm == pytest.approx(np.linalg.norm(analytic))


def _cfg(strategy, **kw):
    base = dict(M=6, I=1, T=60, eta=0.2, strategy=strategy, model=ModelSpec(D=3))
    base.update(kw)
    return TrainConfig(**base)


def test_config_validation():
    with pytest.raises(InvalidParamsError):
        _cfg("IdealFL", eta=0)
    with pytest.raises(ValueError):
        _cfg("Nope")
    with pytest.raises(InvalidParamsError):
        train(_cfg("CoGC_D1"), NetworkModel.uniform(6, 0, 0))
    with pytest.raises(InvalidParamsError):
        train(_cfg("IdealFL"), NetworkModel.uniform(5, 0, 0))


def test_ideal_fl_converges_to_mean():
    net = NetworkModel.uniform(6, 0, 0)
    tr = train(_cfg("IdealFL", T=200), net)
    assert tr.final.grad_norm <= 1e-6
    assert tr.final.tx_cumulative == 6 * 200
    assert len(tr.records) == 201


def test_design_one_matches_ideal():
    net = NetworkModel.uniform(6, 0.3, 0.2)
    ideal = train(_cfg("IdealFL"), net)
    d1 = train(_cfg("CoGC_D1"), net, CodeParams(6, 2, 3))
    np.testing.assert_allclose(d1.final_params, ideal.final_params, atol=1e-8)
    for a, b in zip(ideal.records, d1.records):
        assert abs(a.loss - b.loss) <= 1e-8
    assert any(r.retries > 1 for r in d1.records)
    tx_per_attempt_max = 2 * 6 + 6
    assert d1.final.tx_cumulative <= tx_per_attempt_max * sum(r.retries for r in d1.records)


def test_design_one_retry_cap():
    net = NetworkModel.uniform(6, 0.0, 1.0)
    with pytest.raises(RetryExhaustedError) as info:
        train(_cfg("CoGC_D1", retry_cap=5), net, CodeParams(6, 2, 0))
    assert info.value.trace is not None
    assert len(info.value.trace.records) == 1


def test_intermittent_bias():
    M = 6
    net = NetworkModel(np.zeros((M, M)), [0.9] + [0.0] * (M - 1))
    tr = train(_cfg("IntermittentFL", T=300), net)
    model = QuadraticModel(generate_heterogeneous_data(M, 3, 1.0, 0, ModelSpec(D=3)))
    assert np.linalg.norm(tr.final_params - model.optimum()) > 1e-3
    # surrogate stationary point: client 1 weighted by its participation rate
    c = model.data.centers
    # client 1 gets weight 1/M when it arrives and nothing otherwise
    w1 = 0.1 / M
    w_other = 0.1 / M + 0.9 / (M - 1)
    weights = np.array([w1] + [w_other] * (M - 1))
    target = weights @ c / weights.sum()
    assert np.linalg.norm(tr.final_params - target) < np.linalg.norm(tr.final_params - model.optimum())


def test_intermittent_skips_empty_rounds():
    tr = train(_cfg("IntermittentFL", T=5), NetworkModel.uniform(6, 0, 1.0))
    assert all(r.outcome == "Failure" and r.K4_size == 0 for r in tr.records[1:])
    np.testing.assert_array_equal(tr.final_params, 0)


def test_design_two_start_points():
    g = np.array([1.0, 2.0])
    local = np.array([[0.0, 0.0], [3.0, 3.0]])
    np.testing.assert_array_equal(d2_start_points(g, local, True), [g, g])
    np.testing.assert_array_equal(d2_start_points(g, local, False), local)

    net = NetworkModel.uniform(6, 0.2, 0.15)
    tr = train(_cfg("CoGC_D2", T=30, record_starts=True), net, CodeParams(6, 2, 1))
    outcomes = [r.outcome for r in tr.records[1:]]
    assert "Failure" in outcomes and "FullViaGC" in outcomes[:-1]
    # rebuild local models from the recorded starts
    model = QuadraticModel(generate_heterogeneous_data(6, 3, 1.0, 0, ModelSpec(D=3)))
    for r in range(1, 30):
        starts = tr.starts[r - 1]
        local = np.array([starts[m] + local_sgd(model, m, starts[m], 1, 0.2) for m in range(6)])
        if outcomes[r - 1] == "Failure":
            np.testing.assert_allclose(tr.starts[r], local, atol=1e-12)
        else:
            assert np.allclose(tr.starts[r], tr.starts[r][0])


def test_design_two_final_recovery_flag():
    net = NetworkModel.uniform(6, 0.0, 1.0)
    tr = train(_cfg("CoGC_D2", T=3, final_cap=4), net, CodeParams(6, 2, 0))
    assert not tr.final_recovered
    assert tr.final.outcome == "Failure" and tr.final.retries == 5
    ok = train(_cfg("CoGC_D2", T=3), NetworkModel.uniform(6, 0.1, 0.1), CodeParams(6, 2, 0))
    assert ok.final_recovered and ok.final.outcome == "FullViaGC"


def test_gcplus_runs_and_counts():
    net = NetworkModel.uniform(6, 0.5, 0.4)
    tr = train(_cfg("GCPlus", T=40, t_r=2), net, CodeParams(6, 3, 0))
    assert tr.final.loss < tr.records[0].loss
    for r in tr.records[1:]:
        assert r.K4_size >= 1 and r.retries % 2 == 0
    assert tr.final.tx_cumulative == sum(r.retries for r in tr.records[1:]) * (3 * 6 + 6)


def test_gcplus_unbiased_partial_aggregation():
    # fixed local updates: the conditional mean of the applied update is the true mean
    from cogc.channel import RoundConnectivity, RoundKey, draw_round
    from cogc.gc_code import generate_code
    from cogc.protocol import gc_plus_decode, gradient_share, stack_transcripts

    M, s = 6, 4
    net = NetworkModel.uniform(M, 0.6, 0.6)
    u = np.random.default_rng(0).standard_normal((M, 2))
    total, n = np.zeros(2), 0
    for trial in range(10_000):
        t = gradient_share(generate_code(CodeParams(M, s, trial)), draw_round(net, RoundKey(1, trial)), u)
        out = gc_plus_decode(stack_transcripts([t]))
        if out.success:
            total += out.global_update
            n += 1
    assert n > 2000
    mean = total / n
    # per-coordinate spread of a uniformly drawn member is bounded by the data spread
    se = np.std(u, axis=0) / np.sqrt(n)
    assert np.all(np.abs(mean - u.mean(axis=0)) <= 4 * se)


def test_trace_files(tmp_path):
    tr = train(_cfg("IdealFL", T=3), NetworkModel.uniform(6, 0, 0))
    path = tr.write(tmp_path / "t.csv")
    rows = list(csv.DictReader(io.StringIO(path.read_text())))
    assert list(rows[0]) == ["round", "strategy", "loss", "grad_norm", "outcome", "K4_size", "retries", "tx_cumulative", "accuracy"]
    assert len(rows) == 4 and rows[-1]["tx_cumulative"] == "18"
    side = json.loads(path.with_suffix(".json").read_text())
    assert side["config"]["strategy"] == "IdealFL"
    again = train(_cfg("IdealFL", T=3), NetworkModel.uniform(6, 0, 0)).to_csv()
    assert again == path.read_text()


def test_softmax_training_improves():
    cfg = TrainConfig(M=4, I=2, T=30, eta=0.3, strategy=Strategy.IDEAL_FL,
                      model=ModelSpec(family="softmax", D=3, skew=1.0), batch=8)
    tr = train(cfg, NetworkModel.uniform(4, 0, 0))
    assert tr.final.loss < tr.records[0].loss
    assert tr.final.accuracy > 0.5
