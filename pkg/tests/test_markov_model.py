import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trunc_poisson.errors import ConfigError, InvalidParam, ZeroExitRate
from trunc_poisson.markov_model import (CtmcModel, MatrixChain, StateCoder, build_jackson, build_model,
                                        build_slotted_queue, build_two_mm1, embed_ctmc)

ROUTING = [[1 / 3, 1 / 6], [1 / 3, 1 / 2]]


def row_dict(model, x):
    out = {}
    for y, p in model.row(x):
        out[y] = out.get(y, 0.0) + p
    return out


def test_slotted_queue_transition_values(slotted):
    row0 = row_dict(slotted, (0,))
    assert row0[(0,)] == pytest.approx((1 + 0.6 + 0.36) / 3, abs=1e-15)
    assert row0[(0,)] == pytest.approx(0.6533333333333333, abs=1e-15)
    assert row_dict(slotted, (10,))[(12,)] == pytest.approx(0.4 / 3, abs=1e-15)



@settings(max_examples=60, deadline=None)
@given(q=st.floats(0.05, 0.95), x=st.integers(0, 400))
def test_slotted_rows_are_stochastic(q, x):
    model = build_slotted_queue(q)
    row = model.row((x,))
    assert math.fsum(p for _, p in row) == pytest.approx(1.0, abs=1e-12)
    assert all(p > 0 for _, p in row)
    assert max(y[0] for y, _ in row) <= x + 2


def test_slotted_row_arrays_match_rows(slotted):
    for x in (0, 1, 7, 55):
        targets, probs = slotted.row_arrays((x,))
        d = row_dict(slotted, (x,))
        assert sorted(zip(targets[:, 0].tolist(), probs.tolist())) == pytest.approx(
            sorted((y[0], p) for y, p in d.items()))


def test_slotted_closed_form_solves_poisson(slotted):
    g = slotted.closed_form()
    alpha = slotted.average_reward()
    assert alpha == pytest.approx(8 / 3)
    for x in range(0, 60):
        resid = slotted.expect((x,), g) - g((x,)) + x - alpha
        assert abs(resid) < 1e-9 * (1 + x * x)
    assert g((5,)) == 45.0


def test_slotted_rejects_bad_q():
    for q in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(InvalidParam):
            build_slotted_queue(q)


def test_jackson_traffic_and_average():
    net = build_jackson([0.75, 1.0], [4.0, 4.0], ROUTING)
    np.testing.assert_allclose(net.traffic(), [2.55, 2.85], rtol=1e-12)
    rho = np.array([2.55, 2.85]) / 4
    assert net.average_reward() == pytest.approx(float(np.sum(rho / (1 - rho))))
    assert net.closed_form() is None


def test_jackson_rejects_bad_routing():
    unstable = build_jackson([3.0, 1.0], [2.0, 4.0], [[0, 0], [0, 0]])
    assert unstable.average_reward() is None and unstable.closed_form() is None
    with pytest.raises(InvalidParam):
        build_jackson([1.0, 1.0], [4.0, 4.0], [[0.7, 0.5], [0, 0]])
    with pytest.raises(InvalidParam):
        build_jackson([1.0, -1.0], [4.0, 4.0], [[0, 0], [0, 0]])


def test_two_mm1_closed_form_solves_poisson(mm1):
    h = mm1.closed_form()
    delta = mm1.average_reward()
    assert delta == pytest.approx(2 / 3 + 1 / 2)
    for x in [(0, 0), (3, 0), (0, 4), (7, 9)]:
        assert mm1.generator_apply(x, h) + sum(x) - delta == pytest.approx(0.0, abs=1e-10)


def test_embedded_chain_rows_and_rewards(mm1):
    emb = embed_ctmc(mm1)
    row = row_dict(emb, (0, 0))
    assert row == pytest.approx({(1, 0): 2 / 3, (0, 1): 1 / 3})
    assert emb.holding((0, 0)) == 3.0
    assert emb.reward((2, 1)) == pytest.approx(3 / mm1.exit_rate((2, 1)))
    assert emb.unit_reward((2, 1)) == pytest.approx(1 / 11)


def test_embedded_chain_zero_exit_rate():
    class Frozen(CtmcModel):
        dimension = 1

        def rate_row(self, x):
            return []

        def reward(self, x):
            return 0.0

    with pytest.raises(ZeroExitRate):
        embed_ctmc(Frozen()).row((0,))


def test_matrix_chain_validates():
    with pytest.raises(InvalidParam):
        MatrixChain([[0.5, 0.4], [0.5, 0.5]])
    with pytest.raises(InvalidParam):
        MatrixChain([[1.5, -0.5], [0.5, 0.5]])
    m = MatrixChain([[0.5, 0.5], [1.0, 0.0]], [1.0, 2.0])
    assert m.row((1,)) == [((0,), 1.0)]
    assert m.reward((1,)) == 2.0


def test_state_coder_roundtrip():
    coder = StateCoder([3, 4])
    assert coder.size == 12
    for i, x in enumerate(coder.states()):
        assert coder.encode(x) == i
        assert coder.decode(i) == x
    assert not coder.contains((3, 0))


def test_build_model_from_config():
    m = build_model({"model": "two_mm1", "params": {"lambda1": 2, "mu1": 5, "lambda2": 1, "mu2": 3}})
    assert m.name == "two_mm1"
    assert build_model({"model": "slotted_queue", "params": {"q": 0.6}}).q == 0.6
    with pytest.raises(ConfigError):
        build_model({"model": "slotted_queue", "params": {"q": 0.6, "extra": 1}})
    with pytest.raises(ConfigError):
        build_model({"model": "tandem", "params": {}})
