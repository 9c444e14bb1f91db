import numpy as np
import pytest

from trunc_poisson.certificate import LyapunovCertificate
from trunc_poisson.errors import TruncationTooSmall
from trunc_poisson.hitting_bounds import (GATE_MARGIN, compute_G, compute_xi, hitting_bounds, lower_kappa,
                                          taboo, upper_kappa)
from trunc_poisson.oracle import exact_hitting_reward, from_model
from trunc_poisson.markov_model import embed_ctmc
from trunc_poisson.sets import box
from trunc_poisson.truncation import assemble, make_partition


def interval(a, b):
    return [(i,) for i in range(a, b + 1)]


@pytest.fixture(scope="module")
def slotted_exact(slotted):
    chain = from_model(slotted, [2001], (0,))
    return {
        "r": exact_hitting_reward(chain, chain.reward),
        "e": exact_hitting_reward(chain, np.ones(chain.n)),
    }


@pytest.mark.parametrize("key", ["r", "e"])
def test_slotted_sandwich(slotted, slotted_certs, slotted_exact, key):
    cert = dict(zip("re", slotted_certs))[key]
    part = make_partition((0,), cert.K, interval(0, 80))
    res = hitting_bounds(slotted, cert, part)
    exact = slotted_exact[key][[x[0] for x in res.states]]
    assert np.all(res.width >= 0)
    assert np.all(res.lower <= exact * (1 + 1e-12))
    assert np.all(exact <= res.upper * (1 + 1e-12))
    assert res.gate < 1e-6


def test_slotted_frozen_values(slotted, slotted_certs, slotted_exact):
    # E_1 sum_{j < tau(0)} X_j and E_1 tau(0), from the oracle box
    assert slotted_exact["r"][1] == pytest.approx(55 / 3, rel=1e-12)
    assert slotted_exact["e"][1] == pytest.approx(5.0, rel=1e-12)
    assert slotted_exact["e"][5] == pytest.approx(13.0, rel=1e-12)
    part = make_partition((0,), slotted_certs[0].K, interval(0, 120))
    res = hitting_bounds(slotted, slotted_certs[0], part)
    lo, up = res.at((1,))
    assert lo <= 55 / 3 + 1e-9 and up >= 55 / 3 - 1e-9
    assert up - lo < 1e-8


def test_partition_identity(slotted, slotted_certs):
    part = make_partition((0,), slotted_certs[0].K, interval(0, 40))
    sys = assemble(slotted, part)
    G, to_z = compute_G(sys)
    xi = compute_xi(sys)
    np.testing.assert_allclose(to_z + G.sum(axis=1) + xi[: sys.nK], 1.0, atol=1e-10)
    assert taboo(sys).partition_error <= 1e-10
    assert np.all(G >= -1e-15) and np.all(xi >= 0)


def test_upper_kappa_and_rigorous_lower(slotted, slotted_certs):
    part = make_partition((0,), slotted_certs[0].K, interval(0, 60))
    sys = assemble(slotted, part)
    q = np.array([x[0] for x in part.solve_states], dtype=float)
    direct = lower_kappa(sys, q)
    rig = lower_kappa(sys, q, rigorous=True)
    np.testing.assert_allclose(rig, direct, rtol=1e-10)
    up = upper_kappa(sys, q, sys.tails(slotted_certs[0].v)[0])
    assert np.all(up >= direct)


def test_gate_raises_and_keeps_lower(age):
    model, cert = age
    part = make_partition((0,), cert.K, interval(0, 5))
    with pytest.raises(TruncationTooSmall) as info:
        hitting_bounds(model, cert, part)
    exc = info.value
    assert exc.gate >= 1.0 - GATE_MARGIN
    assert exc.exit_code == 4
    low = exc.lower.lower
    exact = np.array([model.hitting_reward(x[0]) for x in exc.lower.states])
    assert np.all(low <= exact)
    only = hitting_bounds(model, cert, part, allow_lower_only=True)
    assert only.width is None and only.upper is None


def test_gate_values_for_age_chain(age):
    model, cert = age
    for top, gate in [(6, 0.7), (7, 0.49), (10, 0.7 ** 5)]:
        res = hitting_bounds(model, cert, make_partition((0,), cert.K, interval(0, top)))
        assert res.gate == pytest.approx(gate, rel=1e-12)
        exact = np.array([model.hitting_reward(x[0]) for x in res.states])
        assert np.all(res.lower <= exact + 1e-12) and np.all(exact <= res.upper + 1e-12)


def test_tail_hook_only_loosens_upper(slotted, slotted_certs):
    cert = slotted_certs[0]
    part = make_partition((0,), cert.K, interval(0, 40))
    sys = assemble(slotted, part)
    exact = hitting_bounds(slotted, cert, part, system=sys)
    loose = hitting_bounds(slotted, cert, part, system=sys,
                           tail_hook=lambda x: 3.0 * cert.v((x[0] + 2,)) if x[0] >= 39 else 0.0)
    np.testing.assert_array_equal(loose.lower, exact.lower)
    assert np.all(loose.upper >= exact.upper)


def test_ctmc_hitting_bounds(mm1, mm1_certs):
    cert = mm1_certs[1]
    part = make_partition((0, 0), cert.K, box([25, 25]))
    res = hitting_bounds(mm1, cert, part)
    chain = from_model(embed_ctmc(mm1), [120, 120], (0, 0))
    exact = exact_hitting_reward(chain, chain.weight)
    pos = {x: i for i, x in enumerate(chain.states)}
    ex = exact[[pos[x] for x in res.states]]
    assert np.all(res.lower <= ex * (1 + 1e-10)) and np.all(ex <= res.upper * (1 + 1e-10))
    # expected time to empty from (1, 0) is 1/(mu1 - lambda1) plus the time the other queue adds
    assert res.at((1, 0))[0] > 1 / 3


def test_cert_K_must_be_inside_partition(slotted, slotted_certs):
    part = make_partition((0,), interval(0, 3), interval(0, 40))
    with pytest.raises(ValueError):
        hitting_bounds(slotted, slotted_certs[0], part)


def test_negative_q_rejected(slotted):
    cert = LyapunovCertificate(lambda x: 0.0, lambda x: -1.0, {(0,)}, 0.0)
    with pytest.raises(ValueError):
        hitting_bounds(slotted, cert, make_partition((0,), [(0,)], interval(0, 5)))
