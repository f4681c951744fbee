from __future__ import annotations


import numpy as np
import pytest

from relaynet import rng as streams
from relaynet.channel import (CompressionPolicy, GainModel, InputPolicy, NetworkTopology, assemble_covariance,
                              covariance_from_inputs, input_covariance, sample_gains)
from relaynet.rates import (SCS, FIXED_MODE, StrategyAssignment, aligned_inputs, cut_values, dest_max_min,
                            df_constraint, i_cmnnc, mask_members, policy_inputs, q_dest, q_relay, rate_cutset,
                            rate_dest_term, rate_relay_term, relay_max_min, submasks, upsilon_member)

from oracles import df_single_relay, mi, nnc_rate, two_relay_covariance


@pytest.fixture(scope="module")
def topo():
    return NetworkTopology.two_relay()


def draws(topo, n, seed=0):
    return sample_gains(topo, streams.stream(seed, streams.FLAT, 0), size=n)


def test_strategy_assignment():
    v = StrategyAssignment.from_cf([2], 3)
    assert v.mask == 0b010 and v.cf == (2,) and v.df == (1, 3) and len(v) == 1
    assert repr(v) == "V{2}"
    assert [s.mask for s in StrategyAssignment.all(2)] == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        StrategyAssignment(4, 2)
    with pytest.raises(ValueError):
        StrategyAssignment.from_cf([3], 2)
    with pytest.raises(ValueError):
        StrategyAssignment(0, 17)


def test_subset_helpers():
    assert mask_members(0b1011) == (1, 2, 4)
    assert submasks(0b101) == [0b000, 0b001, 0b100, 0b101]
    assert submasks(0) == [0]
    assert len(submasks((1 << 5) - 1)) == 32


def test_term_argument_checks(topo):
    v = StrategyAssignment.from_cf([2], 2)
    cov = assemble_covariance(topo, draws(topo, 1)[0], InputPolicy.independent(2), CompressionPolicy({2: 1.0}), [2])
    with pytest.raises(ValueError):
        rate_dest_term(cov, v, t=0b01, s=0)  # T outside V
    with pytest.raises(ValueError):
        rate_dest_term(cov, v, t=0, s=0b10)  # S outside T
    with pytest.raises(ValueError):
        rate_relay_term(cov, v, k=2, t=0, s=0)  # relay 2 is CF
    with pytest.raises(ValueError):
        rate_relay_term(cov, v, k=1, t=0, s=0, mode="other")


def _named(sigma, names, ks):
    return [names[k] for k in ks]


def test_mixed_terms_match_written_out_formulas(topo):
    """Relay 1 DF, relay 2 CF, every term spelled out by hand."""
    g = draws(topo, 20, seed=1)
    inputs = InputPolicy((0.4, 0.0))
    v = StrategyAssignment.from_cf([2], 2)
    k_in = input_covariance(topo, inputs, [2])
    for gains in g:
        cov = assemble_covariance(topo, gains, inputs, CompressionPolicy({2: 0.7}), [2])
        sig, nm = two_relay_covariance(gains, [1, 10, 10], [1, 1, 1], k_in, {2: 0.7})
        x, x1, x2, z1, z2, zh2, y = (nm[n] for n in ("X", "X1", "X2", "Z1", "Z2", "Zh2", "Y"))
        # destination
        r_empty = mi(sig, [x, x1], [y])
        r_t_s0 = mi(sig, [x, x1], [zh2, y], [x2])
        r_t_s2 = mi(sig, [x, x1, x2], [y]) - mi(sig, [z2], [zh2], [x, x1, x2, y])
        assert rate_dest_term(cov, v, 0, 0) == pytest.approx(r_empty, abs=1e-9)
        assert rate_dest_term(cov, v, 2, 0) == pytest.approx(r_t_s0, abs=1e-9)
        assert rate_dest_term(cov, v, 2, 2) == pytest.approx(r_t_s2, abs=1e-9)
        q2 = mi(sig, [x2], [y], [x, x1]) - mi(sig, [z2], [zh2], [x, x1, x2, y])
        assert q_dest(cov, v, 2, 2) == pytest.approx(q2, abs=1e-9)
        dest = max(r_empty, min(r_t_s0, r_t_s2))
        assert dest_max_min(cov, v)[0] == pytest.approx(dest, abs=1e-9)
        # relay 1 decoding with help of relay 2's description
        rr_empty = mi(sig, [x], [z1], [x1])
        rr_s0 = mi(sig, [x], [zh2, z1], [x1, x2])
        rr_s2 = rr_s0 + mi(sig, [x2], [z1], [x1]) - mi(sig, [zh2], [z2], [x1, x2, z1])
        qr = mi(sig, [x2], [z1], [x1]) - mi(sig, [zh2], [z2], [x, x1, x2, z1])
        assert rate_relay_term(cov, v, 1, 2, 0) == pytest.approx(rr_s0, abs=1e-9)
        assert rate_relay_term(cov, v, 1, 2, 2) == pytest.approx(rr_s2, abs=1e-9)
        assert q_relay(cov, v, 1, 2, 2) == pytest.approx(qr, abs=1e-9)
        relay = max(rr_empty, min(rr_s0, rr_s2)) if qr >= -1e-12 else rr_empty
        assert relay_max_min(cov, v, 1)[0] == pytest.approx(relay, abs=1e-9)
        assert i_cmnnc(cov, v).rate == pytest.approx(max(min(dest, relay), 0.0), abs=1e-9)


def test_full_cf_equals_noisy_network_coding(topo):
    g = draws(topo, 50, seed=2)
    v = StrategyAssignment.from_cf([1, 2], 2)
    comp = {1: 0.5, 2: 2.0}
    k_in = input_covariance(topo, InputPolicy.independent(2), [1, 2])
    for gains in g:
        cov = assemble_covariance(topo, gains, InputPolicy.independent(2), CompressionPolicy(comp), [1, 2])
        sig, nm = two_relay_covariance(gains, [1, 10, 10], [1, 1, 1], k_in, comp)
        assert i_cmnnc(cov, v).rate == pytest.approx(nnc_rate(sig, nm, 2), abs=1e-9)


def test_single_relay_df_closed_form():
    topo = NetworkTopology.uniform(1, path_loss=None)
    g = sample_gains(topo, streams.stream(3, streams.FLAT, 0), size=50)
    v = StrategyAssignment(0, 1)
    for rho in (0.0, 0.6):
        cov = assemble_covariance(topo, g, InputPolicy((rho,)), CompressionPolicy({}), [])
        got = i_cmnnc(cov, v).rate
        for i, gains in enumerate(g):
            want = df_single_relay(gains[0, 1], gains[0, 2], gains[1, 2], 1.0, 10.0, rho)
            assert got[i] == pytest.approx(want, abs=1e-9)


def test_disconnected_relays_collapse_to_direct_link():
    links = {(0, 3): GainModel.rayleigh(), (0, 1): GainModel.constant(0), (0, 2): GainModel.constant(0),
             (1, 3): GainModel.constant(0), (2, 3): GainModel.constant(0), (1, 2): GainModel.constant(0),
             (2, 1): GainModel.constant(0)}
    topo = NetworkTopology(2, 1.0, (10.0, 10.0), (1.0, 1.0, 1.0), links)
    g = sample_gains(topo, streams.stream(4, streams.FLAT, 0), size=100)
    direct = np.log2(1 + np.abs(g[:, 0, 3]) ** 2)
    v = StrategyAssignment.from_cf([1, 2], 2)
    cov = assemble_covariance(topo, g, InputPolicy.independent(2), CompressionPolicy({1: 1.0, 2: 1.0}), [1, 2])
    np.testing.assert_allclose(i_cmnnc(cov, v).rate, direct, atol=1e-9)
    # a DF relay that hears nothing cannot decode
    cov = assemble_covariance(topo, g, InputPolicy.independent(2), CompressionPolicy({2: 1.0}), [2])
    np.testing.assert_allclose(i_cmnnc(cov, StrategyAssignment.from_cf([2], 2)).rate, 0.0, atol=1e-12)


def test_upsilon_restriction_does_not_change_destination_term(topo):
    g = draws(topo, 200, seed=5)
    rng = np.random.default_rng(0)
    for v in StrategyAssignment.all(2):
        sig = rng.choice([0.25, 1.0, 8.0], size=(200, len(v.cf)))
        cov = covariance_from_inputs(topo, g, input_covariance(topo, InputPolicy.coherent(0.5, 2, v.df), v.cf),
                                     v.cf, sig)
        a = dest_max_min(cov, v)[0]
        b = dest_max_min(cov, v, restrict_to_upsilon=True)[0]
        np.testing.assert_allclose(a, b, atol=1e-9)


def test_empty_t_is_always_feasible(topo):
    cov = assemble_covariance(topo, draws(topo, 1)[0], InputPolicy.independent(2), CompressionPolicy({2: 1.0}), [2])
    v = StrategyAssignment.from_cf([2], 2)
    assert bool(upsilon_member(cov, v, 0))
    assert bool(upsilon_member(cov, v, 0, k=1))
    _, _, _, feas = relay_max_min(cov, v, 1)
    assert set(feas) == {0, 2}


def test_scs_mode_reduces_at_the_extremes(topo):
    g = draws(topo, 100, seed=6)
    pol = InputPolicy.coherent(0.5, 2, [1, 2])
    # nobody compresses: both modes see the same law
    v = StrategyAssignment(0, 2)
    cov = assemble_covariance(topo, g, pol, CompressionPolicy({}), [])
    np.testing.assert_allclose(i_cmnnc(cov, v, SCS).rate, i_cmnnc(cov, v, FIXED_MODE).rate, atol=1e-12)
    # mixed: the relay term conditions on the unsent codeword too
    v = StrategyAssignment.from_cf([2], 2)
    cov = assemble_covariance(topo, g, pol, CompressionPolicy({2: 1.0}), [2], scs=True)
    scs_rate = i_cmnnc(cov, v, SCS)
    assert np.all(np.isfinite(scs_rate.rate))
    with pytest.raises(KeyError):
        # the unsent codeword only exists in the selective-mode covariance
        i_cmnnc(assemble_covariance(topo, g, pol, CompressionPolicy({2: 1.0}), [2]), v, SCS)


def test_df_constraint_without_df_relays(topo):
    cov = assemble_covariance(topo, draws(topo, 1)[0], InputPolicy.independent(2),
                              CompressionPolicy({1: 1.0, 2: 1.0}), [1, 2])
    assert df_constraint(cov, StrategyAssignment(3, 2)) == np.inf


def test_rate_is_clamped_and_breakdown_populated(topo):
    g = draws(topo, 30, seed=7)
    v = StrategyAssignment.from_cf([2], 2)
    cov = assemble_covariance(topo, g, InputPolicy.independent(2), CompressionPolicy({2: 1.0}), [2])
    out = i_cmnnc(cov, v)
    assert np.all(out.rate >= 0)
    assert set(out.relay_terms) == {1}
    np.testing.assert_allclose(out.rate, np.maximum(np.minimum(out.dest_term, out.relay_terms[1]), 0))
    assert set(np.unique(out.dest_argmax)) <= {0, 2}


def test_cutset_point_to_point():
    topo = NetworkTopology.uniform(0)
    g = sample_gains(topo, streams.stream(8, streams.FLAT, 0), size=50)
    np.testing.assert_allclose(rate_cutset(topo, g), np.log2(1 + np.abs(g[:, 0, 1]) ** 2), atol=1e-12)


def test_cut_values_match_written_out_cuts(topo):
    gains = draws(topo, 1, seed=9)[0]
    k_in = aligned_inputs(topo, gains, 0.5)
    cov = covariance_from_inputs(topo, gains, k_in)
    sig, nm = two_relay_covariance(gains, [1, 10, 10], [1, 1, 1], k_in, {})
    x, x1, x2, z1, z2, y = (nm[n] for n in ("X", "X1", "X2", "Z1", "Z2", "Y"))
    cuts = cut_values(cov, 2)
    assert cuts[0b00] == pytest.approx(mi(sig, [x], [z1, z2, y], [x1, x2]), abs=1e-9)
    assert cuts[0b01] == pytest.approx(mi(sig, [x, x1], [z2, y], [x2]), abs=1e-9)
    assert cuts[0b11] == pytest.approx(mi(sig, [x, x1, x2], [y]), abs=1e-9)


def test_aligned_inputs_are_valid_and_coherent(topo):
    gains = draws(topo, 1, seed=10)[0]
    for m in (0.0, 0.5, 0.95):
        k = aligned_inputs(topo, gains, m)
        assert np.all(np.linalg.eigvalsh(k) > -1e-12)
        np.testing.assert_allclose(np.diag(k).real, [1, 10, 10])
        # every input adds in phase at the destination
        h = gains[:, 3]
        cross = h[0] * k[0, 1] * np.conj(h[1])
        assert cross.imag == pytest.approx(0, abs=1e-12) and cross.real >= 0


def test_policy_inputs_cover_every_df_set(topo):
    ks = policy_inputs(topo, (0.0, 0.9))
    assert all(np.all(np.linalg.eigvalsh(k) > 0) for k in ks)
    # rho = 0 collapses to one law; 0.9 gives: df={1,2} split, df={1}, df={2}, and split over both with one CF
    assert len(ks) == 1 + 5


def test_cutset_dominates_strategies(topo):
    g = draws(topo, 300, seed=11)
    rng = np.random.default_rng(1)
    for rho in (0.0, 0.9):
        cut = rate_cutset(topo, g, extra_inputs=policy_inputs(topo, (rho,)))
        for v in StrategyAssignment.all(2):
            sig = rng.choice([0.25, 1.0, 4.0], size=(300, len(v.cf)))
            k_in = input_covariance(topo, InputPolicy.coherent(rho, 2, v.df), v.cf)
            rate = i_cmnnc(covariance_from_inputs(topo, g, k_in, v.cf, sig), v).rate
            assert np.all(cut >= rate - 1e-9)


def test_frozen_values(topo):
    """Regression values for one fixed draw."""
    gains = draws(topo, 1, seed=12)[0]
    got = []
    for v in StrategyAssignment.all(2):
        cov = assemble_covariance(topo, gains, InputPolicy.coherent(0.5, 2, v.df),
                                  CompressionPolicy.matched(topo, v.cf), v.cf)
        got.append(float(i_cmnnc(cov, v).rate))
    got.append(rate_cutset(topo, gains))
    np.testing.assert_allclose(got, FROZEN, rtol=1e-9)


FROZEN = [0.90680796889, 0.461271725062, 3.26958722913, 2.57428844301, 5.13717465891]
