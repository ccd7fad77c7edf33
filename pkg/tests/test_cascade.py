"""Impact matrices, shock validation and the propagation engine."""

import numpy as np
import pytest

from prodrisk.netcore import FirmRecord, SyntheticConfig, build_network, generate_synthetic
from prodrisk.prodfun import Scenario, assign_scenario, calibrate
from prodrisk.cascade import (
    ExogenousShock,
    build_impact_matrices,
    initial_state,
    replaceability,
    rescale_for_coverage,
    run_cascade,
    step,
)


def mill_net(revenue=None, material_cost=None):
    firms = [
        FirmRecord("wheat", "0111"),
        FirmRecord("consult", "7022"),
        FirmRecord("mill", "1061", revenue=revenue, material_cost=material_cost),
        FirmRecord("shop", "4711"),
    ]
    edges = [("wheat", "mill", 40.0), ("consult", "mill", 10.0), ("mill", "shop", 100.0)]
    return build_network(firms, edges)


def prepared(net, scenario):
    spec = assign_scenario(net, scenario)
    params = calibrate(net, spec)
    return params, rescale_for_coverage(build_impact_matrices(net, spec), net.firms)


def entry(matrices, sup, buy):
    for k in range(len(matrices.d_sup)):
        if matrices.d_sup[k] == sup and matrices.d_buy[k] == buy:
            return matrices.lam_d[k], bool(matrices.d_ess[k])
    raise AssertionError("edge not found")


class TestImpactMatrices:
    def test_gl_edge_coefficients(self):
        net = mill_net()
        spec = assign_scenario(net, Scenario.GL)
        m = build_impact_matrices(net, spec)
        wheat, consult = net.index_of["wheat"], net.index_of["consult"]
        mill, shop = net.index_of["mill"], net.index_of["shop"]

        lam, ess = entry(m, wheat, mill)
        assert ess and lam == 1.0       # sole supplier within its sector
        lam, ess = entry(m, consult, mill)
        assert not ess and lam == 10.0 / 50.0
        lam, ess = entry(m, mill, shop)
        assert not ess and lam == 1.0   # service buyer pools everything

    def test_constraint_groups(self):
        net = mill_net()
        m = build_impact_matrices(net, assign_scenario(net, Scenario.GL))
        mill = net.index_of["mill"]
        mill_groups = {int(g) for g, b in zip(m.d_group, m.d_buy) if b == mill}
        assert len(mill_groups) == 2    # one essential sector plus the pool
        sectors = {int(m.group_sector[g]) for g in mill_groups}
        assert -1 in sectors            # pooled group marker
        assert len(m.group_buyer) == m.n_groups

    def test_upstream_shares_and_residual(self):
        net = mill_net()
        m = build_impact_matrices(net, assign_scenario(net, Scenario.GL))
        assert np.all(m.lam_u == 1.0)   # every supplier has a single buyer
        resid = {net.firms[i].firm_id: m.u_resid[i] for i in range(net.n)}
        assert resid == {"wheat": 0.0, "consult": 0.0, "mill": 0.0, "shop": 1.0}

    def test_share_sums_bounded(self):
        firms, edges = generate_synthetic(SyntheticConfig(n_firms=40), seed=2)
        net = build_network(firms, edges)
        for scenario in Scenario:
            m = build_impact_matrices(net, assign_scenario(net, scenario))
            for g in range(m.n_groups):
                total = float(np.sum(m.lam_d[m.d_group == g]))
                assert total <= 1.0 + 1e-9
                if m.group_sector[g] >= 0:
                    assert total == pytest.approx(1.0)
            per_sup = np.bincount(m.u_sup, weights=m.lam_u, minlength=net.n)
            assert np.all(per_sup + m.u_resid <= 1.0 + 1e-9)

    def test_rescale_shrinks_receiver_side(self):
        net = mill_net(revenue=200.0, material_cost=100.0)
        plain = build_impact_matrices(net, assign_scenario(net, Scenario.GL))
        scaled = rescale_for_coverage(plain, net.firms)
        mill, shop = net.index_of["mill"], net.index_of["shop"]
        wheat = net.index_of["wheat"]

        # mill reports twice the observed sales: upstream impact halves
        k = next(i for i in range(len(scaled.u_sup))
                 if scaled.u_sup[i] == mill and scaled.u_buy[i] == shop)
        assert plain.lam_u[k] == 1.0 and scaled.lam_u[k] == 0.5
        assert scaled.u_resid[mill] == 0.5
        # mill reports twice the observed inputs: downstream impact halves
        lam, _ = entry(scaled, wheat, mill)
        assert lam == 0.5

    def test_rescale_never_amplifies(self):
        net = mill_net(revenue=80.0, material_cost=20.0)  # below observed figures
        plain = build_impact_matrices(net, assign_scenario(net, Scenario.GL))
        scaled = rescale_for_coverage(plain, net.firms)
        assert np.all(scaled.lam_d == plain.lam_d)
        assert np.all(scaled.lam_u == plain.lam_u)

    def test_rescale_ignores_missing_figures(self):
        net = mill_net()
        plain = build_impact_matrices(net, assign_scenario(net, Scenario.GL))
        scaled = rescale_for_coverage(plain, net.firms)
        assert np.all(scaled.lam_d == plain.lam_d)
        assert np.all(scaled.u_resid == plain.u_resid)


class TestExogenousShock:
    def test_validation(self):
        with pytest.raises(ValueError):
            ExogenousShock(np.array([0.5, 1.2]))
        with pytest.raises(ValueError):
            ExogenousShock(np.array([-0.1]))
        with pytest.raises(ValueError):
            ExogenousShock(np.ones((2, 2)))

    def test_owns_a_frozen_copy(self):
        src = np.array([0.5, 1.0])
        shock = ExogenousShock(src)
        src[0] = 0.9
        assert shock.psi[0] == 0.5
        with pytest.raises(ValueError):
            shock.psi[0] = 0.1

    def test_run_does_not_touch_callers_array(self):
        net = mill_net()
        params, m = prepared(net, Scenario.GL)
        psi = np.ones(net.n)
        psi[0] = 0.0
        run_cascade(net, m, params, psi)
        assert psi[0] == 0.0 and psi.flags.writeable
        psi[0] = 1.0  # stays writable for reuse


class TestReplaceability:
    def test_worked_example(self):
        firms = [FirmRecord("S", "2611"), FirmRecord("Z", "2611"),
                 FirmRecord("X", "2611"), FirmRecord("B", "1071"),
                 FirmRecord("D", "9999")]
        edges = [("S", "B", 10.0), ("Z", "B", 10.0), ("X", "D", 82.0)]
        net = build_network(firms, edges)
        h = np.ones(net.n)
        h[net.index_of["S"]] = 0.8
        sigma = replaceability(h, net)
        assert sigma[net.index_of["S"]] == pytest.approx(0.1, abs=1e-12)

    def test_dead_sector_gives_one(self):
        firms = [FirmRecord("a", "0111"), FirmRecord("b", "4711")]
        net = build_network(firms, [("a", "b", 3.0)])
        sigma = replaceability(np.array([0.0, 1.0]), net)
        assert sigma[net.index_of["a"]] == 1.0

    def test_capped_at_one(self):
        firms = [FirmRecord("a", "0111"), FirmRecord("b", "0111"),
                 FirmRecord("c", "4711")]
        net = build_network(firms, [("a", "c", 6.0), ("b", "c", 4.0)])
        sigma = replaceability(np.array([1.0, 0.1, 1.0]), net)
        assert sigma[net.index_of["a"]] == pytest.approx(6.0 / 6.4)
        assert sigma[net.index_of["b"]] == pytest.approx(4.0 / 6.4)
        assert np.all(sigma <= 1.0)


class TestEngine:
    def test_no_shock_is_an_exact_fixed_point(self):
        for net in (mill_net(), mill_net(revenue=300.0, material_cost=120.0)):
            for scenario in Scenario:
                params, m = prepared(net, scenario)
                res = run_cascade(net, m, params, np.ones(net.n))
                assert res.T == 1 and res.converged
                assert np.all(res.h_final == 1.0)

    def test_no_shock_exact_at_scale_with_low_coverage(self):
        firms, edges = generate_synthetic(
            SyntheticConfig(n_firms=200, coverage=0.35), seed=11)
        net = build_network(firms, edges)
        params, m = prepared(net, Scenario.GL)
        res = run_cascade(net, m, params, np.ones(net.n))
        assert np.all(res.h_final == 1.0) and res.T == 1

    def test_cap_binds_every_iteration(self):
        net = mill_net()
        params, m = prepared(net, Scenario.GL)
        psi = np.ones(net.n)
        psi[net.index_of["mill"]] = 0.3
        res = run_cascade(net, m, params, psi, epsilon=1e-10, max_iter=200)
        assert res.h_final[net.index_of["mill"]] <= 0.3
        assert res.converged

    def test_trace_matches_manual_stepping(self):
        net = mill_net()
        params, m = prepared(net, Scenario.LEO)
        psi = np.ones(net.n)
        psi[net.index_of["wheat"]] = 0.0
        res = run_cascade(net, m, params, psi, epsilon=1e-6, max_iter=50,
                          record_trace=True)
        state = initial_state(m)
        for recorded in res.trace[1:]:
            state = step(state, m, params, psi)
            assert np.array_equal(state.h_d, recorded.h_d)
            assert np.array_equal(state.h_u, recorded.h_u)
            assert np.array_equal(state.sigma, recorded.sigma)
        assert np.array_equal(np.minimum(state.h_d, state.h_u), res.h_final)

    def test_trace_sigma_consistent_with_replaceability(self):
        net = mill_net()
        params, m = prepared(net, Scenario.LEO)
        psi = np.ones(net.n)
        psi[net.index_of["wheat"]] = 0.2
        res = run_cascade(net, m, params, psi, epsilon=1e-6, max_iter=50,
                          record_trace=True)
        for prev, nxt in zip(res.trace, res.trace[1:]):
            assert np.array_equal(replaceability(prev.h_d, net), nxt.sigma)

    def test_downstream_collapse_needs_essentiality(self):
        net = mill_net()
        psi = np.ones(net.n)
        psi[net.index_of["wheat"]] = 0.0

        params, m = prepared(net, Scenario.LEO)
        res = run_cascade(net, m, params, psi, epsilon=1e-4, max_iter=100)
        assert res.h_final[net.index_of["mill"]] == 0.0

        params, m = prepared(net, Scenario.LIN)
        res = run_cascade(net, m, params, psi, epsilon=1e-4, max_iter=100)
        assert res.h_final[net.index_of["mill"]] == pytest.approx(0.2)

    def test_upstream_demand_loss(self):
        net = mill_net()
        params, m = prepared(net, Scenario.GL)
        psi = np.ones(net.n)
        psi[net.index_of["shop"]] = 0.4
        res = run_cascade(net, m, params, psi, epsilon=1e-6, max_iter=100)
        # wheat -> mill -> shop: the demand cut walks up the chain untouched
        assert res.h_u_final[net.index_of["mill"]] == pytest.approx(0.4)
        assert res.h_u_final[net.index_of["wheat"]] == pytest.approx(0.4)
        assert res.h_d_final[net.index_of["wheat"]] == 1.0

    def test_non_convergence_reported(self):
        net = mill_net()
        params, m = prepared(net, Scenario.LEO)
        psi = np.ones(net.n)
        psi[net.index_of["wheat"]] = 0.5
        res = run_cascade(net, m, params, psi, epsilon=1e-12, max_iter=2)
        assert not res.converged and res.T == 2

    def test_guards(self):
        net = mill_net()
        params, m = prepared(net, Scenario.GL)
        good = np.ones(net.n)
        with pytest.raises(ValueError, match="epsilon"):
            run_cascade(net, m, params, good, epsilon=0.0)
        with pytest.raises(ValueError, match="max_iter"):
            run_cascade(net, m, params, good, max_iter=0)
        with pytest.raises(ValueError, match="length"):
            run_cascade(net, m, params, np.ones(net.n + 1))
        empty = build_network([], [])
        p2, m2 = prepared(empty, Scenario.GL)
        with pytest.raises(ValueError, match="empty"):
            run_cascade(empty, m2, p2, np.ones(0))

    def test_sigma_fixed_disables_substitution(self):
        firms = [FirmRecord("S", "2611"), FirmRecord("Z", "2611"),
                 FirmRecord("X", "2611"), FirmRecord("B", "1071"),
                 FirmRecord("D", "9999")]
        edges = [("S", "B", 10.0), ("Z", "B", 10.0), ("X", "D", 82.0)]
        net = build_network(firms, edges)
        params, m = prepared(net, Scenario.LEO)
        psi = np.ones(net.n)
        psi[net.index_of["S"]] = 0.0
        damped = run_cascade(net, m, params, psi, epsilon=1e-9, max_iter=200)
        blunt = run_cascade(net, m, params, psi, epsilon=1e-9, max_iter=200,
                            sigma_fixed=np.ones(net.n))
        b = net.index_of["B"]
        assert blunt.h_final[b] < damped.h_final[b]
        assert blunt.h_final[b] == pytest.approx(0.5)
        # with the failed firm at a tenth of surviving sector output the
        # damped loss is sigma * share * drop = (10/92) * 0.5
        assert damped.h_final[b] == pytest.approx(1.0 - 10.0 / 92.0 * 0.5)

    def test_results_are_frozen(self):
        net = mill_net()
        params, m = prepared(net, Scenario.GL)
        res = run_cascade(net, m, params, np.ones(net.n), record_trace=True)
        with pytest.raises(ValueError):
            res.h_final[0] = 0.5
        with pytest.raises(ValueError):
            res.trace[0].h_d[0] = 0.5
