import numpy as np
import pytest

from carbon_abatement import game
from carbon_abatement.game import (
    GameError,
    UncertaintySpec,
    game_reward,
    q_best_response,
    saddle_field,
    saddle_point,
    solve_isaacs,
    tau_best_response,
    write_saddle_csv,
)
from carbon_abatement.hjb import GridSpec, solve_hjb
from carbon_abatement.model import marginal_profit, residual_value
from carbon_abatement.tax import TaxChain

from conftest import twotech_model

BAND = UncertaintySpec(0.5, 1.5, 1.0, 1.0)


def gmodel(alpha=0.0):
    return twotech_model(alpha=alpha, T=10.0, q_min=5.0)


class TestBestResponses:
    def test_no_net_emissions_gives_reference(self):
        m = twotech_model()
        assert tau_best_response(m, 5.0, 200.0, 0.0, BAND) == pytest.approx(1.0)

    def test_clip_upper(self):
        m = twotech_model()
        q = 2.0 ** (2.0 / 3.0)  # brown emissions Q_b(q) = 2
        assert tau_best_response(m, q, -1e4, 0.0, BAND) == pytest.approx(1.5)

    def test_rebate_lowers_worst_case_tax(self):
        m = twotech_model(alpha=0.5)
        assert tau_best_response(m, 8.0, 200.0, 0.0, BAND) < 1.0

    def test_output_capacity_when_free(self):
        assert q_best_response(gmodel(), 0.0, 200.0, 0.0) == pytest.approx(10.0)

    def test_binding_minimum(self):
        m = gmodel()
        assert marginal_profit(m, 5.0, 0.0, 0.0, 1.5) < 0
        assert q_best_response(m, 1.5, 0.0, 0.0) == pytest.approx(5.0)


class TestSaddlePoint:
    @pytest.mark.parametrize("alpha", [0.0, 0.5])
    @pytest.mark.parametrize("nu1", [1.0, 20.0])
    def test_saddle_inequalities(self, alpha, nu1, rng):
        m = gmodel(alpha)
        u = UncertaintySpec(0.5, 1.5, 1.0, nu1)
        xs = rng.uniform(0, 60, 25)
        q_hat, tau_hat, G = saddle_point(m, xs, 0.0, u)
        for x, q0, t0, g0 in zip(xs, q_hat, tau_hat, G):
            qs = rng.uniform(5.0, 10.0, 100)
            ts = rng.uniform(0.5, 1.5, 100)
            assert np.all(game_reward(m, qs, t0, x, 0.0, u) <= g0 + 1e-8)
            assert np.all(g0 <= game_reward(m, q0, ts, x, 0.0, u) + 2e-8)

    def test_matches_small_lattice(self):
        m = gmodel(0.5)
        qs = np.linspace(5, 10, 201)[:, None]
        ts = np.linspace(0.5, 1.5, 201)[None, :]
        for x in (0.0, 22.0, 45.0):
            g = game_reward(m, qs, ts, x, 0.0, BAND)
            _, _, G = saddle_point(m, x, 0.0, BAND)
            assert g.min(axis=1).max() == pytest.approx(float(G), abs=5e-3)
            assert g.max(axis=0).min() == pytest.approx(float(G), abs=5e-3)

    def test_reference_tax_when_no_net_emissions(self):
        m = gmodel()
        q, tau, _ = saddle_point(m, 200.0, 0.0, BAND)
        assert tau == pytest.approx(1.0)
        assert q == pytest.approx(q_best_response(m, 1.0, 200.0, 0.0))

    @pytest.mark.parametrize("alpha", [0.0, 0.5])
    def test_shape_in_x(self, alpha):
        sf = saddle_field(gmodel(alpha), np.linspace(0, 60, 121), [0.0], BAND)
        assert np.all(np.diff(sf.q_hat[:, 0]) >= -1e-9)
        assert np.all(np.diff(sf.tau_hat[:, 0]) <= 1e-9)

    def test_phi_decreasing_without_rebate(self):
        m = gmodel(0.0)
        qs = np.linspace(5, 10, 400)
        for x in (0.0, 15.0, 30.0, 60.0):
            phi = game._phi(m, qs, x, 0.0, BAND, 0.0)
            assert np.all(np.diff(phi) <= 1e-12)
            brown = qs > 1.0 + 0.2 * np.logaddexp(0, x - 20.0)
            assert np.all(np.diff(phi)[brown[1:]] < 0)

    @pytest.mark.parametrize("x", [0.0, 15.0, 30.0, 45.0, 60.0])
    def test_phi_single_crossing_with_rebate(self, x):
        # the rebate makes phi rise where green capacity covers output, but it
        # stays positive there, so it still crosses zero at most once
        phi = game._phi(gmodel(0.5), np.linspace(5, 10, 2000), x, 0.0, BAND, 0.0)
        neg = np.flatnonzero(phi < 0)
        if neg.size:
            assert np.all(phi[neg[0]:] < 0)
            assert np.all(np.diff(phi[neg[0] - 1 if neg[0] else 0:]) < 0)

    def test_non_monotone_phi_diagnosed(self, monkeypatch):
        monkeypatch.setattr(game, "_phi", lambda m, q, x, y, u, t: np.cos(3 * np.asarray(q)) + 0 * np.asarray(x))
        with pytest.raises(GameError, match="single-crossing"):
            saddle_point(gmodel(), 10.0, 0.0, BAND)


class TestUncertaintySpec:
    def test_validation(self):
        with pytest.raises(GameError):
            UncertaintySpec(1.2, 1.5, 1.0, 1.0)
        with pytest.raises(GameError):
            UncertaintySpec(0.5, 1.5, 1.0, 0.0)
        with pytest.raises(GameError):
            UncertaintySpec(((1.0, 0.5), (0.0, 0.5)), 1.5, 1.0, 1.0)

    def test_schedule(self):
        u = UncertaintySpec(0.5, ((0.0, 1.5), (10.0, 2.5)), ((0.0, 1.0), (10.0, 2.0)), 1.0)
        lo, hi, bar = u.at(5.0)
        assert (float(lo), float(hi), float(bar)) == (0.5, 2.0, 1.5)
        assert not u.is_static and BAND.is_static
        assert u.band_max(10.0) == 2.5


class TestIsaacs:
    GRID = GridSpec(0.0, 100.0, 401, 200)

    def test_terminal_condition(self):
        m = gmodel()
        sol = solve_isaacs(m, BAND, self.GRID)
        assert np.max(np.abs(sol.value.values[-1, :, 0, 0] - residual_value(m, sol.value.xs))) == 0.0
        assert sol.policy.tau.shape == sol.value.values.shape

    def test_degenerate_band_is_control_problem(self):
        m = gmodel()
        u = UncertaintySpec(1.0, 1.0, 1.0, 7.0)
        a = solve_isaacs(m, u, self.GRID)
        b = solve_hjb(m, TaxChain((1.0,), ((0.0,),)), self.GRID, gamma_bar=a.budget.gamma_bar)
        np.testing.assert_allclose(a.value.values, b.value.values, rtol=1e-9, atol=1e-9)

    def test_time_dependent_band(self):
        m = gmodel()
        u = UncertaintySpec(0.5, 1.5, ((0.0, 0.8), (10.0, 1.2)), 1.0)
        sol = solve_isaacs(m, u, GridSpec(0.0, 100.0, 101, 50))
        assert np.all(np.isfinite(sol.value.values))
        assert not np.allclose(sol.policy.tau[0], sol.policy.tau[-1])

    def test_saddle_csv(self, tmp_path):
        sf = saddle_field(gmodel(), [0.0, 10.0], [0.0], BAND)
        text = write_saddle_csv(tmp_path / "s.csv", sf).read_text()
        assert text.splitlines()[0] == "x,y,q_hat,tau_hat,G"
        assert len(text.splitlines()) == 3
