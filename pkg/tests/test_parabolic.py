from dataclasses import replace

import numpy as np
import pytest

from dispersal_lab.core import ModelConfig, SolverSettings, SpatialGrid, TraitGrid, integrate_trait, trait_marginal
from dispersal_lab.errors import PositivityError, SolverError
from dispersal_lab.linalg import solve_tridiagonal
from dispersal_lab.parabolic import (
    SimState,
    Stepper,
    StepperConfig,
    _column_bands,
    initial_density,
    run_to_steady,
    run_transient,
    stable_dt,
    steady_residual,
    step,
)
from dispersal_lab.profiles import Preset


def small(eps=0.1, K=None, D=None, n_x=30, n_theta=32):
    return ModelConfig(
        SpatialGrid(1.0, n_x),
        TraitGrid(n_theta),
        D or Preset("cosine", {"mean": 0.2, "amplitude": 0.1}),
        K or Preset("cosine", {"mean": 4.0, "amplitude": 0.6}),
        eps,
        0.5,
    )


class TestStep:
    @pytest.mark.parametrize("mode", ["explicit", "semi_implicit"])
    def test_constant_state_is_fixed(self, mode):
        cfg = small(K=Preset("constant", {"value": 3.0}))
        n = np.full((30, 32), 3.0)
        new = step(SimState(n), cfg, StepperConfig(stable_dt(cfg), mode))
        np.testing.assert_allclose(new.n, 3.0, rtol=1e-14)
        assert new.step_count == 1 and new.t == pytest.approx(stable_dt(cfg))

    def test_explicit_mass_budget_is_exact(self):
        cfg = small()
        sp, tr = cfg.spatial, cfg.trait
        n0 = initial_density(cfg, center=0.3)
        rho = integrate_trait(n0, tr)
        source = sp.integrate(integrate_trait(n0 * (cfg.K_samples[:, None] - rho[:, None]), tr))
        dt = stable_dt(cfg)
        new = step(SimState(n0), cfg, StepperConfig(dt, "explicit"))
        change = cfg.epsilon * (sp.integrate(integrate_trait(new.n, tr)) - sp.integrate(rho)) / dt
        assert change == pytest.approx(source, rel=1e-10)

    def test_mass_budget_defect_is_first_order(self):
        cfg = small()
        sp, tr = cfg.spatial, cfg.trait
        n0 = initial_density(cfg, center=0.3)
        rho = integrate_trait(n0, tr)
        source = sp.integrate(integrate_trait(n0 * (cfg.K_samples[:, None] - rho[:, None]), tr))
        mass0 = sp.integrate(rho)
        defects = []
        for k in range(4):
            dt = stable_dt(cfg) / 2 ** (k + 3)
            new = Stepper(cfg, StepperConfig(dt, "semi_implicit"))(SimState(n0))
            mass1 = sp.integrate(integrate_trait(new.n, tr))
            defects.append(abs(cfg.epsilon * (mass1 - mass0) / dt - source))
        ratios = np.array(defects[:-1]) / np.array(defects[1:])
        assert np.all((ratios > 1.8) & (ratios < 2.2))

    def test_logistic_limit(self):
        cfg = small(D=Preset("constant", {"value": 0.0}))
        f = 1.0 + np.linspace(0.0, 2.0, 30)
        n = np.tile(f[:, None], (1, 32))
        dt, eps, K = 0.01, cfg.epsilon, cfg.K_samples[:, None]
        explicit = Stepper(cfg, StepperConfig(dt, "explicit"))(SimState(n)).n
        np.testing.assert_allclose(explicit, n + dt / eps * n * (K - f[:, None]), rtol=1e-13)
        semi = Stepper(cfg, StepperConfig(dt, "semi_implicit"))(SimState(n)).n
        np.testing.assert_allclose(semi, (n + dt / eps * n * K) / (1 + dt / eps * f[:, None]), rtol=1e-13)

    def test_positivity_loss_is_reported(self):
        cfg = small()
        n0 = np.tile(1.0 + 0.5 * (-1.0) ** np.arange(32), (30, 1))
        with pytest.raises(PositivityError, match="positivity lost"):
            step(SimState(n0), cfg, StepperConfig(20 * stable_dt(cfg), "explicit"))

    @pytest.mark.parametrize("ratio", [1.0, 1e2, 1e4])
    def test_x_solve_does_not_amplify(self, ratio):
        cfg = small(D=Preset("constant", {"value": 1.0}), n_theta=4)
        h = cfg.spatial.spacing
        dt = ratio * h * h * cfg.epsilon
        lo, di, up = _column_bands(cfg, dt)
        nx = cfg.spatial.n_x
        for k in range(nx):
            mode = np.cos(np.pi * k * cfg.spatial.nodes)
            out = solve_tridiagonal(lo[: nx - 1], di[:nx], up[: nx - 1], mode)
            assert np.max(np.abs(out)) <= np.max(np.abs(mode)) * (1 + 1e-12)

    def test_dirichlet_ends_stay_pinned(self, figure1_config):
        cfg = figure1_config
        new = step(SimState(initial_density(cfg)), cfg, StepperConfig(stable_dt(cfg)))
        assert np.all(new.n[0] == 0) and np.all(new.n[-1] == 0)
        assert np.all(new.n[:, 0] == 0) and np.all(new.n[:, -1] == 0)
        assert np.all(new.n[1:-1, 1:-1] > 0)

    def test_stepper_config_validation(self):
        with pytest.raises(ValueError):
            StepperConfig(0.0)
        with pytest.raises(ValueError):
            StepperConfig(1e-3, "implicit")

    def test_stable_dt_formula(self):
        cfg = small(eps=0.05)
        h = cfg.trait.spacing
        assert stable_dt(cfg) == pytest.approx(0.9 * min(h * h / 0.1, 0.05 / (2 * 4.6)))


class TestTransient:
    def test_snapshots(self):
        cfg = small()
        dt = stable_dt(cfg)
        snaps = run_transient(cfg, initial_density(cfg), 40 * dt, sample_every=10, sample_times=(5.5 * dt,))
        steps = [s.step_count for s in snaps]
        assert steps == [0, 6, 10, 20, 30, 40]
        assert all(s.rho.shape == (30,) and s.marginal.shape == (32,) for s in snaps)

    def test_zero_growth(self):
        cfg = small(K=Preset("constant", {"value": 2.0}))
        tr = cfg.trait
        c = tr.nodes[13]
        G = np.exp(-0.5 * (tr.distance(tr.nodes, c) / 0.05) ** 2)
        G /= np.sum(G * tr.weights)
        n0 = 2.0 * np.tile(G, (30, 1))
        snaps = run_transient(cfg, n0, 0.05, sample_every=2)
        masses = [s.moments.mass for s in snaps]
        means = [s.moments.mean_trait for s in snaps]
        spreads = [s.moments.trait_stddev for s in snaps]
        np.testing.assert_allclose(masses, 2.0, rtol=1e-12)
        np.testing.assert_allclose(means, c, atol=1e-10)
        assert np.all(np.diff(spreads) > 0)

    def test_figure1_trend(self, figure1_run, figure1_config):
        means = [s.moments.mean_trait for s in figure1_run]
        assert means[0] == pytest.approx(0.7, abs=1e-3)
        assert means[-1] < 0.1
        K = figure1_config.K_samples
        peaks = [np.max(s.rho) for s in figure1_run]
        assert all(0 < p <= 1.01 * K.max() for p in peaks)


class TestSteady:
    def test_residual_and_identity(self, study, smooth_preset):
        for rep in study:
            cfg = smooth_preset.with_epsilon(rep.epsilon)
            n = rep.state.n
            assert steady_residual(n, cfg) < 10 * cfg.solver.steady_tol
            rho = integrate_trait(n, cfg.trait)
            sp = cfg.spatial
            assert abs(sp.integrate(rho * cfg.K_samples) - sp.integrate(rho**2)) < 1e-6 * sp.integrate(rho**2)

    def test_fixed_point_of_step(self, study, smooth_preset):
        rep = study[1]
        cfg = smooth_preset.with_epsilon(rep.epsilon)
        dt = stable_dt(cfg)
        new = step(rep.state, cfg, StepperConfig(dt))
        change = np.max(np.abs(new.n - rep.state.n)) / (dt * np.max(new.n))
        assert change < cfg.solver.steady_tol

    def test_unimodal_marginal_near_theta_m(self, study, smooth_preset):
        rep = study[1]
        assert rep.epsilon == 0.05
        marg = trait_marginal(rep.state.n, smooth_preset.spatial)
        mode = int(np.argmax(marg))
        assert abs(mode - smooth_preset.theta_m_index) <= 2
        slopes = np.sign(np.diff(np.append(marg, marg[0])))
        assert np.count_nonzero(slopes != np.roll(slopes, 1)) <= 2

    def test_doubling_K_raises_rho(self):
        base = small(eps=0.1, n_x=24, n_theta=24)
        doubled = replace(base, K=Preset("cosine", {"mean": 8.0, "amplitude": 1.2}))
        r1 = integrate_trait(run_to_steady(base).n, base.trait)
        r2 = integrate_trait(run_to_steady(doubled).n, doubled.trait)
        assert np.all(r2 >= r1 - 1e-6)

    def test_requires_analysis_setting(self, figure1_config):
        with pytest.raises(ValueError):
            run_to_steady(figure1_config)

    def test_max_time_cap(self):
        cfg = small(eps=0.1, n_x=16, n_theta=16)
        with pytest.raises(SolverError, match="no steady state"):
            run_to_steady(cfg, max_time=0.01)

    def test_explicit_mode_reaches_same_state(self):
        cfg = small(eps=0.1, n_x=20, n_theta=20)
        semi = run_to_steady(cfg)
        expl = run_to_steady(replace(cfg, solver=SolverSettings(reaction="explicit")))
        rs = integrate_trait(semi.n, cfg.trait)
        re = integrate_trait(expl.n, cfg.trait)
        # both schemes share the discrete steady equation as their fixed point
        assert np.max(np.abs(rs - re)) < 1e-5 * np.max(rs)
