from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dispersal_lab import verify
from dispersal_lab.config import load_config
from dispersal_lab.core import integrate_trait
from dispersal_lab.errors import SolverError
from dispersal_lab.parabolic import SimState, run_to_steady
from dispersal_lab.profiles import Preset
from dispersal_lab.verify import (
    AsymptoticReport,
    StudyError,
    check_rho_identities,
    convergence_study,
    corrector_check,
    env_workers,
    limit_reference,
    u_eps,
)


@pytest.fixture(scope="module")
def coarse():
    config, _ = load_config(preset="smooth_periodic", overrides=["domain.n_x=30", "trait.n_theta=30"])
    return config


class TestUEps:
    def test_examples(self):
        np.testing.assert_allclose(u_eps(np.array([1.0, np.e, np.e**-2]), 0.1), [0.0, 0.1, -0.2])

    @settings(max_examples=50, deadline=None)
    @given(u=st.floats(-5, 5), eps=st.floats(0.01, 1.0))
    def test_inverse_of_exponential(self, u, eps):
        assert u_eps(np.array([np.exp(u / eps)]), eps)[0] == pytest.approx(u, abs=1e-12)


class TestEnvWorkers:
    @pytest.mark.parametrize("raw, expected", [("", None), ("4", 4), ("1", None), ("0", None), ("many", None)])
    def test_parse(self, monkeypatch, raw, expected):
        monkeypatch.setenv(verify.THREADS_ENV, raw)
        assert env_workers() == expected

    def test_unset(self, monkeypatch):
        monkeypatch.delenv(verify.THREADS_ENV, raising=False)
        assert env_workers() is None


class TestRhoIdentities:
    def test_study_states(self, study, smooth_preset):
        for rep in study:
            r = check_rho_identities(rep.state, smooth_preset.with_epsilon(rep.epsilon))
            assert r.nonnegative and r.below_ceiling and r.positive_mass
            assert r.relative_defect < 1e-6

    def test_constant_K(self, coarse):
        cfg = replace(coarse, K=Preset("constant", {"value": 2.0}))
        r = check_rho_identities(run_to_steady(cfg.with_epsilon(0.1)), cfg)
        assert r.relative_defect < 1e-6
        assert r.max_rho <= 2.0 * 1.01 and r.min_rho > 0

    def test_report_flags(self):
        r = verify.RhoReport(-1.0, 5.0, 4.0, 0.0, 0.0, 0.0)
        assert not r.nonnegative and not r.below_ceiling and not r.positive_mass
        assert r.relative_defect == np.inf


class TestStudy:
    def test_rows_improve_as_eps_shrinks(self, study):
        eps = [r.epsilon for r in study]
        assert eps == sorted(eps, reverse=True)
        for key in ("rho_error", "u_error", "trait_stddev", "max_u_eps"):
            values = [abs(getattr(r, key)) for r in study]
            assert all(b < a for a, b in zip(values, values[1:])), key

    def test_argmax_at_theta_m(self, study, smooth_preset):
        assert all(r.argmax_index == smooth_preset.theta_m_index for r in study)

    def test_x_oscillation_is_order_eps(self, study):
        scaled = [r.x_oscillation / r.epsilon for r in study]
        assert max(scaled) < 2.0 * min(scaled)

    def test_row_layout(self, study):
        row = study[0].row()
        assert len(row) == len(AsymptoticReport.COLUMNS)
        assert row[0] == study[0].epsilon

    def test_needs_three_decreasing(self, coarse):
        with pytest.raises(ValueError, match="three"):
            convergence_study(coarse, epsilons=(0.2, 0.1))
        with pytest.raises(ValueError, match="decreasing"):
            convergence_study(coarse, epsilons=(0.2, 0.1, 0.15))

    def test_threads_match_serial(self, coarse):
        eps = (0.2, 0.15, 0.1)
        serial = convergence_study(coarse, eps)
        pooled = convergence_study(coarse, eps, workers=3)
        assert [r.row() for r in serial] == [r.row() for r in pooled]
        assert all(r.state is None for r in serial)

    def test_partial_results_on_failure(self, coarse, monkeypatch):
        real = verify.run_to_steady

        def flaky(cfg, *a, **kw):
            if cfg.epsilon < 0.12:
                raise SolverError("no steady state by t=1")
            return real(cfg, *a, **kw)

        monkeypatch.setattr(verify, "run_to_steady", flaky)
        with pytest.raises(StudyError, match="eps=0.1") as info:
            convergence_study(coarse, (0.2, 0.15, 0.1))
        assert [r.epsilon for r in info.value.partial] == [0.2, 0.15]

    def test_limit_reference(self, coarse):
        ref = limit_reference(coarse)
        assert ref.D_m == pytest.approx(np.min(coarse.D_samples))
        assert np.all(ref.N_m > 0)
        assert int(np.argmax(ref.u)) == coarse.theta_m_index and np.max(ref.u) == 0.0


class TestCorrector:
    def test_uniform_state_is_exact(self, coarse):
        cfg = replace(coarse, K=Preset("constant", {"value": 2.0}), D=Preset("constant", {"value": 0.3}))
        rep = corrector_check(SimState(np.full((30, 30), 2.0)), cfg)
        assert rep.fit_residual < 1e-10
        assert rep.ratio == pytest.approx(1.0)

    def test_bounded_at_moderate_eps(self, study, smooth_preset):
        rep = corrector_check(study[1].state, smooth_preset.with_epsilon(study[1].epsilon))
        assert rep.ratio < 10.0
        assert rep.window_nodes == 21

    def test_residual_shrinks_with_eps(self, study, smooth_preset):
        res = [corrector_check(r.state, smooth_preset.with_epsilon(r.epsilon)).fit_residual for r in study[:2]]
        assert res[1] < res[0]

    def test_resolution_independent(self, study, smooth_preset):
        fine = corrector_check(study[1].state, smooth_preset.with_epsilon(0.05))
        cfg, _ = load_config(
            preset="smooth_periodic", overrides=["domain.n_x=60", "trait.n_theta=60", "model.epsilon=0.05"]
        )
        coarse_rep = corrector_check(run_to_steady(cfg), cfg)
        assert coarse_rep.ratio == pytest.approx(fine.ratio, rel=0.2)

    def test_empty_window(self, coarse):
        n = np.ones((30, 30))
        with pytest.raises(ValueError, match="no trait nodes"):
            corrector_check(SimState(n), coarse, half_width=-1.0)

    def test_rho_of_state_drives_the_curve(self, study, smooth_preset):
        rep = corrector_check(study[2].state, smooth_preset.with_epsilon(study[2].epsilon))
        rho = integrate_trait(study[2].state.n, smooth_preset.trait)
        assert rep.rho_bar > 0 and np.isfinite(rep.trait_eigenvalue)
        assert rep.v_min > 0 and rep.v_max <= 10 * np.max(rho)
