import math

import numpy as np
import pytest

from oscecho import (
    CovMat,
    DomainError,
    EchoSpec,
    FitFailureError,
    ForceModel,
    GaussianState,
    InsufficientDataError,
    McConfig,
    OscillatorConfig,
    PhaseVec,
    SampleMark,
    Segment,
    JumpSequence,
    UnidentifiableError,
    bootstrap_cov_se,
    echo_cov,
    echo_mean,
    ensemble_stats,
    fit_f0_from_displacement,
    fit_sigma_from_growth,
    fit_sigma_from_vtot,
    normalized_force,
    optimal_ratio,
    run_ensemble,
    samples_array,
    state_size,
    sweep_rprime,
)
from oscecho.estimation import SweepRow
from oscecho.montecarlo import aux_rng

OMEGA = 2 * math.pi * 52000.0
GAMMA = 2 * math.pi * 3400.0


class TestEnsembleStats:
    def test_two_point_cloud(self):
        stats = ensemble_stats([PhaseVec(1.0, 0.0), PhaseVec(-1.0, 0.0)])
        assert stats.n == 2
        assert (stats.mean.q, stats.mean.p) == (0.0, 0.0)
        assert (stats.cov.qq, stats.cov.qp, stats.cov.pp) == (2.0, 0.0, 0.0)

    def test_recovers_known_gaussian(self):
        rng = aux_rng(77, k=9)
        true_cov = np.array([[2.0, 0.6], [0.6, 1.2]])
        pts = rng.multivariate_normal([1.5, -0.5], true_cov, size=100_000)
        stats = ensemble_stats(pts)
        n = stats.n
        assert stats.mean.q == pytest.approx(1.5, abs=4 * math.sqrt(2.0 / n))
        assert stats.mean.p == pytest.approx(-0.5, abs=4 * math.sqrt(1.2 / n))
        assert stats.cov.qq == pytest.approx(2.0, abs=4 * 2.0 * math.sqrt(2.0 / n))
        assert stats.cov.pp == pytest.approx(1.2, abs=4 * 1.2 * math.sqrt(2.0 / n))
        assert stats.cov.qp == pytest.approx(
            0.6, abs=4 * math.sqrt((2.0 * 1.2 + 0.36) / n)
        )

    def test_repeated_points_zero_covariance(self):
        stats = ensemble_stats([PhaseVec(0.3, 0.4)] * 5)
        assert (stats.cov.qq, stats.cov.qp, stats.cov.pp) == (0.0, 0.0, 0.0)

    def test_permutation_invariant(self):
        rng = aux_rng(5, k=9)
        pts = rng.standard_normal((500, 2))
        a = ensemble_stats(pts)
        b = ensemble_stats(pts[rng.permutation(500)])
        assert a.mean.q == pytest.approx(b.mean.q, abs=1e-12)
        assert a.cov.qq == pytest.approx(b.cov.qq, rel=1e-10)
        assert a.cov.qp == pytest.approx(b.cov.qp, abs=1e-12)

    def test_rejects_single_point(self):
        with pytest.raises(InsufficientDataError):
            ensemble_stats([PhaseVec(0.0, 0.0)])


class TestBootstrapCovSE:
    def test_deterministic_and_plausible(self):
        rng = aux_rng(3, k=9)
        pts = rng.standard_normal((5000, 2))
        a = bootstrap_cov_se(pts, master_seed=3)
        b = bootstrap_cov_se(pts, master_seed=3)
        assert a == b
        # asymptotic SE of unit-normal variance is sqrt(2/n)
        assert a.qq == pytest.approx(math.sqrt(2.0 / 5000), rel=0.25)


class TestFitSigmaFromGrowth:
    def setup_method(self):
        self.phases = (math.pi / 4, math.pi / 2, 3 * math.pi / 4, math.pi)

    def _mc_stats(self, r, sigma, cfg, shots, seed):
        marks = tuple(SampleMark(0, p) for p in self.phases)
        seq = JumpSequence((Segment(r, math.pi),), marks)
        recs = run_ensemble(
            cfg.initial_state(), seq, ForceModel(0.0, sigma), cfg,
            McConfig(shots=shots, steps_per_period=128, master_seed=seed),
        )
        return [
            (p, ensemble_stats(samples_array(recs, k)))
            for k, p in enumerate(self.phases)
        ]

    def test_closed_loop_recovery(self):
        cfg = OscillatorConfig(OMEGA, 0.0, 0.0)
        sigma = 0.07 * OMEGA
        stats = self._mc_stats(2.0, sigma, cfg, shots=10_000, seed=41)
        fit = fit_sigma_from_growth(stats, 2.0, cfg)
        assert fit.value == pytest.approx(sigma, rel=0.05)

    def test_zero_sigma_returns_zero_within_uncertainty(self):
        cfg = OscillatorConfig(OMEGA, 0.0, 0.3)
        stats = self._mc_stats(2.0, 0.0, cfg, shots=5000, seed=17)
        fit = fit_sigma_from_growth(stats, 2.0, cfg)
        assert fit.value <= 3.0 * fit.stderr

    def test_exact_on_forward_model(self):
        cfg = OscillatorConfig(OMEGA, GAMMA, 1.2)
        sigma = 0.4 * OMEGA
        from oscecho import heating_cov, shot_cov, transition_matrix

        entries = []
        for p in self.phases:
            phi = transition_matrix(1.7, p)
            cov = (
                CovMat.from_matrix(phi @ cfg.initial_state().cov.to_matrix() @ phi.T)
                + heating_cov(1.7, p, GAMMA, OMEGA)
                + shot_cov(sigma, 1.7, p, OMEGA)
            )
            entries.append((p, type(ensemble_stats([PhaseVec(0, 0)] * 2))(
                n=1000, mean=PhaseVec(0, 0), cov=cov)))
        fit = fit_sigma_from_growth(entries, 1.7, cfg)
        assert fit.value == pytest.approx(sigma, rel=1e-9)

    def test_paper_scale_consistency(self):
        # decoupling-leg geometry with the 22.7 aN / 1.2 fg force scale
        cfg = OscillatorConfig(OMEGA, GAMMA, 1.2)
        sigma = normalized_force(22.7e-18, 1.2e-18, OMEGA)
        rp = math.sqrt(2.5)
        stats = self._mc_stats(rp, sigma, cfg, shots=20_000, seed=99)
        fit = fit_sigma_from_growth(stats, rp, cfg)
        assert fit.value == pytest.approx(sigma, rel=0.1)
        back_to_si = fit.value * math.sqrt(1.054571817e-34 * 1.2e-18 * OMEGA / 2.0)
        assert back_to_si == pytest.approx(22.7e-18, rel=0.1)

    def test_unidentifiable_at_full_periods(self):
        cfg = OscillatorConfig(OMEGA, 0.0, 0.0)
        stats = [
            (2 * math.pi, ensemble_stats([PhaseVec(1, 0), PhaseVec(-1, 0)])),
            (4 * math.pi, ensemble_stats([PhaseVec(1, 0), PhaseVec(-1, 0)])),
        ]
        with pytest.raises(UnidentifiableError):
            fit_sigma_from_growth(stats, 2.0, cfg)

    def test_needs_two_phases(self):
        cfg = OscillatorConfig(OMEGA, 0.0, 0.0)
        with pytest.raises(InsufficientDataError):
            fit_sigma_from_growth(
                [(1.0, ensemble_stats([PhaseVec(1, 0), PhaseVec(-1, 0)]))], 2.0, cfg
            )


class TestSweepRprime:
    def setup_method(self):
        self.cfg = OscillatorConfig(OMEGA, GAMMA, 1.2)

    def test_analytic_displacement_dips_at_optimum(self):
        r = math.sqrt(10.0)
        grid = np.linspace(1.5, 3.2, 200)
        result = sweep_rprime(
            r, math.pi, grid, ForceModel(97.0 * OMEGA, 0.0), self.cfg
        )
        d = [row.d_norm for row in result.rows]
        best = result.rows[int(np.argmin(d))].r_prime
        assert abs(best - optimal_ratio(r)) <= grid[1] - grid[0]

    def test_analytic_vtot_dips_at_optimum(self):
        r = math.sqrt(10.0)
        grid = np.linspace(1.5, 3.2, 200)
        result = sweep_rprime(
            r, math.pi, grid, ForceModel(0.0, 4.7 * OMEGA), self.cfg
        )
        v = [row.v_tot for row in result.rows]
        best = result.rows[int(np.argmin(v))].r_prime
        assert abs(best - optimal_ratio(r)) <= grid[1] - grid[0]

    def test_trivial_flat_sweep(self):
        cfg = OscillatorConfig(OMEGA, 0.0, 0.9)
        grid = np.linspace(1.2, 2.5, 7)
        result = sweep_rprime(2.0, 1.3, grid, ForceModel(0.0, 0.0), cfg)
        expect = state_size(cfg.initial_state().cov)
        for row in result.rows:
            assert row.d_norm < 1e-12
            assert row.v_tot == pytest.approx(expect, rel=1e-12)

    def test_mc_backend_tracks_analytic(self):
        grid = np.linspace(1.3, 2.2, 5)
        force = ForceModel(2.0 * OMEGA, 1.0 * OMEGA)
        mc = McConfig(shots=4000, steps_per_period=128, master_seed=8)
        data = sweep_rprime(2.0, math.pi, grid, force, self.cfg, backend="mc", mc=mc)
        model = sweep_rprime(2.0, math.pi, grid, force, self.cfg)
        for got, want in zip(data.rows, model.rows):
            assert got.v_tot == pytest.approx(want.v_tot, rel=0.15)
            assert got.d_norm == pytest.approx(want.d_norm, rel=0.2, abs=0.3)

    def test_grid_validation(self):
        with pytest.raises(DomainError):
            sweep_rprime(2.0, math.pi, [1.5, 1.6], ForceModel(0, 0), self.cfg)
        with pytest.raises(DomainError):
            sweep_rprime(2.0, math.pi, [1.5, 1.6, 1.7], ForceModel(0, 0), self.cfg,
                         backend="mc")
        with pytest.raises(DomainError):
            sweep_rprime(2.0, math.pi, [1.5, 1.6, 1.7], ForceModel(0, 0), self.cfg,
                         backend="exact")


class TestFitF0FromDisplacement:
    def setup_method(self):
        self.cfg = OscillatorConfig(OMEGA, GAMMA, 1.2)
        self.r = 2.0
        self.grid = np.linspace(1.2, 2.0, 9)

    def _noiseless_rows(self, f0):
        rows = []
        for rp in self.grid:
            d = echo_mean(PhaseVec(0, 0), f0, EchoSpec(self.r, rp, math.pi), OMEGA)
            rows.append(SweepRow(rp, d.norm(), 1.0))
        return rows

    def test_exact_on_noiseless_data(self):
        f0 = 2.0 * OMEGA
        fit = fit_f0_from_displacement(self._noiseless_rows(f0), self.r, math.pi, self.cfg)
        assert fit.value == pytest.approx(f0, rel=1e-12)
        assert fit.stderr == pytest.approx(0.0, abs=1e-6)

    def test_magnitude_only(self):
        fit = fit_f0_from_displacement(
            self._noiseless_rows(-1.5 * OMEGA), self.r, math.pi, self.cfg
        )
        assert fit.value == pytest.approx(1.5 * OMEGA, rel=1e-12)

    def test_unidentifiable_at_optimum_only(self):
        rows = [SweepRow(optimal_ratio(self.r), 0.0, 1.0)]
        with pytest.raises(UnidentifiableError):
            fit_f0_from_displacement(rows, self.r, math.pi, self.cfg)

    def test_mc_closed_loop(self):
        f0 = 3.0 * OMEGA
        force = ForceModel(f0, 1.0 * OMEGA)
        mc = McConfig(shots=4000, steps_per_period=128, master_seed=21)
        sweep = sweep_rprime(self.r, math.pi, self.grid, force, self.cfg,
                             backend="mc", mc=mc)
        fit = fit_f0_from_displacement(sweep.rows, self.r, math.pi, self.cfg)
        assert fit.value == pytest.approx(f0, rel=0.05)


class TestFitSigmaFromVtot:
    def setup_method(self):
        self.cfg = OscillatorConfig(OMEGA, GAMMA, 1.2)
        self.cov0 = self.cfg.initial_state().cov
        self.r = math.sqrt(10.0)
        self.grid = np.linspace(1.5, 3.2, 13)

    def _noiseless_rows(self, sigma):
        rows = []
        for rp in self.grid:
            v = state_size(echo_cov(self.cov0, EchoSpec(self.r, rp, math.pi), self.cfg, sigma))
            rows.append(SweepRow(rp, 0.0, v))
        return rows

    def test_self_consistency_recovery(self):
        sigma = 0.02 * OMEGA
        fit = fit_sigma_from_vtot(
            self._noiseless_rows(sigma), self.r, math.pi, self.cfg, self.cov0
        )
        assert fit.value == pytest.approx(sigma, rel=1e-6)

    def test_zero_sigma_boundary_solution(self):
        fit = fit_sigma_from_vtot(
            self._noiseless_rows(0.0), self.r, math.pi, self.cfg, self.cov0
        )
        assert fit.value == pytest.approx(0.0, abs=1e-6 * OMEGA)

    def test_mc_closed_loop(self):
        sigma = 3.0 * OMEGA
        force = ForceModel(2.0 * OMEGA, sigma)
        mc = McConfig(shots=4000, steps_per_period=128, master_seed=33)
        sweep = sweep_rprime(self.r, math.pi, self.grid, force, self.cfg,
                             backend="mc", mc=mc)
        fit = fit_sigma_from_vtot(sweep.rows, self.r, math.pi, self.cfg, self.cov0)
        assert fit.value == pytest.approx(sigma, rel=0.10)

    def test_no_bracket_raises_with_diagnostics(self):
        rows = self._noiseless_rows(0.5 * OMEGA)
        with pytest.raises(FitFailureError, match="raise `upper`"):
            fit_sigma_from_vtot(
                rows, self.r, math.pi, self.cfg, self.cov0, upper=(0.001 * OMEGA) ** 2
            )

    def test_needs_two_rows(self):
        with pytest.raises(InsufficientDataError):
            fit_sigma_from_vtot(
                self._noiseless_rows(0.0)[:1], self.r, math.pi, self.cfg, self.cov0
            )


class TestClosedLoopUncertainties:
    def test_recovery_within_reported_errorbars(self):
        # forward-simulate at known parameters and demand the fits land
        # within 3x their own reported uncertainty
        cfg = OscillatorConfig(OMEGA, GAMMA, 1.2)
        f0_true, sigma_true = 4.0 * OMEGA, 2.0 * OMEGA
        grid = np.linspace(1.4, 2.6, 9)
        mc = McConfig(shots=6000, steps_per_period=128, master_seed=314159)
        sweep = sweep_rprime(
            2.0, math.pi, grid, ForceModel(f0_true, sigma_true), cfg,
            backend="mc", mc=mc,
        )
        fit_f0 = fit_f0_from_displacement(sweep.rows, 2.0, math.pi, cfg)
        fit_sigma = fit_sigma_from_vtot(
            sweep.rows, 2.0, math.pi, cfg, cfg.initial_state().cov
        )
        assert abs(fit_f0.value - f0_true) < 3.0 * fit_f0.stderr
        assert abs(fit_sigma.value - sigma_true) < 3.0 * fit_sigma.stderr
