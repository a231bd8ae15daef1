"""Tracer Monte Carlo against closed forms and matrix-exponential oracles.

The frozen-field mass chain is small enough to solve exactly: its generator
is built here, independently of the package, from the transition rules
(attempt rate 2*alpha(n,m)*f_n, survival probability m/(n+m)), and expm of
that generator provides the expected occupation law for 3-sigma tests.
"""

import numpy as np
import pytest
import scipy.linalg
import scipy.stats

from smolkit.diffusion import heat_step
from smolkit.field import Grid, MassField, MomentSpec, moment
from smolkit.kernels import DiffusionProfile, Kernel
from smolkit.tracer import (
    CEMETERY,
    TracerEnsemble,
    TracerState,
    density_consistency,
    evolve_frozen,
    sample_initial,
    simulate,
)


def frozen_chain_law(conc, kernel, m0, t, n_top):
    """Occupation law of the frozen-field mass chain at time t.

    States are masses 1..n_top plus cemetery (index n_top); masses that
    would exceed n_top are lumped into the cemetery, so choose n_top large
    enough that the lumped probability is negligible for the test.
    """
    G = np.zeros((n_top + 1, n_top + 1))
    for m in range(1, n_top + 1):
        for n in range(1, conc.size + 1):
            rate = 2.0 * kernel.eval(n, m) * conc[n - 1]
            if rate == 0.0:
                continue
            target = m + n
            win = m / (m + n)
            if target <= n_top:
                G[m - 1, target - 1] += rate * win
                G[m - 1, n_top] += rate * (1 - win)
            else:
                G[m - 1, n_top] += rate
            G[m - 1, m - 1] -= rate
    p0 = np.zeros(n_top + 1)
    p0[m0 - 1] = 1.0
    return p0 @ scipy.linalg.expm(G * t)


@pytest.fixture
def uniform_field():
    grid = Grid(1, 1.0, 8)
    F = MassField.zeros(grid, 4)
    F.data[0] = 0.8
    return F


class TestSampleInitial:
    def test_monodisperse_always_mass_one(self, uniform_field):
        rng = np.random.default_rng(0)
        for _ in range(50):
            assert sample_initial(uniform_field, rng).mass == 1

    def test_mass_law_follows_number_integrals(self):
        """Number integrals 1 and 3 give P(mass 2) = 3/4."""
        grid = Grid(1, 1.0, 8)
        F = MassField.zeros(grid, 2)
        F.data[0] = 1.0
        F.data[1] = 3.0
        rng = np.random.default_rng(1)
        n = 40000
        hits = sum(sample_initial(F, rng).mass == 2 for _ in range(n))
        p = hits / n
        assert abs(p - 0.75) <= 3 * np.sqrt(0.75 * 0.25 / n)

    def test_concentrated_species_fixes_position(self):
        grid = Grid(1, 1.0, 16)
        F = MassField.zeros(grid, 1)
        F.data[0, 5] = 2.0
        rng = np.random.default_rng(2)
        for _ in range(30):
            z = sample_initial(F, rng)
            assert 5 * grid.h <= z.position[0] < 6 * grid.h

    def test_empty_field_rejected(self):
        grid = Grid(1, 1.0, 8)
        F = MassField.zeros(grid, 2)
        with pytest.raises(ValueError, match="empty"):
            sample_initial(F, np.random.default_rng(0))


class TestEvolveFrozen:
    def test_cemetery_is_absorbing(self, uniform_field):
        dp = DiffusionProfile.constant(0.1, 4)
        k = Kernel.constant(1.0, 4)
        out = evolve_frozen(CEMETERY, uniform_field, k, dp, 0.5, np.random.default_rng(0))
        assert out is CEMETERY

    def test_no_kernel_is_brownian_motion(self):
        """alpha = 0: displacements over one call are exactly N(0, 2 d t)
        per coordinate (wrap negligible for small d*t); KS at 1e5 samples."""
        grid = Grid(1, 1.0, 32)
        F = MassField.monodisperse(grid, 2)
        k = Kernel.constant(0.0, 2)
        d, t = 0.004, 0.5
        dp = DiffusionProfile.constant(d, 2)
        rng = np.random.default_rng(3)
        start = TracerState((0.5,), 1)
        disp = np.empty(100000)
        for i in range(disp.size):
            z = evolve_frozen(start, F, k, dp, t, rng)
            disp[i] = grid.min_image(z.position[0] - 0.5)
        stat = scipy.stats.kstest(disp, scipy.stats.norm(scale=np.sqrt(2 * d * t)).cdf)
        assert stat.pvalue > 1e-3

    def test_two_state_closed_form(self):
        """f1 = c frozen, alpha(1,1) = gamma only: survival in mass 1 decays
        at the tagged-particle rate 2*gamma*c; the other half of attempts
        splits evenly between mass 2 and the cemetery."""
        gamma, c, t = 1.3, 0.8, 0.7
        grid = Grid(1, 1.0, 4)
        F = MassField.zeros(grid, 2)
        F.data[0] = c
        k = Kernel.from_function(lambda n, m: gamma if n == m == 1 else 0.0, 2)
        dp = DiffusionProfile.constant(0.1, 2)
        rng = np.random.default_rng(4)
        n = 20000
        counts = {1: 0, 2: 0, "cem": 0}
        for _ in range(n):
            z = evolve_frozen(TracerState((0.5,), 1), F, k, dp, t, rng)
            counts["cem" if z is CEMETERY else z.mass] += 1
        p1 = np.exp(-2 * gamma * c * t)
        expected = {1: p1, 2: 0.5 * (1 - p1), "cem": 0.5 * (1 - p1)}
        for key, p in expected.items():
            se = np.sqrt(p * (1 - p) / n)
            assert abs(counts[key] / n - p) <= 3 * se, key

    def test_immortal_never_dies(self, uniform_field):
        k = Kernel.constant(5.0, 4)
        dp = DiffusionProfile.constant(0.1, 4)
        rng = np.random.default_rng(5)
        for _ in range(200):
            z = evolve_frozen(TracerState((0.3,), 1), uniform_field, k, dp, 1.0, rng, immortal=True)
            assert z is not CEMETERY


class TestSimulate:
    def test_seed_reproducibility(self, uniform_field):
        k = Kernel.constant(1.0, 4)
        dp = DiffusionProfile.constant(0.05, 4)
        outs = []
        for _ in range(2):
            ens = TracerEnsemble(count=5000, seed=99)
            outs.append(simulate([uniform_field] * 4, k, dp, ens, 0.05, histogram_times=[0.2]))
        np.testing.assert_array_equal(outs[0].histograms[0].counts, outs[1].histograms[0].counts)

    @pytest.mark.parametrize("workers", [2, 8])
    def test_worker_count_does_not_change_results(self, uniform_field, workers):
        k = Kernel.constant(1.0, 4)
        dp = DiffusionProfile.constant(0.05, 4)
        ref = simulate([uniform_field] * 4, k, dp, TracerEnsemble(count=20000, seed=5), 0.05, workers=1)
        par = simulate([uniform_field] * 4, k, dp, TracerEnsemble(count=20000, seed=5), 0.05, workers=workers)
        for a, b in zip(ref.histograms, par.histograms):
            np.testing.assert_array_equal(a.counts, b.counts)
            np.testing.assert_array_equal(a.overflow, b.overflow)
            assert a.cemetery == b.cemetery

    def test_cemetery_monotone_in_time(self, uniform_field):
        k = Kernel.constant(2.0, 4)
        dp = DiffusionProfile.constant(0.05, 4)
        times = [0.05 * i for i in range(5)]
        ens = TracerEnsemble(count=20000, seed=6)
        out = simulate([uniform_field] * 4, k, dp, ens, 0.05, histogram_times=times)
        cem = [h.cemetery for h in out.histograms]
        assert cem == sorted(cem)

    def test_histogram_rows_sum_to_count(self, uniform_field):
        k = Kernel.constant(1.0, 4)
        dp = DiffusionProfile.constant(0.05, 4)
        ens = TracerEnsemble(count=12345, seed=7)
        out = simulate([uniform_field] * 3, k, dp, ens, 0.05, histogram_times=[0.15])
        h = out.histograms[0]
        assert h.counts.sum() + h.overflow.sum() + h.cemetery == h.total == 12345

    def test_mass_weighted_survival_matches_chain(self):
        """E[m 1(alive)] against the matrix-exponential law of the frozen
        chain, within 3 Monte Carlo sigma.

        Only species 1..3 carry density, but the field range is kept wide
        so every reachable tracer mass stays inside the histogram rows; the
        chain oracle lumps masses beyond n_top into the cemetery, which is
        negligible at this horizon.
        """
        grid = Grid(1, 1.0, 4)
        n_max = 32
        F = MassField.zeros(grid, n_max)
        F.data[0] = 0.6
        F.data[1] = 0.3
        F.data[2] = 0.1
        k = Kernel.sum_kernel(0.4, n_max)
        dp = DiffusionProfile.constant(0.05, n_max)
        t, slices = 0.5, 10
        ens = TracerEnsemble(count=60000, seed=8)
        out = simulate([F] * slices, k, dp, ens, t / slices, histogram_times=[t])
        h = out.histograms[0]
        assert h.overflow.sum() == 0
        emp_per_traj = (np.arange(1, n_max + 1) @ h.counts).sum() / h.total
        n_top = 64
        conc = F.flat()[:, 0]
        integrals = F.species_integrals()
        probs = integrals / integrals.sum()
        oracle_kernel = Kernel.sum_kernel(0.4, n_top)
        law = sum(
            p * frozen_chain_law(conc, oracle_kernel, m0, t, n_top)
            for m0, p in enumerate(probs[:3], start=1)
        )
        expect = float(np.arange(1, n_top + 1) @ law[:n_top])
        second = float((np.arange(1, n_top + 1) ** 2) @ law[:n_top])
        sigma = np.sqrt(max(second - expect**2, 0.0) / h.total)
        assert abs(emp_per_traj - expect) <= 3 * sigma

    def test_overflow_masses_are_binned_separately(self):
        """A dense fast kernel pushes tracers past n_max quickly; they must
        land in the overflow row, not vanish."""
        grid = Grid(1, 1.0, 4)
        F = MassField.zeros(grid, 2)
        F.data[:] = 4.0
        k = Kernel.constant(3.0, 2)
        dp = DiffusionProfile.constant(0.05, 2)
        ens = TracerEnsemble(count=4000, seed=9, immortal=True)
        out = simulate([F] * 6, k, dp, ens, 0.25, histogram_times=[1.5])
        h = out.histograms[0]
        assert h.overflow.sum() > 0
        assert h.cemetery == 0
        assert h.counts.sum() + h.overflow.sum() == h.total

    def test_histogram_times_must_hit_boundaries(self, uniform_field):
        k = Kernel.constant(1.0, 4)
        dp = DiffusionProfile.constant(0.05, 4)
        with pytest.raises(ValueError, match="boundary"):
            simulate([uniform_field] * 4, k, dp, TracerEnsemble(count=10, seed=0), 0.05,
                     histogram_times=[0.07])


class TestDensityConsistency:
    def _mc_noise_tv(self, model_p, count):
        p = model_p[model_p > 0]
        return 0.5 * np.sqrt(2.0 / (np.pi * count)) * np.sqrt(p * (1 - p)).sum() * 2.0

    def test_time_zero_is_pure_sampling_noise(self):
        grid = Grid(1, 1.0, 16)
        F = MassField.zeros(grid, 3)
        F.data[0] = 1.0
        F.data[1] = 0.5
        k = Kernel.constant(0.0, 3)
        dp = DiffusionProfile.constant(0.05, 3)
        ens = TracerEnsemble(count=50000, seed=10)
        out = simulate([F], k, dp, ens, 0.1, histogram_times=[0.0])
        m0 = float(sum(F.species_integrals()))
        rep = density_consistency(out.histograms[0], F, m0)
        model_p = F.flat() * grid.cell_volume / m0
        assert rep.tv_distance <= 3 * self._mc_noise_tv(model_p, 50000)
        assert rep.max_abs_z <= 4.0

    def test_pure_diffusion_matches_heat_evolution(self):
        """alpha = 0: each species' empirical density follows its own heat
        flow of the initial data."""
        grid = Grid(1, 1.0, 16)
        n_max = 2
        F = MassField.zeros(grid, n_max)
        x = grid.cell_centers()
        F.data[0] = 1.0 + 0.9 * np.cos(2 * np.pi * x)
        F.data[1] = 0.25
        k = Kernel.constant(0.0, n_max)
        d = 0.02
        dp = DiffusionProfile.constant(d, n_max)
        t, slices = 0.4, 8
        ens = TracerEnsemble(count=120000, seed=11)
        out = simulate([F] * slices, k, dp, ens, t / slices, histogram_times=[t])
        evolved = MassField(grid, np.stack([heat_step(F.data[i], d, t, grid) for i in range(n_max)]))
        m0 = float(sum(F.species_integrals()))
        rep = density_consistency(out.histograms[0], evolved, m0)
        assert rep.max_abs_z <= 4.0
        assert rep.tv_distance <= 0.02

    def test_focusing_bound_never_beaten_beyond_noise(self):
        """The mass-transition mechanism cannot focus the weighted empirical
        density above the fastest-rate heat flow: for non-increasing d and
        weight m^a, the envelope constant is d(1)^(d/2)/min_m m^(1-a) d(m)^(d/2)."""
        grid = Grid(1, 1.0, 16)
        n_max = 8
        a = 0.5
        F = MassField.gaussian_blob(grid, n_max, amplitude=2.0, width=0.1)
        k = Kernel.constant(0.6, n_max)
        dp = DiffusionProfile.power_law(0.05, 0.3, n_max)
        t, slices = 0.3, 6
        ens = TracerEnsemble(count=100000, seed=12)
        out = simulate([F] * slices, k, dp, ens, t / slices, histogram_times=[t])
        h = out.histograms[0]
        m0 = float(sum(F.species_integrals()))
        weights = np.arange(1, n_max + 1) ** a * m0 / (h.total * grid.cell_volume)
        emp = weights @ h.counts
        sigma = np.sqrt(weights**2 @ h.counts)
        u = heat_step(moment(F, MomentSpec(1.0)), dp.value(1), t, grid)
        masses = np.arange(1, 4 * n_max + 1)
        envelope = dp.value(1) ** 0.5 / (masses ** (1 - a) * dp.value(masses) ** 0.5).min()
        assert np.all(emp <= envelope * u + 3 * sigma + 1e-12)
