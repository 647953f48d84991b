import json

import numpy as np
import pytest

from seqmc import dynamics, model, particles
from seqmc._util import stream
from seqmc.errors import ModelError


class TestInit:
    def test_single_particle(self, gauss5):
        st = particles.init_particles(gauss5, 1, seed=0)
        assert st.counts.sum() == 1
        assert st.log_weight == 0.0

    def test_point_mass_start(self):
        """A huge potential everywhere except one state concentrates the
        time-0 measure there."""
        direction = np.array([50.0, 50.0, 0.0, 50.0])
        fam = model.EvolvingFamily(
            space=model.StateSpace(labels=(0, 1, 2, 3)),
            base=np.full(4, 0.25),
            potential=model.CallablePotential(lambda t: direction, lambda t: np.zeros(4)),
            horizon=1.0,
        )
        st = particles.init_particles(fam, 64, seed=3)
        assert st.counts[2] == 64

    def test_matches_law(self):
        fam = model.tilt_family(np.array([0.0, 0.7, 1.4]), horizon=1.0)
        weights = model.measure_at(fam, 0.0).weights
        n_draws = 100_000
        st = particles.init_particles(fam, n_draws, seed=8)
        for x in range(3):
            se = np.sqrt(weights[x] * (1 - weights[x]) / n_draws)
            assert abs(st.counts[x] / n_draws - weights[x]) <= 3 * se

    def test_deterministic(self, gauss5):
        a = particles.init_particles(gauss5, 100, seed=5)
        b = particles.init_particles(gauss5, 100, seed=5)
        np.testing.assert_array_equal(a.counts, b.counts)

    def test_positions_view(self, gauss5):
        st = particles.init_particles(gauss5, 20, seed=1)
        pos = st.positions
        assert pos.shape == (20,)
        np.testing.assert_array_equal(np.bincount(pos, minlength=5), st.counts)


class TestSimulate:
    def test_flat_family_never_selects(self):
        fam = model.flat_family(4)
        gen = dynamics.metropolis(fam, dynamics.complete_proposal(4))
        st = particles.init_particles(fam, 80, seed=2)
        rec = particles.simulate(st, fam, gen, 1.0, np.linspace(0, 1, 5))
        assert rec.selection_counts[-1] == 0
        assert rec.log_weights[-1] == 0.0
        np.testing.assert_allclose(rec.reweighted(1.0).sum(), 1.0)

    def test_snapshots_normalized_and_quantized(self, gauss10, gauss10_generator):
        n = 64
        st = particles.init_particles(gauss10, n, seed=7)
        rec = particles.simulate(st, gauss10, gauss10_generator, 1.0, np.linspace(0, 1, 9))
        sums = rec.etas.sum(axis=1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)
        counts = rec.etas * n
        np.testing.assert_allclose(counts, np.round(counts), atol=1e-9)

    def test_bit_identical_given_seed(self, gauss10, gauss10_generator):
        grid = np.linspace(0, 1, 17)
        recs = []
        for _ in range(2):
            st = particles.init_particles(gauss10, 100, rng=stream(12, 101, 0))
            recs.append(particles.simulate(st, gauss10, gauss10_generator, 1.0, grid))
        a, b = recs
        np.testing.assert_array_equal(a.etas, b.etas)
        np.testing.assert_array_equal(a.log_weights, b.log_weights)
        np.testing.assert_array_equal(a.selection_counts, b.selection_counts)

    def test_single_particle_is_pure_markov(self):
        """N=1: no selection; the time-t law matches the transition matrix."""
        fam = model.moving_gaussian_family(
            0, 4, model.ScalarSchedule(1.5, 0.5), model.ScalarSchedule(1.2), horizon=1.0
        )
        gen = dynamics.metropolis(fam, dynamics.nearest_neighbor_proposal(fam.space))
        runs = 10_000
        hits = np.zeros(4)
        sel_total = 0
        for r in range(runs):
            st = particles.init_particles(fam, 1, rng=stream(99, 101, r))
            rec = particles.simulate(st, fam, gen, 1.0, [1.0])
            hits += rec.etas[-1]
            sel_total += rec.selection_counts[-1]
        assert sel_total == 0
        law = particles.markov_law(fam, gen, 1.0, [1.0])[-1]
        for x in range(4):
            se = np.sqrt(max(law[x] * (1 - law[x]), 1e-12) / runs)
            assert abs(hits[x] / runs - law[x]) <= 3.5 * se

    def test_reweighted_unbiased(self, gauss10, gauss10_generator):
        m = 400
        recs = particles.replicate_trajectories(gauss10, gauss10_generator, 150, 1.0, [0.0, 1.0], m, seed=21)
        mu1 = model.measure_at(gauss10, 1.0).weights
        f = np.arange(10.0)
        vals = np.array([r.reweighted(1.0) @ f for r in recs])
        se = vals.std(ddof=1) / np.sqrt(m)
        assert abs(vals.mean() - mu1 @ f) <= 3 * se
        ones = np.array([r.reweighted(1.0).sum() for r in recs])
        assert abs(ones.mean() - 1.0) <= 3 * ones.std(ddof=1) / np.sqrt(m)

    def test_unit_mass_equals_exp_weight(self, gauss5, gauss5_generator):
        st = particles.init_particles(gauss5, 30, seed=4)
        rec = particles.simulate(st, gauss5, gauss5_generator, 1.0, [0.5, 1.0])
        assert rec.reweighted(0.5).sum() == pytest.approx(np.exp(rec.log_weight(0.5)), rel=1e-12)

    def test_selection_rate_audit(self, gauss10, gauss10_generator):
        """Accepted selection events per unit time match the snapshot-average
        of the pair-rate sum within 3 SE."""
        m = 300
        grid = np.linspace(0.0, 1.0, 33)
        recs = particles.replicate_trajectories(gauss10, gauss10_generator, 100, 1.0, grid, m, seed=31)
        n_particles = 100
        counts = np.array([r.selection_counts[-1] for r in recs], dtype=float)
        from seqmc._util import trapezoid_weights

        w = trapezoid_weights(grid)
        expected = np.empty(m)
        for i, r in enumerate(recs):
            rates = []
            for k, s in enumerate(grid):
                h = model.centered_rate(gauss10, float(s))
                c = r.etas[k] * n_particles
                gap = np.maximum(h[:, None] - h[None, :], 0.0)
                rates.append(float((c[:, None] * c[None, :] * gap).sum()) / n_particles)
            expected[i] = np.asarray(rates) @ w
        diff = counts - expected
        se = diff.std(ddof=1) / np.sqrt(m)
        assert abs(diff.mean()) <= 3 * se

    def test_rejects_bad_grid(self, gauss5, gauss5_generator):
        st = particles.init_particles(gauss5, 10, seed=0)
        with pytest.raises(ModelError):
            particles.simulate(st, gauss5, gauss5_generator, 0.5, [0.9])

    def test_jsonl_dump(self, gauss5, gauss5_generator):
        st = particles.init_particles(gauss5, 10, seed=0)
        rec = particles.simulate(st, gauss5, gauss5_generator, 1.0, [0.0, 1.0])
        lines = rec.to_jsonl().strip().split("\n")
        assert len(lines) == 2
        row = json.loads(lines[0])
        assert set(row) == {"t", "eta", "logW", "events"}
        assert set(row["events"]) == {"mut", "sel"}

    def test_off_grid_lookup_raises(self, gauss5, gauss5_generator):
        st = particles.init_particles(gauss5, 10, seed=0)
        rec = particles.simulate(st, gauss5, gauss5_generator, 1.0, [0.0, 1.0])
        with pytest.raises(KeyError):
            rec.reweighted(0.33)


class TestGeneratorAction:
    def test_constant_function(self, gauss10, gauss10_generator):
        st = particles.init_particles(gauss10, 25, seed=14)
        chk = particles.generator_action_check(st.positions, gauss10, gauss10_generator, 0.4, np.full(10, 2.0))
        assert chk.drift_raw == pytest.approx(0.0, abs=1e-14)
        assert chk.gamma_raw == pytest.approx(0.0, abs=1e-14)
        assert chk.drift_closed == pytest.approx(0.0, abs=1e-13)

    def test_constant_rate_reduces_to_mutation(self):
        fam = model.flat_family(5)
        gen = dynamics.metropolis(fam, dynamics.complete_proposal(5))
        rng = stream(41, 0)
        pos = rng.integers(0, 5, size=30)
        f = rng.standard_normal(5)
        chk = particles.generator_action_check(pos, fam, gen, 0.2, f)
        eta = np.bincount(pos, minlength=5) / 30
        expected = float((gen.rates(0.2) @ f) @ eta)
        assert chk.drift_raw == pytest.approx(expected, abs=1e-12)
        assert chk.drift_closed == pytest.approx(expected, abs=1e-12)

    def test_random_agreement(self, gauss10, gauss10_generator):
        rng = stream(51, 0)
        n_particles = 40
        for _ in range(100):
            pos = rng.integers(0, 10, size=n_particles)
            f = rng.standard_normal(10)
            t = float(rng.uniform(0, 1))
            chk = particles.generator_action_check(pos, gauss10, gauss10_generator, t, f)
            assert chk.drift_gap <= 1e-12 * n_particles
            assert chk.gamma_gap <= 1e-12 * n_particles


class TestIndependentBaseline:
    def test_flat_family_matches_interacting_law(self):
        fam = model.flat_family(3)
        gen = dynamics.metropolis(fam, dynamics.complete_proposal(3))
        rec, law = particles.independent_baseline(fam, gen, 2000, 1.0, 5, [1.0])
        np.testing.assert_allclose(law[-1], fam.base, atol=1e-9)

    def test_matches_markov_law(self, gauss10, gauss10_generator):
        rec, law = particles.independent_baseline(gauss10, gauss10_generator, 10_000, 1.0, 6, [1.0])
        eta = rec.eta(1.0)
        for x in range(10):
            se = np.sqrt(max(law[-1][x] * (1 - law[-1][x]), 1e-12) / 10_000)
            assert abs(eta[x] - law[-1][x]) <= 3.5 * se

    def test_two_block_bias_sign(self):
        """Mass shifting between disconnected blocks: the baseline stays at
        the initial block masses while the true measure moves."""
        fam = model.two_block_family([2, 2], 1.5, horizon=1.0)
        gen = dynamics.metropolis(fam, dynamics.nearest_neighbor_proposal(fam.space))
        rec, law = particles.independent_baseline(fam, gen, 400, 1.0, 17, [1.0])
        f = np.array([1.0, 1.0, 0.0, 0.0])
        bias = float(f @ law[-1]) - float(f @ model.measure_at(fam, 1.0).weights)
        assert bias < -0.2  # baseline badly under-weights the growing block
