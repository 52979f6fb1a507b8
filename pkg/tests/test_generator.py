import numpy as np
import pytest

from morphogen import generator, network
from morphogen.errors import NonFiniteImage
from morphogen.generator import ConvergenceConfig, GenerationTrajectory, SeedConfig
from morphogen.network import ArchConfig

SMALL_ARCH = ArchConfig(coder_layers=((4, 5, 1), (8, 5, 1), (8, 5, 1)), rng_seed=1)


@pytest.fixture(scope="module")
def params():
    return network.init_params(ArchConfig(rng_seed=17))


class TestSampleSeed:
    def test_bernoulli_on_fraction(self):
        cfg = SeedConfig(distribution="bernoulli", bernoulli_on_probability=0.1, rng_seed=5)
        fractions = [generator.sample_seed(cfg, i).mean() for i in range(100)]
        assert abs(np.mean(fractions) - 0.1) < 0.04

    def test_bernoulli_values_binary(self):
        cfg = SeedConfig(rng_seed=3)
        seed = generator.sample_seed(cfg, 0)
        assert set(np.unique(seed)) <= {0.0, 1.0}

    def test_deterministic_per_index(self):
        cfg = SeedConfig(rng_seed=9)
        a = generator.sample_seed(cfg, 4)
        b = generator.sample_seed(cfg, 4)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, generator.sample_seed(cfg, 5))

    def test_uniform_in_unit_interval(self):
        cfg = SeedConfig(distribution="uniform", rng_seed=2)
        seed = generator.sample_seed(cfg, 0)
        assert seed.shape == (28, 28)
        assert seed.min() >= 0.0 and seed.max() <= 1.0
        assert len(np.unique(seed)) > 100  # continuous draws

    def test_bad_config(self):
        with pytest.raises(ValueError):
            generator.sample_seed(SeedConfig(distribution="gaussian"), 0)
        with pytest.raises(ValueError):
            generator.sample_seed(SeedConfig(bernoulli_on_probability=0.0), 0)


class TestIterate:
    def test_fixed_point_converges_in_one_iteration(self, params):
        # zero image with zero biases is an exact fixed point
        traj = generator.iterate(params, np.zeros((28, 28)), ConvergenceConfig())
        assert traj.converged
        assert traj.iterations == 1
        assert traj.step_distances == [0.0]
        assert len(traj.steps) == 2

    def test_max_iterations_one(self, params):
        x0 = generator.sample_seed(SeedConfig(rng_seed=1), 0)
        traj = generator.iterate(params, x0, ConvergenceConfig(max_iterations=1))
        assert len(traj.steps) == 2
        assert traj.iterations == 1
        np.testing.assert_array_equal(traj.steps[0], x0)

    def test_iterates_clamped(self, params):
        x0 = generator.sample_seed(SeedConfig(rng_seed=2), 1)
        traj = generator.iterate(params, x0, ConvergenceConfig(max_iterations=5))
        for step in traj.steps:
            assert step.min() >= 0.0 and step.max() <= 1.0

    def test_converged_iff_last_step_below_tolerance(self, params):
        cfg = ConvergenceConfig(tolerance=1e-6, max_iterations=40)
        for idx in range(5):
            x0 = generator.sample_seed(SeedConfig(rng_seed=30), idx)
            traj = generator.iterate(params, x0, cfg)
            below = traj.step_distances[-1] / 784 < cfg.tolerance
            assert traj.converged == below
            assert traj.iterations == len(traj.step_distances) <= cfg.max_iterations

    def test_non_finite_flagged(self):
        p = network.init_params(SMALL_ARCH)
        p.decoder_filter[:] = np.inf
        x0 = np.ones((12, 12))
        with pytest.raises(NonFiniteImage) as err:
            generator.iterate(p, x0, ConvergenceConfig())
        assert isinstance(err.value.trajectory, GenerationTrajectory)
        assert not err.value.trajectory.converged


class TestGenerateBatch:
    def test_n_one_reduces_to_iterate_plus_encode(self, params):
        seed_cfg = SeedConfig(rng_seed=4)
        conv_cfg = ConvergenceConfig(max_iterations=8)
        gset = generator.generate_batch(params, 1, seed_cfg, conv_cfg)
        traj = generator.iterate(params, generator.sample_seed(seed_cfg, 0), conv_cfg)
        item = gset.items[0]
        np.testing.assert_array_equal(item.final, traj.final)
        np.testing.assert_allclose(
            item.code, network.encode(params, traj.final).ravel().astype(np.float32)
        )

    def test_deterministic(self, params):
        seed_cfg = SeedConfig(rng_seed=10)
        conv_cfg = ConvergenceConfig(max_iterations=5)
        a = generator.generate_batch(params, 3, seed_cfg, conv_cfg)
        b = generator.generate_batch(params, 3, seed_cfg, conv_cfg)
        for x, y in zip(a.items, b.items):
            np.testing.assert_array_equal(x.final, y.final)
            assert x.iterations == y.iterations

    def test_checksum_stamped(self, params):
        gset = generator.generate_batch(
            params, 1, SeedConfig(rng_seed=0), ConvergenceConfig(max_iterations=2)
        )
        assert gset.model_checksum == network.checkpoint_checksum(params)

    def test_save_load_round_trip(self, params, tmp_path):
        gset = generator.generate_batch(
            params, 4, SeedConfig(rng_seed=6), ConvergenceConfig(max_iterations=4)
        )
        generator.save_generated_set(gset, tmp_path)
        back = generator.load_generated_set(tmp_path)
        assert back.model_checksum == gset.model_checksum
        assert len(back.items) == 4
        for a, b in zip(gset.items, back.items):
            assert a.converged == b.converged and a.iterations == b.iterations
            # finals round-trip through 8-bit PGM quantization
            assert np.abs(a.final - b.final).max() <= 1.0 / 255.0 + 1e-12
            np.testing.assert_array_equal(a.code, b.code)
