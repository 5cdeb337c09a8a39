import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdegen.pde_lab import (RANGES, SYSTEMS, InitialConditionSpec, PdeParams, StabilityError,
                            build_dataset, default_sim, gaussian_sum, generate_dataset, grid_1d,
                            grid_2d, read_container, sample_initial_condition, sample_params, solve,
                            spectral_vorticity, subsample_grid, subsample_indices, trig_sum,
                            vorticity_amplitude, wave_energy)
from pdegen.pde_lab.initial import energy_spectrum, sample_gaussian_spec, sample_trig_spec
from pdegen.pde_lab.solvers import solve_gray_scott, solve_wave


def rel_l2(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


class TestParams:
    @settings(max_examples=50, deadline=None)
    @given(st.sampled_from(SYSTEMS), st.sampled_from(["InD", "OutD"]), st.integers(0, 2 ** 32 - 1))
    def test_draws_inside_ranges(self, system, regime, seed):
        p = sample_params(system, regime, np.random.default_rng(seed))
        for name, intervals in RANGES[system][regime].items():
            assert any(a <= p[name] <= b for a, b in intervals)

    def test_advection_outd_avoids_ind(self):
        rng = np.random.default_rng(0)
        alphas = np.array([sample_params("Advection", "OutD", rng)["alpha"] for _ in range(2000)])
        assert np.all(np.abs(alphas) >= 5.0) and np.all(np.abs(alphas) <= 7.0)
        # both branches of the union are used, in roughly equal share
        assert 0.4 < np.mean(alphas > 0) < 0.6

    def test_documented_ranges(self):
        rng = np.random.default_rng(1)
        assert -5 <= sample_params("Advection", "InD", rng)["alpha"] <= 5
        assert 1e-5 <= sample_params("Vorticity", "OutD", rng)["nu"] <= 1e-4

    def test_gray_scott_diffusivities(self):
        p = sample_params("GrayScott", "InD", np.random.default_rng(2))
        assert p["D_u"] == 0.102 and p["D_v"] == 0.204

    def test_unknown_system_or_regime(self):
        with pytest.raises(ValueError):
            sample_params("Burgers", "InD", np.random.default_rng(0))
        with pytest.raises(ValueError):
            sample_params("Advection", "Mid", np.random.default_rng(0))

    def test_line_roundtrip(self):
        p = PdeParams("Combined", {"alpha": 0.4, "beta": 0.01, "gamma": 0.3})
        assert PdeParams.from_lines(p.to_lines()) == p


class TestInitialConditions:
    def test_single_sine(self):
        x = grid_1d(128, 1.0)
        spec = InitialConditionSpec("sine-sum", np.array([0.5]), np.array([0.0]), np.array([1]))
        assert np.allclose(trig_sum(spec, x, 1.0), 0.5 * np.sin(2 * np.pi * x), atol=1e-15)

    def test_gaussian_peak(self):
        g = grid_2d(64, 1.0)
        spec = InitialConditionSpec("gaussian-sum", centers=np.array([[0.5, 0.5]]), widths=np.array([0.1]))
        u = gaussian_sum(spec, g, 1.0)
        assert u[32, 32] == 1.0
        assert u.max() == 1.0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_spec_ranges(self, seed):
        rng = np.random.default_rng(seed)
        t = sample_trig_spec(rng, "sine+cosine-sum")
        assert np.all(np.abs(t.amplitudes) <= 0.5)
        assert np.all((t.phases >= 0) & (t.phases <= 2 * np.pi))
        assert set(t.freqs.tolist()) <= {1, 2, 3}
        g = sample_gaussian_spec(rng)
        assert g.n_components in (2, 3, 4)
        assert np.all((g.widths >= 0.025) & (g.widths <= 0.1))

    def test_vorticity_radial_spectrum(self):
        n, length, k0 = 64, 2 * np.pi, 4.0
        w = spectral_vorticity(n, length, k0, np.random.default_rng(3))
        k = np.fft.fftfreq(n, d=length / n) * 2 * np.pi
        kmag = np.sqrt(k[:, None] ** 2 + k[None, :] ** 2)
        # independent evaluation of sqrt(E(k) / (pi k)) with E(k) ~ (k/k0)^4 exp(-(k/k0)^2)
        E = 4.0 / 3.0 * np.sqrt(np.pi) * (kmag / k0) ** 4 / k0 * np.exp(-(kmag / k0) ** 2)
        expected = np.where(kmag > 0, np.sqrt(E / (np.pi * np.where(kmag > 0, kmag, 1))), 0.0)
        measured = np.abs(np.fft.fft2(w)) / (n * n)
        assert np.allclose(measured, expected, atol=1e-12)
        assert np.allclose(vorticity_amplitude(kmag, k0), expected)
        assert np.isreal(w).all()

    def test_wrong_dimension_rejected(self):
        with pytest.raises(ValueError):
            sample_initial_condition("Advection", np.random.default_rng(0), grid_2d(8, 1.0), 1.0)
        with pytest.raises(ValueError):
            sample_initial_condition("Wave", np.random.default_rng(0), grid_1d(8, 1.0), 1.0)

    def test_gray_scott_state(self):
        ic = sample_initial_condition("GrayScott", np.random.default_rng(0), grid_2d(32, 64.0), 64.0)
        assert ic.shape == (32, 32, 2)
        patch = ic[12:20, 12:20]
        assert np.all(np.abs(patch[..., 0] - 0.5) <= 0.01)
        assert np.all((patch[..., 1] >= 0.25) & (patch[..., 1] <= 0.26))
        assert np.all(np.abs(ic[:4, :4, 0] - 1.0) <= 0.01)


class TestSolvers:
    def test_advection_single_mode(self):
        x = grid_1d(128, 1.0)
        out = solve(PdeParams("Advection", {"alpha": 1.0}), np.sin(2 * np.pi * x)[:, None], 11, 0.05)
        assert rel_l2(out[10, :, 0], np.sin(2 * np.pi * (x - 0.5))) < 1e-6

    def test_advection_characteristics_oracle(self):
        rng = np.random.default_rng(4)
        x = grid_1d(128, 1.0)
        for _ in range(20):
            spec = sample_trig_spec(rng, ["sine-sum", "cosine-sum", "sine+cosine-sum"][rng.integers(3)])
            alpha = rng.uniform(-7, 7)
            out = solve(PdeParams("Advection", {"alpha": alpha}), trig_sum(spec, x, 1.0)[:, None], 20, 0.05)
            for t in (1, 7, 19):
                exact = trig_sum(spec, np.mod(x - alpha * 0.05 * t, 1.0), 1.0)
                assert rel_l2(out[t, :, 0], exact) < 1e-6

    @pytest.mark.parametrize("m", [1, 3, 7])
    def test_combined_heat_decay(self, m):
        beta, dt = 0.2, 0.01
        x = grid_1d(128, 2 * np.pi)
        u0 = np.sin(m * x)[:, None]
        out = solve(PdeParams("Combined", {"alpha": 0.0, "beta": beta, "gamma": 0.0}), u0, 21, dt)
        for t in (1, 10, 20):
            amp = 2 * np.abs(np.fft.rfft(out[t, :, 0])[m]) / 128
            assert abs(amp / math.exp(-beta * m * m * dt * t) - 1) < 1e-3

    def test_combined_dispersion_keeps_modulus(self):
        x = grid_1d(64, 2 * np.pi)
        out = solve(PdeParams("Combined", {"alpha": 0.0, "beta": 0.0, "gamma": 0.5}),
                    np.cos(2 * x)[:, None], 10, 0.05)
        assert np.allclose(np.linalg.norm(out[:, :, 0], axis=1), np.linalg.norm(out[0, :, 0]), rtol=1e-10)

    def test_gray_scott_fixed_point(self):
        s0 = np.stack([np.ones((32, 32)), np.zeros((32, 32))], -1)
        p = PdeParams("GrayScott", {"F": 0.03, "k": 0.06})
        out = solve_gray_scott(p, s0, 101, 1.0, dx=2.0, h=1.0)
        assert np.array_equal(out[-1], s0)
        assert np.array_equal(out, np.broadcast_to(s0, out.shape))

    def test_gray_scott_stays_bounded(self):
        ic = sample_initial_condition("GrayScott", np.random.default_rng(5), grid_2d(32, 64.0), 64.0)
        out = solve(PdeParams("GrayScott", {"F": 0.04, "k": 0.06}), ic, 20, 100.0)
        assert np.all(np.isfinite(out))
        assert out[..., 1].min() >= 0.0
        assert out.max() < 2.0

    def test_gray_scott_unstable_step(self):
        p = PdeParams("GrayScott", {"F": 0.04, "k": 0.06})
        with pytest.raises(StabilityError):
            solve_gray_scott(p, np.ones((8, 8, 2)), 3, 10.0, dx=2.0, h=10.0)

    def test_wave_energy_drift(self):
        n, c = 64, 100.0
        dx = 1.0 / n
        h = 5e-5                                     # below 0.9 dx / (c sqrt 2)
        g = grid_2d(n, 1.0)
        spec = InitialConditionSpec("gaussian-sum", centers=np.array([[0.3, 0.6], [0.7, 0.4]]),
                                    widths=np.array([0.05, 0.08]))
        w0 = gaussian_sum(spec, g, 1.0)[..., None]
        out = solve_wave(PdeParams("Wave", {"c": c, "k": 0.0}), w0, 101, h)[..., 0]
        energies = np.array([wave_energy(out[i], out[i + 1], c, h, dx) for i in range(100)])
        assert np.max(np.abs(energies / energies[0] - 1)) < 0.01

    def test_wave_damping_dissipates(self):
        g = grid_2d(32, 1.0)
        spec = InitialConditionSpec("gaussian-sum", centers=np.array([[0.5, 0.5]]), widths=np.array([0.1]))
        w0 = gaussian_sum(spec, g, 1.0)[..., None]
        out = solve(PdeParams("Wave", {"c": 100.0, "k": 50.0}), w0, 30, 0.005 / 30)
        assert np.abs(out[-1]).max() < np.abs(out[0]).max()

    def test_wave_refuses_too_few_substeps(self):
        w0 = np.zeros((16, 16, 1))
        with pytest.raises(StabilityError):
            solve(PdeParams("Wave", {"c": 500.0, "k": 0.0}), w0, 3, 1e-2, substeps=1)

    def test_vorticity_zero_mode(self):
        n = 32
        w0 = spectral_vorticity(n, 2 * np.pi, 4.0, np.random.default_rng(6)) + 0.37
        out = solve(PdeParams("Vorticity", {"nu": 1e-3}), w0[..., None], 10, 0.25)
        means = out[..., 0].mean(axis=(1, 2))
        assert np.max(np.abs(means - means[0])) < 1e-13

    def test_vorticity_viscous_decay(self):
        n = 32
        x = grid_1d(n, 2 * np.pi)
        # a single shear mode is a steady solution of the nonlinear term
        w0 = np.sin(2 * x)[:, None] * np.ones((1, n))
        nu = 1e-2
        out = solve(PdeParams("Vorticity", {"nu": nu}), w0[..., None], 5, 0.25)
        assert np.allclose(out[4, ..., 0], w0 * math.exp(-nu * 4 * 4 * 0.25), atol=1e-10)

    def test_unknown_system(self):
        with pytest.raises(ValueError):
            PdeParams("Burgers")


class TestDatasets:
    def test_batches_share_params(self, tmp_path):
        ds = build_dataset("Advection", "InD", 20, 10, seed=3)
        assert ds.fields.shape == (20, 20, 128, 1)
        assert len(ds.params) == 2
        assert ds.params_of(0) is ds.params_of(9)
        assert ds.params_of(10) is ds.params[1]
        assert not np.allclose(ds.fields[0, 0], ds.fields[1, 0])

    def test_indivisible_count(self, tmp_path):
        with pytest.raises(ValueError):
            generate_dataset("Advection", "InD", 15, 10, 0, tmp_path / "x.bin")

    def test_container_roundtrip_and_bytes(self, tmp_path):
        a = generate_dataset("Combined", "OutD", 4, 2, 11, tmp_path / "a.bin")
        b = generate_dataset("Combined", "OutD", 4, 2, 11, tmp_path / "b.bin")
        assert a.read_bytes() == b.read_bytes()
        assert a.with_suffix(".txt").read_text().startswith("ENMA1\nsystem=Combined\n")
        ds = read_container(a)
        ref = build_dataset("Combined", "OutD", 4, 2, 11)
        assert np.array_equal(ds.fields, ref.fields)
        assert np.array_equal(ds.grid, ref.grid)
        assert ds.params == ref.params
        assert (ds.system, ds.regime, ds.batch_size, ds.dt, ds.seed) == ("Combined", "OutD", 2, 0.05, 11)

    def test_container_layout(self, tmp_path):
        path = generate_dataset("Advection", "InD", 2, 1, 0, tmp_path / "c.bin")
        raw = path.read_bytes()
        header = b"ENMA1\nsystem=Advection\nregime=InD\nn_traj=2\nbatch_size=1\nnt=20\nextents=128\nchannels=1\ndt=0.05\nseed=0\n"
        assert raw.startswith(header)
        body = raw[len(header):]
        grid = np.frombuffer(body, "<f4", 128)
        assert np.allclose(grid, np.arange(128) / 128)
        fields = np.frombuffer(body, "<f4", 2 * 20 * 128, offset=4 * 128).reshape(2, 20, 128)
        assert np.array_equal(fields, build_dataset("Advection", "InD", 2, 1, 0).fields[..., 0])
        assert body[4 * 128 * (1 + 40):].startswith(b"batch=0\nsystem=Advection\nalpha=")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "bad.bin").write_bytes(b"nope")
        with pytest.raises(ValueError):
            read_container(tmp_path / "bad.bin")

    @pytest.mark.parametrize("system,shape", [
        ("Combined", (20, 128, 1)), ("Advection", (20, 128, 1)), ("Wave", (30, 64, 64, 1)),
        ("GrayScott", (20, 32, 32, 2)), ("Vorticity", (30, 64, 64, 1)),
    ])
    def test_every_system_builds(self, system, shape):
        ds = build_dataset(system, "InD", 1, 1, 0)
        assert ds.fields.shape[1:] == shape
        assert np.all(np.isfinite(ds.fields))
        assert ds.spatial_dims == len(shape) - 2

    def test_stored_grid_is_subsampled(self):
        sim = default_sim("Advection")
        assert sim.stride == 8 and sim.nt == 20


class TestSubsampling:
    def test_full_fraction_is_identity(self):
        traj = np.random.default_rng(0).normal(size=(5, 128, 1))
        grid = grid_1d(128, 1.0)[:, None]
        coords, values, idx = subsample_grid(traj, grid, 1.0, np.random.default_rng(0))
        assert np.array_equal(idx, np.arange(128))
        assert np.array_equal(values, traj)
        assert np.array_equal(coords, grid)

    def test_half_fraction_count(self):
        idx = subsample_indices(128, 0.5, np.random.default_rng(0))
        assert len(idx) == 64 and len(set(idx.tolist())) == 64
        assert np.all(np.diff(idx) > 0)

    def test_same_subset_at_every_time(self):
        traj = np.random.default_rng(1).normal(size=(4, 16, 16, 2))
        coords, values, idx = subsample_grid(traj, grid_2d(16, 1.0), 0.3, np.random.default_rng(1))
        flat = traj.reshape(4, 256, 2)
        assert np.array_equal(values, flat[:, idx])
        assert coords.shape == (76, 2)

    def test_inclusion_frequency(self):
        rng = np.random.default_rng(7)
        draws = 1000
        counts = np.zeros(128)
        for _ in range(draws):
            counts[subsample_indices(128, 0.2, rng)] += 1
        p = math.floor(0.2 * 128) / 128
        sigma = math.sqrt(draws * p * (1 - p))
        assert np.all(np.abs(counts - draws * p) <= 3 * sigma)

    @pytest.mark.parametrize("frac", [0.0, -0.1, 1.5])
    def test_invalid_fraction(self, frac):
        with pytest.raises(ValueError):
            subsample_indices(128, frac, np.random.default_rng(0))

    def test_empty_subset(self):
        with pytest.raises(ValueError):
            subsample_indices(4, 0.2, np.random.default_rng(0))
