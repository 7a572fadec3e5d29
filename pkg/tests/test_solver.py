from __future__ import annotations

import numpy as np
import pytest

from symsde.cli import make_drift, make_sigma
from symsde.errors import ConfigurationError
from symsde.flow import FlowMap, flow_forward
from symsde.noise import NoiseGrid, downsample, generate_fbm, generate_wiener
from symsde.solver import (
    ModelSpec,
    downsample_trajectory,
    ito_reference_solve,
    solve_averaged,
    solve_scaled,
    sup_distance,
    write_trajectory_csv,
)


def wiener(n=512, seed=3, T=1.0):
    return generate_wiener(NoiseGrid(T, n), seed)


def test_pure_noise_case_is_exact(model_pure_noise):
    # sigma = 1, b = 0: X_t = x0 + mu_t and Y stays constant
    path = wiener()
    fm = FlowMap(model_pure_noise.diffusion)
    traj = solve_scaled(model_pure_noise, fm, path, 0.25)
    assert np.max(np.abs(traj.x - (model_pure_noise.x0 + path.values))) < 1e-14
    assert np.max(np.abs(traj.y - model_pure_noise.x0)) == 0.0
    assert traj.epsilon == 0.25
    assert traj.path_ref == path.path_ref()


def test_zero_sigma_reduces_to_fast_ode():
    # sigma = 0: X solves dX = cos(t/eps) dt, so X = x0 + eps*sin(t/eps)
    eps = 0.05
    model = ModelSpec(make_sigma("zero"), make_drift("cos_s"), -0.2)
    fm = FlowMap(model.diffusion)
    path = wiener(n=256, seed=11)
    traj = solve_scaled(model, fm, path, eps)
    exact = model.x0 + eps * np.sin(path.grid.times / eps)
    assert np.max(np.abs(traj.x - exact)) < 1e-5
    assert np.max(np.abs(traj.x - traj.y)) == 0.0  # identity flow


def test_scaled_solve_self_refinement(model_sin2_sincos, fm_sin2):
    path = wiener(n=512, seed=4)
    base = solve_scaled(model_sin2_sincos, fm_sin2, path, 0.1, substeps=1)
    fine = solve_scaled(model_sin2_sincos, fm_sin2, path, 0.1, substeps=10)
    assert np.max(np.abs(base.x - fine.x)) < 1e-6


def test_averaged_solve_self_refinement(model_sin2_sincos, fm_sin2):
    path = wiener(n=512, seed=4)
    base = solve_averaged(model_sin2_sincos, fm_sin2, path, substeps=1)
    fine = solve_averaged(model_sin2_sincos, fm_sin2, path, substeps=10)
    assert np.max(np.abs(base.x - fine.x)) < 1e-6


def test_averaged_geometric_solution():
    # sigma(x) = x with zero averaged drift: X = x0 * exp(mu_t), Y constant
    model = ModelSpec(make_sigma("linear"), make_drift("sin_cos"), 0.5)
    fm = FlowMap(model.diffusion)
    path = wiener(n=256, seed=9)
    traj = solve_averaged(model, fm, path)
    assert traj.is_averaged
    exact = model.x0 * np.exp(path.values)
    assert np.max(np.abs(traj.x - exact)) < 1e-7
    assert np.max(np.abs(traj.y - model.x0)) == 0.0


def test_averaged_additive_solution():
    # sigma = 1, averaged drift = c: X = x0 + mu_t + c*t
    c = 0.8
    model = ModelSpec(make_sigma("const:1.0"), make_drift(f"const:{c}"), 0.0)
    fm = FlowMap(model.diffusion)
    path = wiener(n=256, seed=2)
    traj = solve_averaged(model, fm, path)
    exact = path.values + c * path.grid.times
    assert np.max(np.abs(traj.x - exact)) < 1e-12


def test_reconstruction_identity(model_sin2_sincos, fm_sin2):
    path = wiener(n=256, seed=13)
    for traj in (solve_scaled(model_sin2_sincos, fm_sin2, path, 0.125),
                 solve_averaged(model_sin2_sincos, fm_sin2, path)):
        rebuilt = flow_forward(fm_sin2, path.values, traj.y)
        assert np.max(np.abs(traj.x - rebuilt)) <= 1e-9


def test_y_lipschitz_and_apriori_bounds(model_sin2_sincos, fm_sin2):
    path = wiener(n=256, seed=17)
    traj = solve_scaled(model_sin2_sincos, fm_sin2, path, 0.1)
    model = model_sin2_sincos
    c = (np.exp(model.diffusion.deriv_bound * np.max(np.abs(path.values)))
         * model.drift.sup_bound)
    dt = path.grid.dt
    assert np.max(np.abs(np.diff(traj.y))) <= c * dt * (1 + 1e-9)
    assert np.max(np.abs(traj.y)) <= abs(model.x0) + path.grid.horizon * c + 1e-9


def test_grid_refinement_convergence(model_sin2_sincos, fm_sin2):
    # nested bridge paths: change under grid doubling shrinks monotonically
    fine_path = wiener(n=2048, seed=23)
    xs = {}
    for n in (256, 512, 1024, 2048):
        traj = solve_scaled(model_sin2_sincos, fm_sin2, downsample(fine_path, n),
                            0.25)
        xs[n] = traj.x
    changes = [np.max(np.abs(xs[n][::1] - xs[2 * n][::2]))
               for n in (256, 512, 1024)]
    assert changes[0] > changes[1] > changes[2]


def test_sup_distance_contracts(model_pure_noise):
    fm = FlowMap(model_pure_noise.diffusion)
    path = wiener(n=128, seed=1)
    a = solve_scaled(model_pure_noise, fm, path, 0.5)
    assert sup_distance(a, a) == 0.0
    other_path = wiener(n=128, seed=2)
    b = solve_scaled(model_pure_noise, fm, other_path, 0.5)
    with pytest.raises(ConfigurationError):
        sup_distance(a, b)
    coarse = solve_scaled(model_pure_noise, fm, downsample(path, 64), 0.5)
    with pytest.raises(ConfigurationError):
        sup_distance(a, coarse)


def test_sup_distance_closed_form_and_csv_oracle(tmp_path):
    # sigma = 0, b = cos(s): scaled vs averaged differ by eps*sin(t/eps)
    eps = 2.0**-4
    model = ModelSpec(make_sigma("zero"), make_drift("cos_s"), 0.0)
    fm = FlowMap(model.diffusion)
    path = wiener(n=512, seed=3)
    scaled = solve_scaled(model, fm, path, eps)
    averaged = solve_averaged(model, fm, path)
    got = sup_distance(scaled, averaged)
    expected = eps * np.max(np.abs(np.sin(path.grid.times / eps)))
    assert got == pytest.approx(expected, rel=1e-4)
    # independent recomputation from exported CSVs
    for traj, name in ((scaled, "a.csv"), (averaged, "b.csv")):
        write_trajectory_csv(traj, path, tmp_path / name)
    xa = np.genfromtxt(tmp_path / "a.csv", delimiter=",", skip_header=5)[:, 3]
    xb = np.genfromtxt(tmp_path / "b.csv", delimiter=",", skip_header=5)[:, 3]
    assert np.max(np.abs(xa - xb)) == got


def test_solver_is_deterministic(model_sin2_sincos, fm_sin2):
    path = wiener(n=256, seed=19)
    a = solve_scaled(model_sin2_sincos, fm_sin2, path, 0.1)
    b = solve_scaled(model_sin2_sincos, fm_sin2, path, 0.1)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)


def test_solve_argument_validation(model_sin2_sincos, fm_sin2):
    path = wiener(n=64)
    with pytest.raises(ConfigurationError):
        solve_scaled(model_sin2_sincos, fm_sin2, path, 0.0)
    with pytest.raises(ConfigurationError):
        solve_scaled(model_sin2_sincos, fm_sin2, path, 0.1, substeps=0)


def test_unaveraged_drift_rejected_for_averaged_solve(sigma_sin2, fm_sin2):
    from symsde.averaging import DriftSpec
    from symsde.errors import UnsupportedDriftError

    aperiodic = DriftSpec(lambda x, s: np.sin(x) * np.cos(np.sqrt(2.0) * s),
                          lambda c: 1.0, 1.0)
    model = ModelSpec(sigma_sin2, aperiodic, 0.0)
    with pytest.raises(UnsupportedDriftError):
        solve_averaged(model, fm_sin2, wiener(n=64))


def test_ito_reference_constant_sigma_matches_flow_solver():
    # constant sigma: the drift correction vanishes and both schemes agree
    # up to their joint quadrature error, O(dt)
    model = ModelSpec(make_sigma("const:1.3"), make_drift("cos_s"), 0.2)
    fm = FlowMap(model.diffusion)
    path = wiener(n=1024, seed=29)
    a = solve_scaled(model, fm, path, 0.25)
    b = ito_reference_solve(model, path, 0.25)
    assert sup_distance(a, b) < 5e-3


def test_ito_reference_geometric_case_converges():
    # sigma(x) = x, b = 0: both solutions converge to x0 * exp(W_t); the
    # single-path EM error fluctuates, so the refinement check uses the mean
    model = ModelSpec(make_sigma("linear"), make_drift("zero"), 1.0)
    fm = FlowMap(model.diffusion)
    n_values = (1024, 2048, 4096)
    diffs = np.zeros(len(n_values))
    for seed in range(16):
        fine = wiener(n=4096, seed=seed)
        for i, n in enumerate(n_values):
            path = downsample(fine, n)
            a = solve_scaled(model, fm, path, 1.0)
            b = ito_reference_solve(model, path, 1.0)
            assert np.max(np.abs(a.x - np.exp(path.values))) < 1e-7
            diffs[i] += sup_distance(a, b) / 16.0
    assert diffs[0] > diffs[1] > diffs[2]


def test_ito_reference_rejects_non_wiener(model_sin2_sincos):
    path = generate_fbm(NoiseGrid(1.0, 64), 0.75, 1)
    with pytest.raises(ConfigurationError):
        ito_reference_solve(model_sin2_sincos, path, 0.5)


def test_downsample_trajectory(model_pure_noise):
    fm = FlowMap(model_pure_noise.diffusion)
    path = wiener(n=256, seed=5)
    traj = solve_scaled(model_pure_noise, fm, path, 0.5)
    coarse = downsample_trajectory(traj, 64)
    assert coarse.grid.n_steps == 64
    assert np.array_equal(coarse.x, traj.x[::4])
    assert coarse.epsilon == traj.epsilon
    with pytest.raises(ConfigurationError):
        downsample_trajectory(traj, 512)


def test_trajectory_csv_round_trip_values(tmp_path, model_sin2_sincos, fm_sin2):
    path = wiener(n=64, seed=41)
    traj = solve_averaged(model_sin2_sincos, fm_sin2, path)
    out = tmp_path / "traj.csv"
    write_trajectory_csv(traj, path, out)
    data = np.genfromtxt(out, delimiter=",", skip_header=5)
    assert data.shape == (65, 4)
    assert np.array_equal(data[:, 0], path.grid.times)
    assert np.array_equal(data[:, 1], path.values)
    assert np.array_equal(data[:, 2], traj.y)
    assert np.array_equal(data[:, 3], traj.x)
