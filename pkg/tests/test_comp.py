import itertools
import warnings

import numpy as np
import pytest

from spikebench.comp import CompConfig, ConditioningWarning, best_atom, op_comp, refit_amplitudes
from spikebench.objective import Objective
from spikebench.spikes import SpikeTrain


def brute_best(op, residual, resolution):
    """Exhaustive loop over grid points, first maximum wins."""
    axes = op.grid_axes(resolution)
    best, arg = -1.0, None
    for idx in itertools.product(*(range(n) for n in resolution)):
        t = np.array([axes[r][idx[r]] for r in range(op.d)])
        atom = op.apply_dirac(t)
        score = abs(np.vdot(atom, residual)) / np.linalg.norm(atom)
        if score > best:
            best, arg = score, t
    return arg


def test_config_validation():
    with pytest.raises(ValueError):
        CompConfig(grid_resolution=(8,), max_spikes=0)


def test_best_atom_finds_grid_spike(fourier2):
    cfg = CompConfig(grid_resolution=(16, 16))
    axes = fourier2.grid_axes(cfg.grid_resolution)
    t_star = np.array([axes[0][5], axes[1][11]])
    r = -fourier2.apply_dirac(t_star)
    np.testing.assert_array_equal(best_atom(Objective(fourier2, fourier2.zeros()), r, cfg), t_star)
    np.testing.assert_array_equal(brute_best(fourier2, r, (16, 16)), t_star)


def test_best_atom_zero_residual_takes_first_grid_point(psf):
    cfg = CompConfig(grid_resolution=(8, 8, 4))
    t = best_atom(Objective(psf, psf.zeros()), psf.zeros(), cfg)
    axes = psf.grid_axes(cfg.grid_resolution)
    np.testing.assert_array_equal(t, [axes[0][0], axes[1][0], axes[2][0]])


def test_best_atom_two_far_spikes(psf):
    cfg = CompConfig(grid_resolution=(16, 16, 4))
    a, b = np.array([1.13, 1.52, 0.31]), np.array([5.07, 4.71, 0.33])
    y = psf.apply(SpikeTrain([1.0, 1.0], [a, b]))
    t = best_atom(Objective(psf, y), y, cfg)
    axes = psf.grid_axes(cfg.grid_resolution)
    nearest = [np.array([ax[np.argmin(abs(ax - p[r]))] for r, ax in enumerate(axes)]) for p in (a, b)]
    assert any(np.array_equal(t, n) for n in nearest)
    np.testing.assert_array_equal(t, brute_best(psf, y, (16, 16, 4)))


@pytest.mark.parametrize("name,res", [("fourier1", (40,)), ("fourier2", (9, 7)), ("psf", (6, 5, 3))])
def test_best_atom_matches_exhaustive_oracle(name, res, request):
    op = request.getfixturevalue(name)
    rng = np.random.default_rng(0)
    for _ in range(3):
        pos = op.domain_lower + rng.uniform(size=(3, op.d)) * op.domain_lengths
        r = op.apply(SpikeTrain(rng.normal(size=3), pos))
        got = best_atom(Objective(op, r), r, CompConfig(grid_resolution=res))
        np.testing.assert_array_equal(got, brute_best(op, r, res))


def test_refit_recovers_amplitudes(psf):
    pos = np.array([[1.0, 1.0, 0.2], [3.5, 2.0, 0.5], [5.0, 5.5, 0.1]])
    amps = np.array([1.2, 1.9, 1.5])
    fit = refit_amplitudes(Objective(psf, psf.apply(SpikeTrain(amps, pos))), list(pos))
    np.testing.assert_allclose(fit.amplitudes, amps, rtol=1e-6)
    assert not fit.ill_conditioned


def test_refit_single_atom(fourier1):
    t = np.array([0.42])
    fit = refit_amplitudes(Objective(fourier1, 3 * fourier1.apply_dirac(t)), [t])
    assert fit.amplitudes[0] == pytest.approx(3.0, rel=1e-9)


def test_refit_orthogonal_observation(psf):
    # y lives on pixels far away from the atom support
    y = psf.zeros().reshape(psf.planes, psf.nx, psf.ny)
    y[:, -1, -1] = 1.0
    fit = refit_amplitudes(Objective(psf, y.reshape(-1)), [np.array([0.5, 0.5, 0.1])])
    assert abs(fit.amplitudes[0]) < 1e-12


def test_refit_warns_on_duplicate_positions(fourier1):
    t = np.array([0.3])
    with pytest.warns(ConditioningWarning):
        fit = refit_amplitudes(Objective(fourier1, fourier1.apply_dirac(t)), [t, t])
    assert fit.ill_conditioned
    with pytest.raises(ValueError):
        refit_amplitudes(Objective(fourier1, fourier1.zeros()), [])


def test_op_comp_zero_observation(psf):
    out = op_comp(Objective(psf, psf.zeros()), CompConfig(grid_resolution=(8, 8, 4)))
    assert len(out) == 0 and out.dimension == 3


def test_op_comp_single_grid_spike(fourier1):
    cfg = CompConfig(grid_resolution=(64,))
    t = fourier1.grid_axes(cfg.grid_resolution)[0][21]
    obj = Objective(fourier1, 1.7 * fourier1.apply_dirac([t]))
    out = op_comp(obj, cfg)
    assert len(out) == 1
    assert out.positions[0, 0] == t
    assert out.amplitudes[0] == pytest.approx(1.7, rel=1e-9)
    assert obj.value(out) < 1e-16


def test_op_comp_two_off_grid_spikes(psf):
    cfg = CompConfig(grid_resolution=(32, 32, 16), max_spikes=12)
    truth = SpikeTrain([1.3, 1.8], [[1.37, 2.02, 0.33], [4.61, 4.18, 0.57]])
    out = op_comp(Objective(psf, psf.apply(truth)), cfg)
    assert len(out) >= 2
    axes = psf.grid_axes(cfg.grid_resolution)
    cell = np.array([ax[1] - ax[0] for ax in axes])
    for p in truth.positions:
        assert np.any(np.all(np.abs(out.positions - p) <= cell, axis=1))


def test_op_comp_invariants(psf):
    rng = np.random.default_rng(1)
    truth = SpikeTrain(rng.uniform(1, 2, 4), [[1.0, 1.2, 0.1], [4.8, 1.5, 0.6], [2.5, 4.9, 0.4], [5.3, 5.0, 0.2]])
    obj = Objective(psf, psf.apply(truth))
    res = (32, 32, 16)
    axes = psf.grid_axes(res)
    values = []
    for cap in range(1, 9):
        out = op_comp(obj, CompConfig(grid_resolution=res, max_spikes=cap, stall_tolerance=1e-12))
        values.append(obj.value(out))
        for p in out.positions:
            for r in range(3):
                assert p[r] in axes[r]
    assert all(b <= a + 1e-15 for a, b in zip(values, values[1:]))
    # grid step below eps/3 and a separated truth: every spike is well initialised
    eps = 1.6
    assert max(ax[1] - ax[0] for ax in axes) < eps / 3
    out = op_comp(obj, CompConfig(grid_resolution=res, max_spikes=12))
    for p in truth.positions:
        assert np.min(np.linalg.norm(out.positions - p, axis=1)) < eps / 3


def test_op_comp_respects_cap(psf):
    rng = np.random.default_rng(2)
    y = psf.apply(SpikeTrain(rng.uniform(1, 2, 5), rng.uniform(0.5, 0.8, (5, 3)) * psf.domain_lengths))
    with warnings.catch_warnings():
        warnings.simplefilter("error", ConditioningWarning)
        out = op_comp(Objective(psf, y), CompConfig(grid_resolution=(16, 16, 8), max_spikes=3))
    assert len(out) == 3
