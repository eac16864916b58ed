import json

import numpy as np
import pytest

from spikebench import diagnostics
from spikebench.diagnostics import (
    BoundReport,
    DomainTooSmallError,
    PreconditionError,
    check_energy_bound,
    check_gradient_bound,
    dipole_energy,
    estimate_mu,
    instance_mu,
    random_well_initialized,
)
from spikebench.objective import Objective
from spikebench.operators import MeasurementOperator
from spikebench.spikes import Dipole, SpikeTrain


class BinOperator(MeasurementOperator):
    """One-hot atoms: A delta_t is the indicator of the bin containing t (1-D)."""

    d = 1

    def __init__(self, bins=50):
        self.m = bins
        self.domain_lower = np.zeros(1)
        self.domain_upper = np.ones(1)

    def atoms(self, positions):
        pos = self._check_positions(positions)
        idx = np.clip((pos[:, 0] * self.m).astype(int), 0, self.m - 1)
        out = np.zeros((pos.shape[0], self.m), dtype=complex)
        out[np.arange(pos.shape[0]), idx] = 1.0
        return out

    def atom_jacobians(self, positions):
        pos = self._check_positions(positions)
        return np.zeros((pos.shape[0], 1, self.m), dtype=complex)

    def natural_length_scales(self):
        return np.array([1.0 / self.m])


def test_dipole_energy_examples(fourier2, psf):
    t = np.array([0.4, 0.1])
    assert dipole_energy(fourier2, Dipole(1.3, t, 1.3, t, 0.1)) == pytest.approx(0.0, abs=1e-28)
    assert dipole_energy(fourier2, Dipole(-1.7, t, 0.0, t, 0.1)) == pytest.approx(1.7**2, rel=1e-13)
    n = Dipole(1.4, [3.0, 3.1, 0.2], 0.8, [3.2, 3.0, 0.3], 0.5)
    v = [1.4 * p - 0.8 * q for p, q in zip(psf.apply_dirac(n.t), psf.apply_dirac(n.s))]
    assert dipole_energy(psf, n) == pytest.approx(sum(x * x for x in v), rel=1e-12)
    # equals the objective value with zero observation on the equivalent two-spike train
    assert dipole_energy(psf, n) == pytest.approx(Objective(psf, psf.zeros()).value(n.as_train()), rel=1e-14)


def test_estimate_mu_orthogonal_atoms():
    est = estimate_mu(BinOperator(50), eps=0.1, trials=300, seed=0)
    assert est.trials == 300 and est.epsilon == 0.1
    assert est.mu <= 1e-12


def test_estimate_mu_monotone_in_trials(psf):
    eps = 1.6
    values = [estimate_mu(psf, eps, n, seed=7).mu for n in (1, 10, 50, 200)]
    assert values == sorted(values)


def test_estimate_mu_small_for_far_supports(psf):
    # brute force over a grid of dipole pairs whose supports are > 6 sigma apart
    s = psf.sigma
    xs = np.linspace(0.2, 6.2, 13)
    offsets = [np.array([0.3, 0.0, 0.0]), np.array([0.0, 0.3, 0.2])]
    dips = []
    for x in xs:
        for y in xs:
            for o in offsets:
                t = np.array([x, y, 0.4])
                v = psf.apply_dirac(t) - 0.5 * psf.apply_dirac(t + o)
                dips.append((t, t + o, v, v @ v))
    best = -np.inf
    for i in range(len(dips)):
        for j in range(i + 1, len(dips)):
            a, b = dips[i], dips[j]
            if min(np.linalg.norm(p - q) for p in a[:2] for q in b[:2]) > 6 * s:
                best = max(best, (a[2] @ b[2]) / (a[3] * b[3]))
    assert best < 1e-3
    # Monte-Carlo estimator at a separation radius of 20/3 sigma agrees
    assert estimate_mu(psf, 20 * s, 300, seed=0).mu < 1e-3


def test_estimate_mu_errors(psf, monkeypatch):
    with pytest.raises(ValueError):
        estimate_mu(psf, 1.0, 0)
    monkeypatch.setattr(diagnostics, "MAX_ATTEMPTS", 200)
    with pytest.raises(DomainTooSmallError):
        estimate_mu(psf, 50.0, 5)


def test_fourier_imaginary_parts_are_flagged(fourier2):
    est = estimate_mu(fourier2, 0.3, 100, seed=1)
    assert est.max_imag_ratio > diagnostics.IMAG_FLAG
    assert est.imag_flagged > 0
    assert estimate_mu(diagnostics_psf(), 1.6, 50).imag_flagged == 0


def diagnostics_psf():
    from spikebench.operators import MultiPlanePSFConfig, MultiPlanePSFOperator

    return MultiPlanePSFOperator(MultiPlanePSFConfig(grid=(16, 16)))


def test_energy_bound_trivial_cases(psf):
    rng = np.random.default_rng(0)
    truth, init = random_well_initialized(psf, 3, 1.6, rng)
    rep = check_energy_bound(psf, truth, truth, mu=1.0)
    assert rep.lhs == 0 and rep.rhs == 0 and rep.holds
    t1, i1 = random_well_initialized(psf, 1, 1.6, rng)
    rep = check_energy_bound(psf, t1, i1, mu=123.0)
    assert rep.lhs == pytest.approx(rep.rhs, rel=1e-12)
    assert rep.holds


@pytest.mark.parametrize("name,eps", [("psf", 1.6), ("fourier2", 0.3)])
def test_bounds_hold_with_sampled_mu(name, eps, request):
    op = request.getfixturevalue(name)
    mu = max(estimate_mu(op, eps, 500, seed=0).mu, 0.0)
    rng = np.random.default_rng(1)
    for _ in range(5):
        truth, init = random_well_initialized(op, 3, eps, rng)
        assert check_energy_bound(op, truth, init, mu).holds
        for i in range(3):
            for r in range(op.d):
                assert check_gradient_bound(op, truth, init, mu, i, r).holds


@pytest.mark.parametrize("name,eps", [("psf", 1.6), ("fourier2", 0.3)])
def test_bounds_never_fail_with_instance_mu(name, eps, request):
    op = request.getfixturevalue(name)
    rng = np.random.default_rng(2)
    for _ in range(15):
        k = int(rng.integers(1, 4))
        truth, init = random_well_initialized(op, k, eps, rng)
        mu = instance_mu(op, truth, init)
        assert check_energy_bound(op, truth, init, mu).holds
        for i in range(k):
            for r in range(op.d):
                assert check_gradient_bound(op, truth, init, mu, i, r).holds


def test_gradient_bound_trivial_cases(psf):
    rng = np.random.default_rng(3)
    t1, i1 = random_well_initialized(psf, 1, 1.6, rng)
    for r in range(3):
        rep = check_gradient_bound(psf, t1, i1, 0.5, 0, r)
        assert rep.lhs == pytest.approx(0.0, abs=1e-12) and rep.holds
    truth, init = random_well_initialized(psf, 3, 1.6, rng)
    # cancel dipoles 0 and 2 by placing init exactly on truth there
    amps = init.amplitudes.copy()
    pos = init.positions.copy()
    amps[[0, 2]] = truth.amplitudes[[0, 2]]
    pos[[0, 2]] = truth.positions[[0, 2]]
    only1 = SpikeTrain(amps, pos)
    for r in range(3):
        assert check_gradient_bound(psf, truth, only1, 0.0, 1, r).lhs == pytest.approx(0.0, abs=1e-12)


def test_gradient_bound_variants(psf):
    rng = np.random.default_rng(4)
    truth, init = random_well_initialized(psf, 2, 1.6, rng)
    proof = check_gradient_bound(psf, truth, init, 1.0, 0, 0)
    stmt = check_gradient_bound(psf, truth, init, 1.0, 0, 0, norm_form="statement")
    assert stmt.rhs == pytest.approx(proof.rhs * init.amplitudes[0] ** 2, rel=1e-12)
    with_a = check_gradient_bound(psf, truth, init, 1.0, 0, 0, amplitude="truth")
    assert with_a.rhs == pytest.approx(proof.rhs * truth.amplitudes[0] / init.amplitudes[0], rel=1e-12)
    with pytest.raises(ValueError):
        check_gradient_bound(psf, truth, init, 1.0, 0, 0, norm_form="other")
    with pytest.raises(IndexError):
        check_gradient_bound(psf, truth, init, 1.0, 2, 0)


def test_precondition_errors(psf):
    truth = SpikeTrain([1.0, 1.0], [[1.0, 1.0, 0.2], [4.0, 4.0, 0.2]])
    with pytest.raises(PreconditionError):
        check_energy_bound(psf, truth, truth.subset([0]), 1.0)
    far = SpikeTrain([1.0, 1.0], [[3.0, 3.0, 0.2], [4.0, 4.0, 0.2]])
    with pytest.raises(PreconditionError):
        check_energy_bound(psf, truth, far, 1.0)


def test_report_json_record():
    rep = BoundReport(np.float64(0.5), 1.0, np.bool_(True), 0.1, 3, seed=4)
    data = json.loads(rep.to_json())
    assert data == {"lhs": 0.5, "rhs": 1.0, "holds": True, "mu": 0.1, "K": 3, "seed": 4}


def test_random_well_initialized_premise(psf):
    rng = np.random.default_rng(5)
    for _ in range(10):
        truth, init = random_well_initialized(psf, 4, 1.6, rng)
        offsets = np.linalg.norm(truth.positions - init.positions, axis=1)
        assert offsets.max() < 1.6 / 3
        d = np.linalg.norm(truth.positions[:, None] - truth.positions[None], axis=2)
        assert d[np.triu_indices(4, 1)].min() > 1.6
