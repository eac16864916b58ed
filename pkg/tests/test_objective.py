import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikebench.gradcheck import finite_difference_gradient, relative_error
from spikebench.objective import Objective
from spikebench.spikes import SpikeTrain

from conftest import random_train


def scalar_value(op, train, y):
    total = 0.0
    for j in range(op.m):
        acc = 0j
        for a, t in zip(train.amplitudes, train.positions):
            acc += a * op.apply_dirac(t)[j]
        diff = acc - y[j]
        total += diff.real**2 + diff.imag**2
    return total


def test_observation_length_checked(fourier1):
    with pytest.raises(ValueError):
        Objective(fourier1, np.zeros(fourier1.m + 1))


def test_residual_examples(fourier2):
    rng = np.random.default_rng(0)
    truth = random_train(fourier2, rng, 3)
    y = fourier2.apply(truth)
    obj = Objective(fourier2, y)
    np.testing.assert_allclose(obj.residual(truth), 0.0, atol=1e-15)
    np.testing.assert_array_equal(obj.residual(SpikeTrain.empty(2)), -y)
    other = random_train(fourier2, rng, 2)
    direct = sum(a * fourier2.apply_dirac(t) for a, t in zip(other.amplitudes, other.positions)) - y
    np.testing.assert_allclose(obj.residual(other), direct, rtol=1e-12, atol=1e-15)


def test_value_examples(fourier2, psf):
    rng = np.random.default_rng(1)
    for op in (fourier2, psf):
        truth = random_train(op, rng, 4)
        assert Objective(op, op.apply(truth)).value(truth) <= 1e-24
    t = np.array([0.3, 0.6])
    obj = Objective(fourier2, fourier2.apply(SpikeTrain([2.0], [t])))
    assert obj.value(SpikeTrain([1.0], [t])) == pytest.approx(1.0, abs=1e-13)
    y = fourier2.apply(random_train(fourier2, rng, 2))
    train = random_train(fourier2, rng, 3)
    assert Objective(fourier2, y).value(train) == pytest.approx(scalar_value(fourier2, train, y), rel=1e-12)


@pytest.mark.parametrize("name", ["fourier1", "fourier2", "psf"])
def test_block_gradient_matches_finite_differences(name, request):
    op = request.getfixturevalue(name)
    rng = np.random.default_rng(2)
    h_pos = 1e-6 * float(np.max(op.domain_lengths))
    for _ in range(10):
        obj = Objective(op, op.apply(random_train(op, rng, 3)))
        train = random_train(op, rng, 3)
        fd = finite_difference_gradient(obj, train, 1e-6, h_pos)
        analytic = np.array([obj.block_gradient(train, i).as_vector() for i in range(3)])
        assert relative_error(analytic, fd) < 1e-5


def test_gradient_zero_at_exact_fit(psf):
    rng = np.random.default_rng(3)
    truth = random_train(psf, rng, 3)
    obj = Objective(psf, psf.apply(truth))
    for g in obj.full_gradient(truth):
        assert abs(g.amplitude_grad) < 1e-13
        np.testing.assert_allclose(g.position_grad, 0.0, atol=1e-12)
    np.testing.assert_allclose(obj.block_gradient_norms(truth), 0.0, atol=1e-12)


def test_amplitude_gradient_is_affine_in_observation(fourier2):
    # grad(2 y0) = 2 grad(y0) - grad(0), since the gradient is affine in y
    rng = np.random.default_rng(4)
    y0 = fourier2.apply(random_train(fourier2, rng, 2))
    train = random_train(fourier2, rng, 3)
    for i in range(3):
        g2 = Objective(fourier2, 2 * y0).block_gradient(train, i)
        g1 = Objective(fourier2, y0).block_gradient(train, i)
        g0 = Objective(fourier2, np.zeros_like(y0)).block_gradient(train, i)
        assert g2.amplitude_grad == pytest.approx(2 * g1.amplitude_grad - g0.amplitude_grad, rel=1e-12, abs=1e-12)
        atom = fourier2.apply_dirac(train.positions[i])
        r2 = fourier2.apply(train) - 2 * y0
        assert g2.amplitude_grad == pytest.approx(2 * np.real(np.vdot(atom, r2)), rel=1e-12)


def test_block_gradient_formula_uses_hermitian_product(fourier1):
    # explicit 2 a Re<d atom, r> with conjugation on the first argument
    rng = np.random.default_rng(5)
    obj = Objective(fourier1, fourier1.apply(random_train(fourier1, rng, 2)))
    train = random_train(fourier1, rng, 2)
    r = obj.residual(train)
    g = obj.block_gradient(train, 1)
    jac = fourier1.apply_dirac_jacobian(train.positions[1])[0]
    expected = 2 * train.amplitudes[1] * sum((np.conj(u) * v).real for u, v in zip(jac, r))
    assert g.position_grad[0] == pytest.approx(expected, rel=1e-12)


def test_full_gradient_is_list_of_blocks(psf):
    rng = np.random.default_rng(6)
    obj = Objective(psf, psf.apply(random_train(psf, rng, 4)))
    single = random_train(psf, rng, 1)
    full = obj.full_gradient(single)
    assert len(full) == 1
    np.testing.assert_array_equal(full[0].as_vector(), obj.block_gradient(single, 0).as_vector())
    train = random_train(psf, rng, 5)
    for i, g in enumerate(obj.full_gradient(train)):
        assert g.spike_index == i
        np.testing.assert_allclose(g.as_vector(), obj.block_gradient(train, i).as_vector(), rtol=1e-13, atol=1e-15)


def test_block_gradient_index_errors(fourier1):
    obj = Objective(fourier1, fourier1.zeros())
    train = SpikeTrain([1.0, 2.0], [[0.1], [0.2]])
    with pytest.raises(IndexError):
        obj.block_gradient(train, 2)
    assert obj.block_gradient(train, -1).spike_index == 1


def test_single_block_norm_matches_finite_difference(fourier2):
    rng = np.random.default_rng(7)
    obj = Objective(fourier2, fourier2.apply(random_train(fourier2, rng, 2)))
    train = random_train(fourier2, rng, 1)
    fd = finite_difference_gradient(obj, train, 1e-6, 1e-6)[0]
    assert obj.block_gradient_norms(train)[0] == pytest.approx(np.linalg.norm(fd), rel=1e-6)


def test_gradient_subset_reads_only_shared_residual(psf):
    rng = np.random.default_rng(8)
    obj = Objective(psf, psf.apply(random_train(psf, rng, 3)))
    train = random_train(psf, rng, 6)
    amp, pos, res = obj.gradient_arrays(train.amplitudes, train.positions)
    # blocks outside `indices` may hold garbage without affecting the requested blocks
    poisoned = train.amplitudes.copy()
    poisoned[[0, 2, 4]] = np.nan
    sa, sp, _ = obj.gradient_arrays(poisoned, train.positions, residual=res, indices=[1, 3, 5])
    np.testing.assert_array_equal(sa, amp[[1, 3, 5]])
    np.testing.assert_array_equal(sp, pos[[1, 3, 5]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.randoms(use_true_random=False))
def test_norms_permute_with_spikes(seed, rnd):
    from spikebench.operators import FourierOperator, FourierOperatorConfig

    op = FourierOperator.from_config(FourierOperatorConfig(m=40, d=2, seed=0))
    rng = np.random.default_rng(seed)
    obj = Objective(op, op.apply(random_train(op, rng, 3)))
    train = random_train(op, rng, 5)
    order = list(range(5))
    rnd.shuffle(order)
    np.testing.assert_allclose(
        obj.block_gradient_norms(train.subset(order)), obj.block_gradient_norms(train)[order], rtol=1e-12, atol=1e-14
    )
    assert obj.value(train) >= 0
