"""Central finite-difference check of the analytic block gradients."""
from __future__ import annotations

import numpy as np

from .objective import Objective
from .operators import (
    FourierOperator,
    FourierOperatorConfig,
    MeasurementOperator,
    MultiPlanePSFConfig,
    MultiPlanePSFOperator,
)
from .spikes import SpikeTrain


def finite_difference_gradient(obj: Objective, train: SpikeTrain, h_amp: float, h_pos: float) -> np.ndarray:
    """(K, d+1) array of central differences of ``obj.value``: column 0 amplitude, then positions."""
    amps = train.amplitudes.copy()
    pos = train.positions.copy()
    K, d = pos.shape
    out = np.empty((K, d + 1))
    for i in range(K):
        for c in range(d + 1):
            hi_a, lo_a = amps.copy(), amps.copy()
            hi_p, lo_p = pos.copy(), pos.copy()
            if c == 0:
                hi_a[i] += h_amp
                lo_a[i] -= h_amp
                h = h_amp
            else:
                hi_p[i, c - 1] += h_pos
                lo_p[i, c - 1] -= h_pos
                h = h_pos
            out[i, c] = (obj.value(SpikeTrain(hi_a, hi_p)) - obj.value(SpikeTrain(lo_a, lo_p))) / (2 * h)
    return out


def analytic_gradient(obj: Objective, train: SpikeTrain) -> np.ndarray:
    return np.array([g.as_vector() for g in obj.full_gradient(train)])


def relative_error(analytic: np.ndarray, reference: np.ndarray) -> float:
    scale = np.max(np.abs(reference))
    return float(np.max(np.abs(analytic - reference)) / scale) if scale > 0 else float(np.max(np.abs(analytic)))


def random_instance(op: MeasurementOperator, rng, max_spikes: int = 4):
    def draw(k):
        pos = op.domain_lower + rng.uniform(size=(k, op.d)) * op.domain_lengths
        return SpikeTrain(rng.uniform(-2.0, 2.0, k), pos)

    train = draw(int(rng.integers(1, max_spikes + 1)))
    y = op.apply(draw(int(rng.integers(1, max_spikes + 1))))
    return Objective(op, y), train


def check_operator(op: MeasurementOperator, instances: int, rng) -> float:
    h_pos = 1e-6 * float(np.max(op.domain_lengths))
    worst = 0.0
    for _ in range(instances):
        obj, train = random_instance(op, rng)
        fd = finite_difference_gradient(obj, train, 1e-6, h_pos)
        worst = max(worst, relative_error(analytic_gradient(obj, train), fd))
    return worst


def default_operators(seed: int = 0) -> list[tuple[str, MeasurementOperator]]:
    ops: list[tuple[str, MeasurementOperator]] = [
        (f"fourier d={d}", FourierOperator.from_config(FourierOperatorConfig(m=128, d=d, seed=seed + d)))
        for d in (1, 2, 3)
    ]
    ops.append(("multiplane-psf d=3", MultiPlanePSFOperator(MultiPlanePSFConfig(grid=(32, 32)))))
    return ops


def gradient_check_suite(instances: int = 100, seed: int = 0) -> list[tuple[str, float]]:
    rng = np.random.default_rng(seed)
    return [(name, check_operator(op, instances, rng)) for name, op in default_operators(seed)]
