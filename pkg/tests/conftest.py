import pytest

from spikebench.operators import (
    FourierOperator,
    FourierOperatorConfig,
    MultiPlanePSFConfig,
    MultiPlanePSFOperator,
)
from spikebench.spikes import SpikeTrain


@pytest.fixture(scope="session")
def fourier1():
    return FourierOperator.from_config(FourierOperatorConfig(m=64, d=1, seed=3))


@pytest.fixture(scope="session")
def fourier2():
    return FourierOperator.from_config(FourierOperatorConfig(m=128, d=2, seed=5))


@pytest.fixture(scope="session")
def psf():
    return MultiPlanePSFOperator(MultiPlanePSFConfig(grid=(32, 32)))


def random_train(op, rng, k, amp=(-2.0, 2.0)):
    pos = op.domain_lower + rng.uniform(size=(k, op.d)) * op.domain_lengths
    return SpikeTrain(rng.uniform(*amp, k), pos)
