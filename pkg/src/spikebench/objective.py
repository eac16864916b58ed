"""Least-squares data fit g(theta) = ||A phi(theta) - y||^2 and its per-spike gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import MeasurementOperator
from .spikes import SpikeTrain


@dataclass(frozen=True)
class BlockGradient:
    spike_index: int
    amplitude_grad: float
    position_grad: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.amplitude_grad], self.position_grad])


@dataclass(frozen=True, eq=False)
class Objective:
    operator: MeasurementOperator
    observation: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.observation)
        if y.shape != (self.operator.m,):
            raise ValueError(f"observation has shape {y.shape}, operator expects ({self.operator.m},)")
        y = y.copy()
        y.flags.writeable = False
        object.__setattr__(self, "observation", y)

    def with_observation(self, observation: np.ndarray) -> "Objective":
        return Objective(self.operator, observation)

    def residual(self, train: SpikeTrain) -> np.ndarray:
        return self.operator.apply(train) - self.observation

    def residual_of(self, amplitudes: np.ndarray, positions: np.ndarray) -> np.ndarray:
        return self.operator.synthesize(amplitudes, positions) - self.observation

    @staticmethod
    def norm_sq(vec: np.ndarray) -> float:
        return float(np.real(np.vdot(vec, vec)))

    def value(self, train: SpikeTrain) -> float:
        return self.norm_sq(self.residual(train))

    def value_of(self, amplitudes, positions) -> float:
        return self.norm_sq(self.residual_of(amplitudes, positions))

    def gradient_arrays(self, amplitudes, positions, residual=None, indices=None):
        """Batched gradients for the selected spikes against one shared residual.

        Returns ``(amp_grad, pos_grad, residual)`` with shapes (n,), (n, d), (m,).
        Spike i only contributes through the residual; no other block is read.
        """
        amplitudes = np.asarray(amplitudes, dtype=float)
        positions = np.asarray(positions, dtype=float)
        if residual is None:
            residual = self.residual_of(amplitudes, positions)
        if indices is not None:
            amplitudes = amplitudes[indices]
            positions = positions[indices]
        if len(amplitudes) == 0:
            return np.zeros(0), np.zeros((0, self.operator.d)), residual
        c, dc = self.operator.correlations(positions, residual)
        amp_grad = 2.0 * np.real(c)
        pos_grad = 2.0 * amplitudes[:, None] * np.real(dc)
        return amp_grad, pos_grad, residual

    def block_gradient(self, train: SpikeTrain, i: int) -> BlockGradient:
        if not -len(train) <= i < len(train):
            raise IndexError(f"spike index {i} out of range for {len(train)} spikes")
        i = i % len(train)
        amp, pos, _ = self.gradient_arrays(train.amplitudes, train.positions, indices=[i])
        return BlockGradient(i, float(amp[0]), pos[0])

    def full_gradient(self, train: SpikeTrain) -> list[BlockGradient]:
        amp, pos, _ = self.gradient_arrays(train.amplitudes, train.positions)
        return [BlockGradient(i, float(amp[i]), pos[i]) for i in range(len(train))]

    def block_gradient_norms(self, train: SpikeTrain, residual=None) -> np.ndarray:
        amp, pos, _ = self.gradient_arrays(train.amplitudes, train.positions, residual=residual)
        return np.sqrt(amp**2 + np.einsum("nd,nd->n", pos, pos))
