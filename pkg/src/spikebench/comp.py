"""Over-parametrized continuous orthogonal matching pursuit (OP-COMP).

Greedy grid initialisation: pick the grid atom best correlated with the residual,
refit every amplitude by least squares, repeat. No descent inside the loop.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .objective import Objective
from .spikes import SpikeTrain

RIDGE = 1e-10
RIDGE_DOMINANCE = 10.0


class ConditioningWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class CompConfig:
    grid_resolution: tuple[int, ...]
    max_spikes: int = 256
    stall_tolerance: float = 1e-4
    stop_residual: float = 2e-8

    def __post_init__(self):
        if self.max_spikes < 1:
            raise ValueError("max_spikes must be >= 1")
        if min(self.grid_resolution) < 1:
            raise ValueError("grid_resolution entries must be positive")
        if self.stall_tolerance <= 0 or self.stop_residual <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class AmplitudeFit:
    amplitudes: np.ndarray
    condition_number: float
    ill_conditioned: bool = False


def best_atom(obj: Objective, residual: np.ndarray, cfg: CompConfig) -> np.ndarray:
    """Grid point maximising |<A delta_t, r>| / ||A delta_t||; ties go to the lowest index."""
    op = obj.operator
    if residual.shape != (op.m,):
        raise ValueError(f"residual must have length {op.m}")
    axes = op.grid_axes(cfg.grid_resolution)
    scores = op.grid_correlations(axes, residual)
    flat = int(np.argmax(scores))
    idx = np.unravel_index(flat, scores.shape)
    return np.array([axes[r][idx[r]] for r in range(op.d)])


def refit_amplitudes(obj: Objective, positions: Sequence[np.ndarray]) -> AmplitudeFit:
    """Real least-squares amplitudes for fixed positions (ridge-damped normal equations)."""
    pos = np.asarray(positions, dtype=float)
    if pos.ndim == 1:
        pos = pos[None, :]
    if pos.shape[0] == 0:
        raise ValueError("positions must be nonempty")
    atoms = obj.operator.atoms(pos)
    gram = np.real(atoms.conj() @ atoms.T)
    rhs = np.real(atoms.conj() @ obj.observation)
    eig = np.linalg.eigvalsh(gram)
    # rank deficient beyond what the damping can absorb
    ill = not np.all(np.isfinite(eig)) or eig[0] < RIDGE_DOMINANCE * RIDGE
    gram[np.diag_indices_from(gram)] += RIDGE
    cond = float((eig[-1] + RIDGE) / max(eig[0] + RIDGE, np.finfo(float).tiny))
    if ill:
        warnings.warn(
            f"amplitude refit Gram matrix is rank deficient (smallest eigenvalue {eig[0]:.3g})", ConditioningWarning
        )
    try:
        amps = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        amps = np.linalg.lstsq(gram, rhs, rcond=None)[0]
        ill = True
    return AmplitudeFit(amps, cond, ill)


def op_comp(obj: Objective, cfg: CompConfig) -> SpikeTrain:
    d = obj.operator.d
    positions: list[np.ndarray] = []
    amps = np.zeros(0)
    residual = -obj.observation
    value = obj.norm_sq(residual)
    while value > cfg.stop_residual and len(positions) < cfg.max_spikes:
        t = best_atom(obj, residual, cfg)
        if any(np.array_equal(t, p) for p in positions):
            # refit already made the residual orthogonal to this atom
            break
        positions.append(t)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConditioningWarning)
            fit = refit_amplitudes(obj, positions)
        new_residual = obj.residual_of(fit.amplitudes, np.array(positions))
        new_value = obj.norm_sq(new_residual)
        amps, residual = fit.amplitudes, new_residual
        stalled = (value - new_value) < cfg.stall_tolerance * value
        value = new_value
        if stalled:
            break
    if not positions:
        return SpikeTrain.empty(d)
    return SpikeTrain(amps, np.array(positions))
