"""Projected block coordinate descent with thresholded Gauss-Southwell selection.

Each spike is a block. Every outer iteration ranks all blocks by gradient norm,
keeps those within ``threshold`` of the largest, and runs a short projected
descent on them alone against the observation with the frozen spikes removed.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .descent import DescentConfig, DescentOutcome, projected_descent
from .objective import Objective
from .spikes import SpikeTrain
from .trace import RunTrace, TraceRow

STATIONARY_NORM = 1e-14


@dataclass(frozen=True)
class BcdConfig:
    descent: DescentConfig
    threshold: float = 1e-3
    outer_iterations: int = 5_000
    inner_iterations: int = 50
    stop_residual: float = 2e-8

    def __post_init__(self):
        if not 0 < self.threshold <= 1:
            raise ValueError("threshold must lie in (0, 1]")
        if self.inner_iterations < 1 or self.outer_iterations < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.stop_residual <= 0:
            raise ValueError("stop_residual must be positive")


@dataclass(frozen=True)
class BlockPartition:
    active: tuple[int, ...]
    frozen: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.active) + len(self.frozen)

    @property
    def active_fraction(self) -> float:
        return len(self.active) / self.size if self.size else 0.0


def select_blocks(norms, threshold: float) -> BlockPartition:
    """I = {i : norms[i] >= threshold * max(norms)}, J its complement."""
    norms = np.asarray(norms, dtype=float)
    if norms.ndim != 1 or norms.size == 0:
        raise ValueError("norms must be a nonempty vector")
    if np.any(norms < 0):
        raise ValueError("gradient norms must be nonnegative")
    cutoff = threshold * norms.max()
    mask = norms >= cutoff
    return BlockPartition(tuple(np.flatnonzero(mask).tolist()), tuple(np.flatnonzero(~mask).tolist()))


def recombine(train: SpikeTrain, partition: BlockPartition, inner: DescentOutcome) -> SpikeTrain:
    """Put updated active spikes back in place of their originals.

    Frozen spikes are copied unchanged. Active spikes removed by a merge leave
    their slot empty, so indices are renumbered only when the count drops.
    """
    active = np.asarray(partition.active, dtype=int)
    updated = {int(active[o]): k for k, o in enumerate(inner.origins)}
    frozen = set(partition.frozen)
    amps, pos = [], []
    for i in range(len(train)):
        if i in frozen:
            amps.append(train.amplitudes[i])
            pos.append(train.positions[i])
        elif i in updated:
            k = updated[i]
            amps.append(inner.train.amplitudes[k])
            pos.append(inner.train.positions[k])
    if not amps:
        return SpikeTrain.empty(train.dimension)
    return SpikeTrain(np.array(amps), np.array(pos))


def bcd_run(
    obj: Objective,
    init: SpikeTrain,
    cfg: BcdConfig,
    *,
    method: str = "bcd",
    seed: int = -1,
    clock_start: float | None = None,
) -> DescentOutcome:
    if len(init) == 0:
        raise ValueError("BCD needs a nonempty initial train")
    start = time.perf_counter() if clock_start is None else clock_start
    trace = RunTrace()
    train = init
    res = obj.residual(train)
    value = obj.norm_sq(res)
    grads = 0
    inner_total = 0
    status = "budget_exhausted"
    n = 0
    if value <= cfg.stop_residual:
        status = "converged"
    step = cfg.descent.step_init
    while status == "budget_exhausted" and n < cfg.outer_iterations:
        k = len(train)
        amp_grad, pos_grad, _ = obj.gradient_arrays(train.amplitudes, train.positions, residual=res)
        norms = np.sqrt(amp_grad**2 + np.einsum("nd,nd->n", pos_grad, pos_grad))
        grads += k
        if norms.max() < STATIONARY_NORM:
            status = "stationary"
            break
        part = select_blocks(norms, cfg.threshold)
        active = list(part.active)
        y_tilde = obj.observation - obj.operator.apply(train.subset(part.frozen))
        # the active subtrain's residual against y_tilde is the full residual
        inner = projected_descent(
            obj.with_observation(y_tilde),
            train.subset(active),
            cfg.descent,
            cfg.inner_iterations,
            stop_on_projection=True,
            record=False,
            step=step,
            residual=res,
            gradient=(amp_grad[active], pos_grad[active]),
        )
        step = inner.step
        grads += inner.block_gradients
        inner_total += inner.iterations_run
        train = recombine(train, part, inner)
        res = inner.residual
        value = obj.norm_sq(res)
        n += 1
        trace.append(
            TraceRow(method, seed, n, time.perf_counter() - start, value, len(train), part.active_fraction)
        )
        if value <= cfg.stop_residual:
            status = "converged"
        elif len(train) == 0:
            status = "empty"
        elif inner.status == "step_underflow" and len(part.frozen) == 0:
            status = "step_underflow"
    return DescentOutcome(
        train, n, len(train) < len(init), trace, status, value, np.arange(len(train)), grads, inner_total
    )
