"""Projected descent: FISTA with function-value restart, plus spike merging.

Used directly as the PGD baseline and as the inner solver of block coordinate
descent. Positions are optimised in rescaled coordinates ``u = t / scale`` so that
one step size serves amplitudes and anisotropic axes alike.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .objective import Objective
from .spikes import SpikeTrain, pairwise_distances
from .trace import RunTrace, TraceRow

CANCELLATION_RTOL = 1e-10
MAX_HALVINGS = 60


@dataclass(frozen=True)
class DescentConfig:
    merge_radius: float
    max_iterations: int = 50_000
    step_init: float = 1.0
    backtrack_factor: float = 0.5
    sufficient_decrease: float = 1e-4
    stop_residual: float = 2e-8
    position_step_scale: tuple[float, ...] | None = None
    # retry one notch larger than the last accepted step before backtracking
    step_growth: bool = False
    # spikes with |amplitude| below this are dropped by the projection (0 disables)
    prune_amplitude: float = 0.0

    def __post_init__(self):
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if self.step_init <= 0 or self.sufficient_decrease <= 0:
            raise ValueError("step_init and sufficient_decrease must be positive")
        if self.merge_radius <= 0 or self.stop_residual <= 0:
            raise ValueError("merge_radius and stop_residual must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.prune_amplitude < 0:
            raise ValueError("prune_amplitude must be nonnegative")
        if self.position_step_scale is not None and min(self.position_step_scale) <= 0:
            raise ValueError("position_step_scale entries must be positive")

    def scales(self, d: int) -> np.ndarray:
        if self.position_step_scale is None:
            return np.ones(d)
        s = np.asarray(self.position_step_scale, dtype=float)
        if s.shape != (d,):
            raise ValueError(f"position_step_scale needs {d} entries")
        return s


@dataclass
class DescentOutcome:
    train: SpikeTrain
    iterations_run: int
    projected: bool
    trace: RunTrace = field(default_factory=RunTrace)
    status: str = "budget_exhausted"
    value: float = np.nan
    # for each returned spike, the index in the input train it descends from
    origins: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    block_gradients: int = 0
    inner_iterations: int = 0
    step: float = np.nan
    residual: np.ndarray | None = None


def _merge_arrays(amps: np.ndarray, pos: np.ndarray, radius: float, prune: float = 0.0):
    """Greedy closest-pair merging; returns survivors and their origin indices."""
    amps = amps.astype(float).copy()
    pos = pos.astype(float).copy()
    alive = np.ones(len(amps), dtype=bool)
    if len(amps) < 2:
        keep = np.flatnonzero(np.abs(amps) >= prune) if prune > 0 else np.arange(len(amps))
        return amps[keep], pos[keep], keep
    dist = pairwise_distances(pos)
    np.fill_diagonal(dist, np.inf)
    while True:
        flat = int(np.argmin(dist))
        i, j = divmod(flat, dist.shape[1])
        if not dist[i, j] < radius:
            break
        i, j = min(i, j), max(i, j)
        a = amps[i] + amps[j]
        if abs(a) < CANCELLATION_RTOL * (abs(amps[i]) + abs(amps[j])):
            alive[i] = alive[j] = False
            dist[[i, j], :] = np.inf
            dist[:, [i, j]] = np.inf
            continue
        pos[i] = (amps[i] * pos[i] + amps[j] * pos[j]) / a
        amps[i] = a
        alive[j] = False
        dist[j, :] = np.inf
        dist[:, j] = np.inf
        row = np.linalg.norm(pos - pos[i], axis=1)
        row[~alive] = np.inf
        row[i] = np.inf
        dist[i, :] = row
        dist[:, i] = row
    if prune > 0:
        alive &= np.abs(amps) >= prune
    keep = np.flatnonzero(alive)
    return amps[keep], pos[keep], keep


def merge_projection(train: SpikeTrain, merge_radius: float, prune_amplitude: float = 0.0) -> SpikeTrain:
    """Merge spikes closer than ``merge_radius`` until none remain.

    The closest pair is replaced by one spike carrying the summed amplitude at the
    amplitude-weighted barycentre; a pair whose amplitudes cancel is deleted.
    Survivors keep their relative order. With ``prune_amplitude > 0`` spikes whose
    amplitude magnitude ends below it are removed as well.
    """
    amps, pos, _ = _merge_arrays(train.amplitudes, train.positions, merge_radius, prune_amplitude)
    return SpikeTrain(amps, pos.reshape(len(amps), train.dimension))


class _Clock:
    def __init__(self, start: float | None):
        self.start = time.perf_counter() if start is None else start

    def __call__(self) -> float:
        return time.perf_counter() - self.start


def projected_descent(
    obj: Objective,
    train: SpikeTrain,
    cfg: DescentConfig,
    iteration_budget: int,
    stop_on_projection: bool,
    *,
    record: bool = True,
    method: str = "pgd",
    seed: int = -1,
    clock_start: float | None = None,
    iteration_offset: int = 0,
    step: float | None = None,
    residual: np.ndarray | None = None,
    gradient: tuple[np.ndarray, np.ndarray] | None = None,
) -> DescentOutcome:
    """FISTA with backtracking and restart, merging spikes after each accepted step.

    ``step`` warm-starts the line search. ``residual`` and ``gradient`` may carry
    values already computed for ``train`` against ``obj`` so they are not redone.
    """
    if iteration_budget < 1:
        raise ValueError("iteration_budget must be >= 1")
    clock = _Clock(clock_start)
    d = train.dimension
    scale = cfg.scales(d)
    trace = RunTrace()

    amps = train.amplitudes.copy()
    u = train.positions / scale
    origins = np.arange(len(amps))
    res = obj.residual_of(amps, u * scale) if residual is None else residual
    f = obj.norm_sq(res)
    grads = 0
    step = cfg.step_init if step is None else step
    if f <= cfg.stop_residual or len(amps) == 0:
        return DescentOutcome(train, 0, False, trace, "converged", f, origins, 0, step=step, residual=res)

    prev_amps, prev_u = amps, u
    t_k, beta = 1.0, 0.0
    status = "budget_exhausted"
    projected = False
    it = 0
    while it < iteration_budget:
        y_amps = amps + beta * (amps - prev_amps)
        y_u = u + beta * (u - prev_u)
        if beta != 0.0:
            y_res = obj.residual_of(y_amps, y_u * scale)
            f_y = obj.norm_sq(y_res)
        else:
            y_res, f_y = res, f

        if gradient is not None:
            ag, pg = gradient
            gradient = None
        else:
            ag, pg, _ = obj.gradient_arrays(y_amps, y_u * scale, residual=y_res)
            grads += len(ag)
        gu = pg * scale
        gsq = float(ag @ ag + np.einsum("nd,nd->", gu, gu))
        if gsq == 0.0:
            status = "stationary"
            break

        trial = min(cfg.step_init, step / cfg.backtrack_factor) if cfg.step_growth else step
        for _ in range(MAX_HALVINGS):
            n_amps = y_amps - trial * ag
            n_u = y_u - trial * gu
            n_res = obj.residual_of(n_amps, n_u * scale)
            f_new = obj.norm_sq(n_res)
            if f_new <= f_y - cfg.sufficient_decrease * trial * gsq:
                break
            trial *= cfg.backtrack_factor
        else:
            if beta != 0.0:
                # momentum point may be hopeless; fall back to a plain step
                t_k, beta = 1.0, 0.0
                prev_amps, prev_u = amps, u
                continue
            status = "step_underflow"
            break
        step = trial

        if f_new > f and beta != 0.0:
            # function-value restart: drop momentum, redo from the last accepted iterate
            t_k, beta = 1.0, 0.0
            prev_amps, prev_u = amps, u
            continue

        prev_amps, prev_u = amps, u
        amps, u, res, f = n_amps, n_u, n_res, f_new
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_k * t_k))
        beta = (t_k - 1.0) / t_next
        t_k = t_next
        it += 1

        merged_amps, merged_pos, keep = _merge_arrays(amps, u * scale, cfg.merge_radius, cfg.prune_amplitude)
        if len(keep) != len(amps):
            amps, u = merged_amps, merged_pos / scale
            origins = origins[keep]
            prev_amps, prev_u = amps, u
            t_k, beta = 1.0, 0.0
            res = obj.residual_of(amps, u * scale)
            f = obj.norm_sq(res)
            projected = True
        if record:
            trace.append(
                TraceRow(method, seed, iteration_offset + it, clock(), f, len(amps), 1.0)
            )
        if f <= cfg.stop_residual:
            status = "converged"
            break
        if projected and stop_on_projection:
            status = "projected"
            break
        if len(amps) == 0:
            status = "converged" if f <= cfg.stop_residual else "empty"
            break

    out = SpikeTrain(amps, (u * scale).reshape(len(amps), d))
    return DescentOutcome(out, it, projected, trace, status, f, origins, grads, step=step, residual=res)


def pgd(obj: Objective, init: SpikeTrain, cfg: DescentConfig, **kwargs) -> DescentOutcome:
    """Projected gradient descent baseline: one descent on all spikes, merging as it goes."""
    return projected_descent(obj, init, cfg, cfg.max_iterations, stop_on_projection=False, **kwargs)
