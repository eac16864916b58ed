"""Discrete spike measures, separation constraints and dipoles.

A spike train is the finite measure ``sum_i a_i delta_{t_i}`` on R^d, stored as an
amplitude vector of shape (K,) and a position array of shape (K, d).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Spike:
    amplitude: float
    position: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "amplitude", float(self.amplitude))
        object.__setattr__(self, "position", _frozen(np.atleast_1d(self.position)))


@dataclass(frozen=True, eq=False)
class SpikeTrain:
    """Immutable weighted sum of Diracs.

    Spike order is preserved by every operation except explicit removal or merging,
    so that block indices stay meaningful across iterations.
    """

    amplitudes: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=float).reshape(-1)
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos.reshape(len(amps), -1) if len(amps) else pos.reshape(0, max(pos.size, 1))
        if pos.ndim != 2 or pos.shape[0] != amps.shape[0]:
            raise ValueError(
                f"positions shape {pos.shape} incompatible with {amps.shape[0]} amplitudes"
            )
        if pos.shape[1] < 1:
            raise ValueError("dimension must be a positive integer")
        object.__setattr__(self, "amplitudes", _frozen(amps))
        object.__setattr__(self, "positions", _frozen(pos))

    @classmethod
    def empty(cls, dimension: int) -> "SpikeTrain":
        return cls(np.zeros(0), np.zeros((0, dimension)))

    @classmethod
    def from_spikes(cls, spikes: Sequence[Spike], dimension: int | None = None) -> "SpikeTrain":
        if not spikes:
            if dimension is None:
                raise ValueError("dimension required for an empty spike list")
            return cls.empty(dimension)
        dims = {s.position.shape[0] for s in spikes}
        if len(dims) != 1 or (dimension is not None and dims != {dimension}):
            raise ValueError(f"spikes do not share a single dimension: {sorted(dims)}")
        return cls([s.amplitude for s in spikes], np.stack([s.position for s in spikes]))

    @property
    def dimension(self) -> int:
        return self.positions.shape[1]

    def __len__(self) -> int:
        return self.amplitudes.shape[0]

    def __getitem__(self, i: int) -> Spike:
        return Spike(self.amplitudes[i], self.positions[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __repr__(self) -> str:
        return f"SpikeTrain(K={len(self)}, d={self.dimension})"

    def subset(self, indices: Iterable[int]) -> "SpikeTrain":
        idx = np.asarray(list(indices), dtype=int)
        return SpikeTrain(self.amplitudes[idx], self.positions[idx].reshape(len(idx), self.dimension))

    def concat(self, other: "SpikeTrain") -> "SpikeTrain":
        if other.dimension != self.dimension:
            raise ValueError("dimension mismatch")
        return SpikeTrain(
            np.concatenate([self.amplitudes, other.amplitudes]),
            np.concatenate([self.positions, other.positions]),
        )

    def scaled(self, factor: float) -> "SpikeTrain":
        return SpikeTrain(factor * self.amplitudes, self.positions)

    def with_parameters(self, amplitudes, positions) -> "SpikeTrain":
        return SpikeTrain(amplitudes, positions)

    def identical(self, other: "SpikeTrain") -> bool:
        """Bit-level equality of amplitudes and positions."""
        return (
            self.amplitudes.shape == other.amplitudes.shape
            and self.positions.shape == other.positions.shape
            and np.array_equal(self.amplitudes, other.amplitudes)
            and np.array_equal(self.positions, other.positions)
        )

    # -- CSV: header ``amplitude,x1,...,xd``
    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["amplitude"] + [f"x{r + 1}" for r in range(self.dimension)])
        for a, t in zip(self.amplitudes, self.positions):
            writer.writerow([repr(float(a))] + [repr(float(v)) for v in t])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, source: str | Path) -> "SpikeTrain":
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
            text = Path(source).read_text(encoding="utf-8")
        else:
            text = source
        rows = list(csv.reader(io.StringIO(text)))
        header = rows[0]
        if not header or header[0] != "amplitude":
            raise ValueError("CSV header must start with 'amplitude'")
        d = len(header) - 1
        expected = ["amplitude"] + [f"x{r + 1}" for r in range(d)]
        if header != expected:
            raise ValueError(f"unexpected header {header}, wanted {expected}")
        body = [r for r in rows[1:] if r]
        if not body:
            return cls.empty(d)
        data = np.array([[float(v) for v in r] for r in body])
        return cls(data[:, 0], data[:, 1:])


@dataclass(frozen=True)
class SeparationModel:
    epsilon: float
    max_spikes: int

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.max_spikes < 1:
            raise ValueError("max_spikes must be positive")


@dataclass(frozen=True)
class Dipole:
    """The measure ``a delta_t - b delta_s`` with ``|t - s| <= epsilon``."""

    a: float
    t: np.ndarray
    b: float
    s: np.ndarray
    epsilon: float

    def __post_init__(self):
        t = _frozen(np.atleast_1d(self.t))
        s = _frozen(np.atleast_1d(self.s))
        if t.shape != s.shape:
            raise ValueError("dipole supports must share a dimension")
        if np.linalg.norm(t - s) > self.epsilon:
            raise ValueError(f"|t - s| = {np.linalg.norm(t - s):.3g} exceeds epsilon = {self.epsilon}")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))

    @property
    def dimension(self) -> int:
        return self.t.shape[0]

    def as_train(self) -> SpikeTrain:
        """Equivalent 2-spike train with amplitudes (a, -b)."""
        return SpikeTrain([self.a, -self.b], np.stack([self.t, self.s]))


def pairwise_distances(positions: np.ndarray, others: np.ndarray | None = None) -> np.ndarray:
    others = positions if others is None else others
    diff = positions[:, None, :] - others[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def min_pairwise_separation(train: SpikeTrain) -> float:
    """Smallest Euclidean distance between two distinct spikes (inf below 2 spikes)."""
    if len(train) < 2:
        return np.inf
    dist = pairwise_distances(train.positions)
    iu = np.triu_indices(len(train), k=1)
    return float(dist[iu].min())


def satisfies_separation(train: SpikeTrain, model: SeparationModel) -> bool:
    return min_pairwise_separation(train) > model.epsilon


def dipoles_are_separated(n1: Dipole, n2: Dipole, eps: float) -> bool:
    pairs = ((n1.t, n2.t), (n1.t, n2.s), (n1.s, n2.t), (n1.s, n2.s))
    return all(np.linalg.norm(p - q) > eps for p, q in pairs)
