"""Linear measurement operators mapping spike trains to measurement vectors.

Two operators are provided: random Fourier sampling and a multi-plane Gaussian PSF
stand-in for MA-TIRF microscopy. Both expose batched atom evaluations so the
objective can compute many block gradients against one shared residual.

Inner products are Hermitian, conjugate-linear in the first argument.
"""
from __future__ import annotations

import csv
import io
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .spikes import Dipole, SpikeTrain


class DimensionError(ValueError):
    """Raised when a position or train does not live in the operator's R^d."""


class MeasurementOperator(ABC):
    """Linear map A from finite measures on R^d to C^m.

    Subclasses implement the batched primitives ``atoms`` and ``atom_jacobians``;
    everything else is derived from those and may be overridden for speed.
    """

    m: int
    d: int
    domain_lower: np.ndarray
    domain_upper: np.ndarray

    @abstractmethod
    def atoms(self, positions: np.ndarray) -> np.ndarray:
        """Return A delta_t for each row of ``positions``, shape (n, m)."""

    @abstractmethod
    def atom_jacobians(self, positions: np.ndarray) -> np.ndarray:
        """Return d/dt_r A delta_t for each position, shape (n, d, m)."""

    @abstractmethod
    def natural_length_scales(self) -> np.ndarray:
        """Per-axis length over which an atom changes appreciably."""

    @property
    def domain_lengths(self) -> np.ndarray:
        return self.domain_upper - self.domain_lower

    @property
    def domain_center(self) -> np.ndarray:
        return 0.5 * (self.domain_lower + self.domain_upper)

    def _check_positions(self, positions) -> np.ndarray:
        pos = np.asarray(positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[None, :]
        if pos.ndim != 2 or pos.shape[1] != self.d:
            raise DimensionError(f"expected positions in R^{self.d}, got shape {np.shape(positions)}")
        return pos

    def _check_train(self, train: SpikeTrain):
        if train.dimension != self.d:
            raise DimensionError(f"train lives in R^{train.dimension}, operator in R^{self.d}")

    def zeros(self) -> np.ndarray:
        return np.zeros(self.m, dtype=self.dtype)

    @property
    def dtype(self):
        return np.complex128

    def apply_dirac(self, position) -> np.ndarray:
        pos = np.asarray(position, dtype=float)
        if pos.ndim != 1:
            raise DimensionError("apply_dirac takes a single position")
        return self.atoms(self._check_positions(pos))[0]

    def apply_dirac_jacobian(self, position) -> np.ndarray:
        """Rows r = partial derivative of A delta_t along axis r, shape (d, m)."""
        pos = np.asarray(position, dtype=float)
        if pos.ndim != 1:
            raise DimensionError("apply_dirac_jacobian takes a single position")
        return self.atom_jacobians(self._check_positions(pos))[0]

    def synthesize(self, amplitudes: np.ndarray, positions: np.ndarray) -> np.ndarray:
        if len(amplitudes) == 0:
            return self.zeros()
        return amplitudes @ self.atoms(positions)

    def apply(self, train: SpikeTrain) -> np.ndarray:
        self._check_train(train)
        return self.synthesize(train.amplitudes, train.positions)

    def apply_dipole(self, dipole: Dipole) -> np.ndarray:
        if dipole.dimension != self.d:
            raise DimensionError(f"dipole lives in R^{dipole.dimension}, operator in R^{self.d}")
        return self.apply(dipole.as_train())

    def correlations(self, positions: np.ndarray, residual: np.ndarray):
        """Hermitian products <A delta_t, r> and <d_r A delta_t, r> for each position.

        Returns ``(c, dc)`` of shapes (n,) and (n, d).
        """
        atoms = self.atoms(positions)
        jac = self.atom_jacobians(positions)
        return atoms.conj() @ residual, jac.conj() @ residual

    def atom_norms_sq(self, positions: np.ndarray) -> np.ndarray:
        atoms = self.atoms(positions)
        return np.real(np.einsum("nm,nm->n", atoms.conj(), atoms))

    def grid_axes(self, resolution: Sequence[int]) -> list[np.ndarray]:
        """Cell-centred uniform grid of ``resolution[r]`` points along each axis."""
        if len(resolution) != self.d:
            raise DimensionError(f"grid resolution needs {self.d} entries")
        axes = []
        for lo, hi, n in zip(self.domain_lower, self.domain_upper, resolution):
            step = (hi - lo) / n
            axes.append(lo + step * (np.arange(n) + 0.5))
        return axes

    def grid_correlations(self, axes: Sequence[np.ndarray], residual: np.ndarray) -> np.ndarray:
        """Normalised |<A delta_t, r>| / ||A delta_t|| over a tensor grid.

        Output has shape ``tuple(len(a) for a in axes)`` in C (lexicographic) order.
        """
        mesh = np.meshgrid(*axes, indexing="ij")
        points = np.stack([g.reshape(-1) for g in mesh], axis=1)
        out = np.empty(points.shape[0])
        chunk = max(1, 2**22 // max(self.m, 1))
        for start in range(0, points.shape[0], chunk):
            atoms = self.atoms(points[start:start + chunk])
            corr = np.abs(atoms.conj() @ residual)
            norms = np.sqrt(np.real(np.einsum("nm,nm->n", atoms.conj(), atoms)))
            out[start:start + chunk] = corr / np.where(norms > 0, norms, np.inf)
        return out.reshape(mesh[0].shape)


# ---------------------------------------------------------------------------
# Random Fourier sampling


def default_frequency_scale(domain_lengths) -> float:
    # about three oscillations across the shortest domain side
    return 2.0 * np.pi * 3.0 / float(np.min(domain_lengths))


@dataclass(frozen=True)
class FourierOperatorConfig:
    m: int
    d: int
    seed: int = 0
    frequency_scale: float | None = None
    domain: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.m < 1 or self.d < 1:
            raise ValueError("m and d must be positive")
        if self.domain is not None and len(self.domain) != self.d:
            raise ValueError("domain needs one length per dimension")

    def lengths(self) -> np.ndarray:
        return np.ones(self.d) if self.domain is None else np.asarray(self.domain, dtype=float)

    def scale(self) -> float:
        if self.frequency_scale is None:
            return default_frequency_scale(self.lengths())
        return float(self.frequency_scale)

    def draw_frequencies(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        return rng.normal(0.0, self.scale(), size=(self.m, self.d))


class FourierOperator(MeasurementOperator):
    """Entry j of A delta_t is exp(i <w_j, t>) / sqrt(m); every atom has unit norm."""

    def __init__(self, frequencies: np.ndarray, domain_lengths=None, config: FourierOperatorConfig | None = None):
        freqs = np.array(frequencies, dtype=float)
        if freqs.ndim != 2:
            raise ValueError("frequencies must be an (m, d) array")
        freqs.flags.writeable = False
        self.frequencies = freqs
        self.m, self.d = freqs.shape
        lengths = np.ones(self.d) if domain_lengths is None else np.asarray(domain_lengths, dtype=float)
        if lengths.shape != (self.d,) or np.any(lengths <= 0):
            raise ValueError("domain lengths must be d positive reals")
        self.domain_lower = np.zeros(self.d)
        self.domain_upper = lengths
        self.config = config
        self._inv_sqrt_m = 1.0 / np.sqrt(self.m)

    @classmethod
    def from_config(cls, cfg: FourierOperatorConfig) -> "FourierOperator":
        return cls(cfg.draw_frequencies(), cfg.lengths(), config=cfg)

    def atoms(self, positions):
        pos = self._check_positions(positions)
        return np.exp(1j * (pos @ self.frequencies.T)) * self._inv_sqrt_m

    def atom_jacobians(self, positions):
        atoms = self.atoms(positions)
        return 1j * self.frequencies.T[None, :, :] * atoms[:, None, :]

    def correlations(self, positions, residual):
        atoms = self.atoms(positions)
        weighted = atoms.conj() * residual[None, :]
        return weighted.sum(axis=1), -1j * (weighted @ self.frequencies)

    def atom_norms_sq(self, positions):
        return np.ones(self._check_positions(positions).shape[0])

    def natural_length_scales(self):
        return 1.0 / np.sqrt(np.mean(self.frequencies**2, axis=0))

    def frequencies_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["index"] + [f"w{r + 1}" for r in range(self.d)])
        for j, w in enumerate(self.frequencies):
            writer.writerow([j] + [repr(float(v)) for v in w])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


# ---------------------------------------------------------------------------
# Multi-plane Gaussian PSF (MA-TIRF stand-in)


def default_plane_decays(planes: int, depth: float) -> np.ndarray:
    """Axial rates so that exp(-rate * depth) runs linearly from 0.9 down to 0.3."""
    if planes == 1:
        attenuation = np.array([0.6])
    else:
        attenuation = np.linspace(0.9, 0.3, planes)
    return -np.log(attenuation) / depth


@dataclass(frozen=True)
class MultiPlanePSFConfig:
    planes: int = 4
    grid: tuple[int, int] = (64, 64)
    domain: tuple[float, float, float] = (6.4, 6.4, 0.8)
    psf_sigma: float | None = None
    plane_decays: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.planes < 1:
            raise ValueError("planes must be positive")
        if len(self.grid) != 2 or min(self.grid) < 1:
            raise ValueError("grid must be two positive pixel counts")
        if len(self.domain) != 3 or min(self.domain) <= 0:
            raise ValueError("domain must be three positive lengths")
        if self.psf_sigma is not None and self.psf_sigma <= 0:
            raise ValueError("psf_sigma must be positive")
        if self.plane_decays is not None:
            if len(self.plane_decays) != self.planes or min(self.plane_decays) <= 0:
                raise ValueError("plane_decays must be `planes` positive reals")

    @property
    def m(self) -> int:
        return self.planes * self.grid[0] * self.grid[1]

    @property
    def pixel_size(self) -> tuple[float, float]:
        return self.domain[0] / self.grid[0], self.domain[1] / self.grid[1]

    def sigma(self) -> float:
        if self.psf_sigma is None:
            return 2.0 * min(self.pixel_size)
        return float(self.psf_sigma)

    def decays(self) -> np.ndarray:
        if self.plane_decays is None:
            return default_plane_decays(self.planes, self.domain[2])
        return np.asarray(self.plane_decays, dtype=float)


class MultiPlanePSFOperator(MeasurementOperator):
    """Entry (p, px, py) = c * exp(-k_p z) * exp(-((x - cx)^2 + (y - cy)^2) / (2 sigma^2)).

    The constant c is fixed per instance so that the atom at the domain centre has
    unit norm. Output is real (float64); the imaginary part of every entry is zero.
    Measurement index is the C-order flattening of (plane, px, py).
    """

    d = 3

    def __init__(self, config: MultiPlanePSFConfig | None = None):
        self.config = cfg = config or MultiPlanePSFConfig()
        self.planes = cfg.planes
        self.nx, self.ny = cfg.grid
        self.m = cfg.m
        self.sigma = cfg.sigma()
        self.decays = cfg.decays()
        self.domain_lower = np.zeros(3)
        self.domain_upper = np.asarray(cfg.domain, dtype=float)
        px, py = cfg.pixel_size
        self.centers_x = px * (np.arange(self.nx) + 0.5)
        self.centers_y = py * (np.arange(self.ny) + 0.5)
        self._inv2s2 = 1.0 / (2.0 * self.sigma**2)
        self.scale = 1.0
        center = self.domain_center[None, :]
        self.scale = 1.0 / np.sqrt(self._separable_norms_sq(center)[0])

    @property
    def dtype(self):
        return np.float64

    def _factors(self, pos: np.ndarray):
        gx = np.exp(-((pos[:, 0:1] - self.centers_x[None, :]) ** 2) * self._inv2s2)
        gy = np.exp(-((pos[:, 1:2] - self.centers_y[None, :]) ** 2) * self._inv2s2)
        dz = np.exp(-pos[:, 2:3] * self.decays[None, :])
        return gx, gy, dz

    def _factor_derivatives(self, pos, gx, gy, dz):
        dgx = gx * (self.centers_x[None, :] - pos[:, 0:1]) / self.sigma**2
        dgy = gy * (self.centers_y[None, :] - pos[:, 1:2]) / self.sigma**2
        ddz = -dz * self.decays[None, :]
        return dgx, dgy, ddz

    def _separable_norms_sq(self, pos):
        gx, gy, dz = self._factors(pos)
        return self.scale**2 * (gx**2).sum(1) * (gy**2).sum(1) * (dz**2).sum(1)

    def _outer(self, dz, gx, gy):
        return self.scale * (dz[:, :, None, None] * gx[:, None, :, None] * gy[:, None, None, :])

    def atoms(self, positions):
        pos = self._check_positions(positions)
        gx, gy, dz = self._factors(pos)
        return self._outer(dz, gx, gy).reshape(pos.shape[0], self.m)

    def atom_jacobians(self, positions):
        pos = self._check_positions(positions)
        gx, gy, dz = self._factors(pos)
        dgx, dgy, ddz = self._factor_derivatives(pos, gx, gy, dz)
        jac = np.stack(
            [self._outer(dz, dgx, gy), self._outer(dz, gx, dgy), self._outer(ddz, gx, gy)], axis=1
        )
        return jac.reshape(pos.shape[0], 3, self.m)

    def synthesize(self, amplitudes, positions):
        if len(amplitudes) == 0:
            return self.zeros()
        pos = self._check_positions(positions)
        gx, gy, dz = self._factors(pos)
        weighted = (self.scale * np.asarray(amplitudes))[:, None, None] * dz[:, :, None] * gx[:, None, :]
        # (n, P, nx) x (n, ny) -> (P, nx, ny), summing over spikes in a fixed order
        out = np.einsum("npx,ny->pxy", weighted, gy)
        return out.reshape(self.m)

    def correlations(self, positions, residual):
        pos = self._check_positions(positions)
        gx, gy, dz = self._factors(pos)
        dgx, dgy, ddz = self._factor_derivatives(pos, gx, gy, dz)
        cube = residual.reshape(self.planes, self.nx, self.ny)
        ty = np.einsum("pxy,ny->npx", cube, gy)
        tdy = np.einsum("pxy,ny->npx", cube, dgy)
        s = self.scale
        c = s * np.einsum("npx,nx,np->n", ty, gx, dz)
        dc = np.stack(
            [
                s * np.einsum("npx,nx,np->n", ty, dgx, dz),
                s * np.einsum("npx,nx,np->n", tdy, gx, dz),
                s * np.einsum("npx,nx,np->n", ty, gx, ddz),
            ],
            axis=1,
        )
        return c, dc

    def atom_norms_sq(self, positions):
        return self._separable_norms_sq(self._check_positions(positions))

    def grid_correlations(self, axes, residual):
        ax, ay, az = (np.asarray(a, dtype=float) for a in axes)
        gx = np.exp(-((ax[:, None] - self.centers_x[None, :]) ** 2) * self._inv2s2)
        gy = np.exp(-((ay[:, None] - self.centers_y[None, :]) ** 2) * self._inv2s2)
        dz = np.exp(-az[:, None] * self.decays[None, :])
        cube = residual.reshape(self.planes, self.nx, self.ny)
        corr = self.scale * np.einsum("pxy,bx,cy,zp->bcz", cube, gx, gy, dz, optimize=True)
        norms = self.scale * np.sqrt(
            (gx**2).sum(1)[:, None, None] * (gy**2).sum(1)[None, :, None] * (dz**2).sum(1)[None, None, :]
        )
        return np.abs(corr) / norms

    def natural_length_scales(self):
        return np.array([self.sigma, self.sigma, 1.0 / np.sqrt(np.mean(self.decays**2))])


def operator_from_config(spec: dict) -> MeasurementOperator:
    """Build an operator from a plain mapping (as read from TOML or JSON)."""
    spec = dict(spec)
    kind = spec.pop("kind", "multiplane-psf")
    if kind == "fourier":
        if "domain" in spec and spec["domain"] is not None:
            spec["domain"] = tuple(spec["domain"])
        return FourierOperator.from_config(FourierOperatorConfig(**spec))
    if kind in ("multiplane-psf", "psf", "matirf"):
        for key in ("grid", "domain", "plane_decays"):
            if spec.get(key) is not None:
                spec[key] = tuple(spec[key])
        return MultiPlanePSFOperator(MultiPlanePSFConfig(**spec))
    raise ValueError(f"unknown operator kind {kind!r}")
