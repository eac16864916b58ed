"""Numerical checks of the dipole decomposition bounds.

For a well-initialised estimate (each estimated spike within a third of the
separation of its true spike) the residual splits into a sum of dipoles. These
helpers evaluate both sides of the energy and gradient bounds and estimate the
operator's mutual coherence over separated dipoles.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .objective import Objective
from .operators import MeasurementOperator
from .spikes import Dipole, SpikeTrain, dipoles_are_separated, min_pairwise_separation

BOUND_SLACK = 1e-10
MIN_ENERGY = 1e-8
MAX_ATTEMPTS = 1_000_000
IMAG_FLAG = 1e-8


class DomainTooSmallError(RuntimeError):
    pass


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class CoherenceEstimate:
    mu: float
    trials: int
    epsilon: float
    # largest |Im <A n1, A n2>| / (|A n1|^2 |A n2|^2) seen, and how many pairs exceeded IMAG_FLAG
    max_imag_ratio: float = 0.0
    imag_flagged: int = 0


@dataclass(frozen=True)
class BoundReport:
    lhs: float
    rhs: float
    holds: bool
    mu: float
    K: int
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "lhs", float(self.lhs))
        object.__setattr__(self, "rhs", float(self.rhs))
        object.__setattr__(self, "holds", bool(self.holds))
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "K", int(self.K))

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _inner(u: np.ndarray, v: np.ndarray) -> complex:
    return complex(np.vdot(u, v))


def _norm_sq(u: np.ndarray) -> float:
    return float(np.real(np.vdot(u, u)))


def dipole_energy(op: MeasurementOperator, n: Dipole) -> float:
    return _norm_sq(op.apply_dipole(n))


def _random_dipole(rng, op: MeasurementOperator, radius: float) -> Dipole:
    t = op.domain_lower + rng.uniform(size=op.d) * op.domain_lengths
    direction = rng.normal(size=op.d)
    direction /= np.linalg.norm(direction)
    s = t + direction * rng.uniform(0.0, radius)
    a, b = rng.uniform(-2.0, 2.0, size=2)
    return Dipole(a, t, b, s, radius)


def estimate_mu(op: MeasurementOperator, eps: float, trials: int, seed: int = 0) -> CoherenceEstimate:
    """Monte-Carlo max of Re<A n1, A n2> / (|A n1|^2 |A n2|^2) over eps/3-separated eps/3-dipoles."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    radius = eps / 3.0
    mu = -np.inf
    max_imag = 0.0
    flagged = 0
    attempts = 0
    for _ in range(trials):
        while True:
            attempts += 1
            if attempts > MAX_ATTEMPTS:
                raise DomainTooSmallError(
                    f"could not draw separated dipoles after {MAX_ATTEMPTS} attempts (eps={eps})"
                )
            n1 = _random_dipole(rng, op, radius)
            n2 = _random_dipole(rng, op, radius)
            if not dipoles_are_separated(n1, n2, radius):
                continue
            v1, v2 = op.apply_dipole(n1), op.apply_dipole(n2)
            e1, e2 = _norm_sq(v1), _norm_sq(v2)
            if e1 < MIN_ENERGY or e2 < MIN_ENERGY:
                continue
            break
        ip = _inner(v1, v2)
        mu = max(mu, ip.real / (e1 * e2))
        imag = abs(ip.imag) / (e1 * e2)
        max_imag = max(max_imag, imag)
        flagged += imag > IMAG_FLAG
    return CoherenceEstimate(float(mu), trials, eps, max_imag, flagged)


def instance_dipoles(truth: SpikeTrain, init: SpikeTrain) -> list[Dipole]:
    """Pair truth[i] with init[i], checking the well-initialisation premise."""
    if len(truth) != len(init):
        raise PreconditionError(f"truth has {len(truth)} spikes, init has {len(init)}")
    if truth.dimension != init.dimension:
        raise PreconditionError("truth and init live in different dimensions")
    if len(truth) == 0:
        return []
    offsets = np.linalg.norm(truth.positions - init.positions, axis=1)
    sep = min_pairwise_separation(truth)
    if not 3.0 * offsets.max() < sep:
        raise PreconditionError(
            f"not well initialised: max offset {offsets.max():.3g} must be below "
            f"a third of the truth separation {sep:.3g}"
        )
    radius = max(max(float(np.linalg.norm(d)) for d in truth.positions - init.positions), np.finfo(float).tiny)
    return [
        Dipole(a, t, b, s, radius)
        for a, t, b, s in zip(truth.amplitudes, truth.positions, init.amplitudes, init.positions)
    ]


def instance_mu(op: MeasurementOperator, truth: SpikeTrain, init: SpikeTrain, derivatives: bool = True) -> float:
    """Smallest coherence constant valid for this instance's own dipole pairs.

    With ``derivatives`` the Dirac derivatives d_r A delta_{s_i} are included as
    generalised dipoles (absolute ratio against every other dipole), which is what
    the gradient bound needs.
    """
    dipoles = instance_dipoles(truth, init)
    images = [op.apply_dipole(n) for n in dipoles]
    energies = [_norm_sq(v) for v in images]
    mu = 0.0
    K = len(dipoles)
    for i in range(K):
        for j in range(K):
            if i == j or energies[i] < MIN_ENERGY**2 or energies[j] < MIN_ENERGY**2:
                continue
            mu = max(mu, _inner(images[i], images[j]).real / (energies[i] * energies[j]))
    if derivatives:
        for i in range(K):
            jac = op.apply_dirac_jacobian(init.positions[i])
            for r in range(op.d):
                dn = _norm_sq(jac[r])
                if dn == 0:
                    continue
                for j in range(K):
                    if j == i or energies[j] < MIN_ENERGY**2:
                        continue
                    mu = max(mu, abs(_inner(jac[r], images[j]).real) / (dn * energies[j]))
    return mu


def check_energy_bound(op: MeasurementOperator, truth: SpikeTrain, init: SpikeTrain, mu: float) -> BoundReport:
    dipoles = instance_dipoles(truth, init)
    energies = np.array([dipole_energy(op, n) for n in dipoles])
    lhs = _norm_sq(op.apply(truth) - op.apply(init))
    cross = energies.sum() ** 2 - (energies**2).sum()
    rhs = float(energies.sum() + mu * cross)
    return BoundReport(lhs, rhs, lhs <= rhs + BOUND_SLACK, mu, len(dipoles))


def check_gradient_bound(
    op: MeasurementOperator,
    truth: SpikeTrain,
    init: SpikeTrain,
    mu: float,
    i: int,
    r: int,
    *,
    norm_form: str = "proof",
    amplitude: str = "init",
) -> BoundReport:
    """|d_{i,r} |y - Ax|^2 - d_{i,r} |A nu_i|^2| against its coherence bound.

    ``norm_form="proof"`` uses |d_r A delta_{s_i}|^2; ``"statement"`` uses
    |d_{i,r} A nu_i|^2 = b_i^2 |d_r A delta_{s_i}|^2. ``amplitude`` picks the
    prefactor: ``"init"`` is the amplitude b_i of the differentiated spike,
    ``"truth"`` the true amplitude a_i.
    """
    dipoles = instance_dipoles(truth, init)
    K = len(dipoles)
    if not 0 <= i < K or not 0 <= r < op.d:
        raise IndexError(f"block ({i}, {r}) out of range for K={K}, d={op.d}")
    full = Objective(op, op.apply(truth)).block_gradient(init, i).position_grad[r]
    nu = dipoles[i]
    single = Objective(op, op.zeros()).block_gradient(nu.as_train(), 1).position_grad[r]
    lhs = abs(full - single)

    dnorm = _norm_sq(op.apply_dirac_jacobian(nu.s)[r])
    if norm_form == "statement":
        dnorm *= nu.b**2
    elif norm_form != "proof":
        raise ValueError(f"unknown norm_form {norm_form!r}")
    if amplitude == "init":
        amp = abs(nu.b)
    elif amplitude == "truth":
        amp = abs(nu.a)
    else:
        raise ValueError(f"unknown amplitude {amplitude!r}")
    max_energy = max(dipole_energy(op, n) for n in dipoles)
    rhs = 2.0 * amp * (K - 1) * mu * dnorm * max_energy
    return BoundReport(float(lhs), float(rhs), lhs <= rhs + BOUND_SLACK, mu, K)


def random_well_initialized(
    op: MeasurementOperator, K: int, eps: float, rng, amplitude_range=(1.0, 2.0)
) -> tuple[SpikeTrain, SpikeTrain]:
    """Draw an eps-separated truth and an init within eps/3 of it, spike by spike."""
    pts: list[np.ndarray] = []
    attempts = 0
    while len(pts) < K:
        attempts += 1
        if attempts > MAX_ATTEMPTS:
            raise DomainTooSmallError(f"cannot place {K} spikes {eps}-apart")
        p = op.domain_lower + rng.uniform(size=op.d) * op.domain_lengths
        if all(np.linalg.norm(p - q) > eps for q in pts):
            pts.append(p)
    truth_pos = np.array(pts).reshape(K, op.d)
    direction = rng.normal(size=(K, op.d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    # strictly inside eps/3
    offsets = direction * rng.uniform(0.0, 0.99 * eps / 3.0, size=(K, 1))
    lo, hi = amplitude_range
    truth = SpikeTrain(rng.uniform(lo, hi, K), truth_pos)
    init = SpikeTrain(rng.uniform(lo, hi, K), truth_pos + offsets)
    return truth, init
