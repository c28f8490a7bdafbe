"""Closed-form Gaussian-state propagation through a single frequency jump.

Units follow the zero-point convention throughout: position and momentum
quadratures are measured in units of z_zp = sqrt(hbar/(2*m*omega)) and
p_zp = sqrt(hbar*m*omega/2), so vacuum has unit variance per quadrature
and a thermal state of mean occupancy n has covariance (2n+1)*identity.
Forces are normalized by p_zp and carry units of 1/s.

Position quadratures are measured relative to the minimum of the
*unsoftened* potential (stiffness omega) in the presence of the constant
per-shot force, which is what makes the rotation center of a softened
segment sit at q = (f0/omega)*(ratio^2 - 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvariantViolation

HBAR = 1.054571817e-34  # J*s

# PSD slack for covariance checks. Scaled by max(1, qq*pp) because the
# determinant of a rank-deficient covariance with O(x) entries carries
# O(x^2 * eps) rounding, which exceeds any fixed absolute epsilon.
PSD_EPS = 1e-12


def _require_finite(name, value):
    if not math.isfinite(value):
        raise DomainError(f"{name} must be finite, got {value!r}")
    return float(value)


def _require_positive(name, value):
    value = _require_finite(name, value)
    if value <= 0.0:
        raise DomainError(f"{name} must be > 0, got {value!r}")
    return value


def _require_nonnegative(name, value):
    value = _require_finite(name, value)
    if value < 0.0:
        raise DomainError(f"{name} must be >= 0, got {value!r}")
    return value


@dataclass(frozen=True, slots=True)
class PhaseVec:
    """Phase-space point (q, p) in zero-point units."""

    q: float
    p: float

    def __post_init__(self):
        object.__setattr__(self, "q", _require_finite("q", self.q))
        object.__setattr__(self, "p", _require_finite("p", self.p))

    def to_array(self) -> np.ndarray:
        return np.array([self.q, self.p])

    @classmethod
    def from_array(cls, arr) -> "PhaseVec":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (2,):
            raise DomainError(f"phase-space vector must have shape (2,), got {arr.shape}")
        return cls(float(arr[0]), float(arr[1]))

    def norm(self) -> float:
        return math.hypot(self.q, self.p)


@dataclass(frozen=True, slots=True)
class CovMat:
    """Symmetric 2x2 covariance (qq, qp, pp) in zero-point units squared.

    Positive semidefinite up to rounding: qq >= 0, pp >= 0 and
    qq*pp - qp^2 >= -PSD_EPS * max(1, qq*pp).
    """

    qq: float
    qp: float
    pp: float

    def __post_init__(self):
        qq = _require_finite("qq", self.qq)
        qp = _require_finite("qp", self.qp)
        pp = _require_finite("pp", self.pp)
        object.__setattr__(self, "qq", qq)
        object.__setattr__(self, "qp", qp)
        object.__setattr__(self, "pp", pp)
        if qq < 0.0 or pp < 0.0:
            raise InvariantViolation(f"negative quadrature variance: qq={qq}, pp={pp}")
        det = qq * pp - qp * qp
        if det < -PSD_EPS * max(1.0, qq * pp):
            raise InvariantViolation(f"covariance not PSD: det={det}")

    def to_matrix(self) -> np.ndarray:
        return np.array([[self.qq, self.qp], [self.qp, self.pp]])

    @classmethod
    def from_matrix(cls, mat) -> "CovMat":
        mat = np.asarray(mat, dtype=float)
        if mat.shape != (2, 2):
            raise DomainError(f"covariance must have shape (2, 2), got {mat.shape}")
        # symmetrize away rounding from matrix products
        return cls(float(mat[0, 0]), float(0.5 * (mat[0, 1] + mat[1, 0])), float(mat[1, 1]))

    @classmethod
    def identity(cls, scale: float = 1.0) -> "CovMat":
        return cls(scale, 0.0, scale)

    def det(self) -> float:
        return self.qq * self.pp - self.qp * self.qp

    def __add__(self, other: "CovMat") -> "CovMat":
        return CovMat(self.qq + other.qq, self.qp + other.qp, self.pp + other.pp)


@dataclass(frozen=True, slots=True)
class GaussianState:
    """Gaussian phase-space state: mean vector plus covariance."""

    mean: PhaseVec
    cov: CovMat

    @classmethod
    def vacuum(cls) -> "GaussianState":
        return cls(PhaseVec(0.0, 0.0), CovMat.identity())

    @classmethod
    def thermal(cls, n: float) -> "GaussianState":
        """State of mean occupancy n: zero mean, covariance (2n+1)*identity."""
        n = _require_nonnegative("n", n)
        return cls(PhaseVec(0.0, 0.0), CovMat.identity(2.0 * n + 1.0))


@dataclass(frozen=True, slots=True)
class OscillatorConfig:
    """Trap parameters: angular frequency, phonon heating rate, initial occupancy.

    gamma is the occupancy growth rate dn/dt at the unsoftened frequency;
    softening by `ratio` reduces the momentum diffusion by ratio^2.
    """

    omega: float  # rad/s
    gamma: float  # rad/s
    n0: float

    def __post_init__(self):
        object.__setattr__(self, "omega", _require_positive("omega", self.omega))
        object.__setattr__(self, "gamma", _require_nonnegative("gamma", self.gamma))
        object.__setattr__(self, "n0", _require_nonnegative("n0", self.n0))

    def initial_state(self) -> GaussianState:
        return GaussianState.thermal(self.n0)


@dataclass(frozen=True, slots=True)
class Segment:
    """One frequency-jump leg: reduction factor `ratio`, accumulated phase `phase`.

    The phase is the angle picked up in the softened potential, so the leg
    lasts t = ratio * phase / omega. Phases are *not* reduced modulo 2*pi:
    heating grows secularly with the total accumulated phase.
    """

    ratio: float
    phase: float

    def __post_init__(self):
        object.__setattr__(self, "ratio", _require_positive("ratio", self.ratio))
        object.__setattr__(self, "phase", _require_nonnegative("phase", self.phase))

    def duration(self, omega: float) -> float:
        omega = _require_positive("omega", omega)
        return self.ratio * self.phase / omega


@dataclass(frozen=True, slots=True)
class ForceModel:
    """Per-shot constant force statistics, normalized by p_zp (units 1/s)."""

    f0_mean: float
    f0_sigma: float

    def __post_init__(self):
        object.__setattr__(self, "f0_mean", _require_finite("f0_mean", self.f0_mean))
        object.__setattr__(self, "f0_sigma", _require_nonnegative("f0_sigma", self.f0_sigma))


def transition_matrix(ratio: float, phase: float) -> np.ndarray:
    """State-transition matrix of a segment softened by `ratio`, evolved by `phase`.

    Returns [[cos(phase), ratio*sin(phase)], [-sin(phase)/ratio, cos(phase)]],
    a symplectic (unit-determinant) matrix describing elliptical rotation of
    phase-space points about the origin.
    """
    ratio = _require_positive("ratio", ratio)
    phase = _require_finite("phase", phase)
    c, s = math.cos(phase), math.sin(phase)
    return np.array([[c, ratio * s], [-s / ratio, c]])


def squeeze_decomposition(ratio: float, phase: float):
    """Factor the transition matrix as squeeze * rotation * unsqueeze.

    Returns (S, R, S_inv) with S = diag(sqrt(ratio), 1/sqrt(ratio)) and R the
    circular rotation by `phase`; S @ R @ S_inv equals transition_matrix.
    """
    ratio = _require_positive("ratio", ratio)
    phase = _require_finite("phase", phase)
    root = math.sqrt(ratio)
    s_mat = np.array([[root, 0.0], [0.0, 1.0 / root]])
    s_inv = np.array([[1.0 / root, 0.0], [0.0, root]])
    c, s = math.cos(phase), math.sin(phase)
    rot = np.array([[c, s], [-s, c]])
    return s_mat, rot, s_inv


def displacement(f0: float, ratio: float, phase: float, omega: float) -> PhaseVec:
    """Mean displacement of a state starting at the origin, after `phase` of
    evolution in the potential softened by `ratio` under constant force f0.

    Equals (f0/omega) * ((ratio^2-1)/ratio) * [ratio*(1-cos), sin]; vanishes
    identically at ratio = 1 and closes after a full period (phase = 2*pi).
    """
    f0 = _require_finite("f0", f0)
    ratio = _require_positive("ratio", ratio)
    phase = _require_finite("phase", phase)
    omega = _require_positive("omega", omega)
    amp = (f0 / omega) * (ratio * ratio - 1.0) / ratio
    return PhaseVec(amp * ratio * (1.0 - math.cos(phase)), amp * math.sin(phase))


def rotation_center(f0: float, ratio: float, omega: float) -> PhaseVec:
    """Phase-space point about which the mean orbits during a softened segment.

    Sits on the position axis at (f0/omega)*(ratio^2 - 1): the shift of the
    potential minimum when the stiffness drops by ratio^2, measured from the
    unsoftened minimum. Satisfies displacement = (I - Phi) @ center.
    """
    f0 = _require_finite("f0", f0)
    ratio = _require_positive("ratio", ratio)
    omega = _require_positive("omega", omega)
    return PhaseVec((f0 / omega) * (ratio * ratio - 1.0), 0.0)


def heating_cov(ratio: float, phase: float, gamma: float, omega: float) -> CovMat:
    """Covariance added by white force noise over one segment.

    qq = (2*ratio*gamma/omega) * (phase - sin(2*phase)/2)
    qp = (gamma/omega) * (1 - cos(2*phase))
    pp = (2*gamma/(ratio*omega)) * (phase + sin(2*phase)/2)

    Monotonically growing (trace-wise) and PSD for phase >= 0. Integrates a
    momentum diffusion of rate 4*gamma/ratio^2, which at ratio = 1 adds one
    phonon per 1/gamma of evolution.
    """
    ratio = _require_positive("ratio", ratio)
    phase = _require_nonnegative("phase", phase)
    gamma = _require_nonnegative("gamma", gamma)
    omega = _require_positive("omega", omega)
    half_sin = 0.5 * math.sin(2.0 * phase)
    scale = gamma / omega
    return CovMat(
        2.0 * ratio * scale * (phase - half_sin),
        scale * (1.0 - math.cos(2.0 * phase)),
        (2.0 * scale / ratio) * (phase + half_sin),
    )


def shot_cov(sigma_f0: float, ratio: float, phase: float, omega: float) -> CovMat:
    """Ensemble covariance induced by a force that varies from shot to shot.

    The rank-1 outer product sigma_f0^2 * u u^T of the unit-force displacement
    u = displacement(1, ratio, phase, omega). Maximal at phase = pi, zero
    after a full period.
    """
    sigma_f0 = _require_nonnegative("sigma_f0", sigma_f0)
    u = displacement(1.0, ratio, phase, omega)
    var = sigma_f0 * sigma_f0
    return CovMat(var * u.q * u.q, var * u.q * u.p, var * u.p * u.p)


def propagate_segment(
    state: GaussianState, seg: Segment, f0: float, cfg: OscillatorConfig
) -> GaussianState:
    """Propagate mean and covariance through one frequency-jump segment.

    mean -> Phi @ mean + displacement; cov -> Phi @ cov @ Phi^T + heating.
    """
    phi = transition_matrix(seg.ratio, seg.phase)
    shift = displacement(f0, seg.ratio, seg.phase, cfg.omega)
    mean = phi @ state.mean.to_array() + shift.to_array()
    cov = phi @ state.cov.to_matrix() @ phi.T
    heat = heating_cov(seg.ratio, seg.phase, cfg.gamma, cfg.omega)
    return GaussianState(
        PhaseVec.from_array(mean),
        CovMat.from_matrix(cov) + heat,
    )


def zero_point_momentum(mass: float, omega: float) -> float:
    """p_zp = sqrt(hbar * mass * omega / 2) in kg*m/s."""
    mass = _require_positive("mass", mass)
    omega = _require_positive("omega", omega)
    return math.sqrt(HBAR * mass * omega / 2.0)


def normalized_force(force_si: float, mass: float, omega: float) -> float:
    """Convert a force in newtons to normalized units (1/s): force / p_zp."""
    force_si = _require_finite("force_si", force_si)
    return force_si / zero_point_momentum(mass, omega)
