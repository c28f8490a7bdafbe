"""Multi-segment jump sequences and the three-step oscillator-echo protocol.

The echo protocol sandwiches a freely chosen squeezing leg (ratio r, phase
theta2) between two half-period decoupling legs at ratio r'. At the optimal
r' = sqrt((r^2+1)/2) the end-to-end mean is independent of the per-shot
constant force, so the shot-to-shot contribution to the final covariance
cancels; the price is the heating picked up during the decoupling legs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .core import (
    CovMat,
    GaussianState,
    OscillatorConfig,
    PhaseVec,
    Segment,
    _require_finite,
    _require_nonnegative,
    _require_positive,
    displacement,
    heating_cov,
    propagate_segment,
    transition_matrix,
)
from .errors import DomainError, InvariantViolation


@dataclass(frozen=True, slots=True)
class SampleMark:
    """Interruption point (segment index, phase within that segment)."""

    segment: int
    phase: float

    def __post_init__(self):
        if self.segment < 0:
            raise DomainError(f"segment index must be >= 0, got {self.segment}")
        object.__setattr__(self, "phase", _require_nonnegative("phase", self.phase))


@dataclass(frozen=True, slots=True)
class JumpSequence:
    """Ordered frequency-jump segments plus optional in-protocol sample marks."""

    segments: tuple[Segment, ...]
    sample_marks: tuple[SampleMark, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "sample_marks", tuple(self.sample_marks))
        prev = (-1, 0.0)
        for mark in self.sample_marks:
            if mark.segment >= len(self.segments):
                raise DomainError(
                    f"sample mark references segment {mark.segment} "
                    f"but sequence has {len(self.segments)}"
                )
            if mark.phase > self.segments[mark.segment].phase:
                raise DomainError(
                    f"sample mark phase {mark.phase} exceeds segment phase "
                    f"{self.segments[mark.segment].phase}"
                )
            if (mark.segment, mark.phase) < prev:
                raise DomainError("sample marks must be sorted in protocol order")
            prev = (mark.segment, mark.phase)

    def total_phase(self) -> float:
        return sum(seg.phase for seg in self.segments)

    def total_duration(self, omega: float) -> float:
        return sum(seg.duration(omega) for seg in self.segments)

    def cumulative_phase(self, mark: SampleMark) -> float:
        """Accumulated phase from protocol start up to a sample mark."""
        return sum(seg.phase for seg in self.segments[: mark.segment]) + mark.phase


@dataclass(frozen=True, slots=True)
class EchoSpec:
    """Echo-protocol parameters: squeezing ratio r, decoupling ratio r_prime,
    squeezing-leg phase theta2. The decoupling legs have phase pi by
    construction; generalized sequences go through JumpSequence directly."""

    r: float
    r_prime: float
    theta2: float

    def __post_init__(self):
        r = _require_finite("r", self.r)
        r_prime = _require_finite("r_prime", self.r_prime)
        if r < 1.0 or r_prime < 1.0:
            raise DomainError(f"echo ratios must be >= 1, got r={r}, r_prime={r_prime}")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "r_prime", r_prime)
        object.__setattr__(self, "theta2", _require_nonnegative("theta2", self.theta2))


def optimal_ratio(r: float) -> float:
    """Decoupling ratio sqrt((r^2+1)/2) that pins the squeezing leg's rotation
    center onto the mean displaced by the first decoupling leg."""
    r = _require_positive("r", r)
    return math.sqrt((r * r + 1.0) / 2.0)


def echo_sequence(
    spec: EchoSpec, omega: float, sample_marks: tuple[SampleMark, ...] = ()
) -> JumpSequence:
    """Build the three-step echo sequence (r', pi), (r, theta2), (r', pi).

    Segment durations follow from omega as t = ratio * phase / omega, e.g.
    Segment.duration(omega) for the wall-clock length of each leg.
    """
    _require_positive("omega", omega)
    return JumpSequence(
        segments=(
            Segment(spec.r_prime, math.pi),
            Segment(spec.r, spec.theta2),
            Segment(spec.r_prime, math.pi),
        ),
        sample_marks=tuple(sample_marks),
    )


def run_sequence(
    state0: GaussianState, seq: JumpSequence, f0: float, cfg: OscillatorConfig
) -> list[GaussianState]:
    """Chain closed-form propagation through all segments.

    Returns one state per sample mark, in protocol order, plus the final
    state; an empty sequence returns [state0]. Each snapshot is propagated
    from the enclosing segment's start in a single closed-form step, so
    splitting a segment at a mark does not change the final state.
    """
    states: list[GaussianState] = []
    current = state0
    for idx, seg in enumerate(seq.segments):
        for mark in seq.sample_marks:
            if mark.segment == idx:
                states.append(
                    propagate_segment(current, Segment(seg.ratio, mark.phase), f0, cfg)
                )
        current = propagate_segment(current, seg, f0, cfg)
    states.append(current)
    return states


def echo_mean(d0: PhaseVec, f0: float, spec: EchoSpec, omega: float) -> PhaseVec:
    """End-to-end mean of the echo protocol in closed form.

    Phi_r(theta2) @ d0 - Phi_r(theta2) @ d_dec - d_sq + d_dec, where d_dec is
    the displacement of one decoupling leg and d_sq that of the squeezing
    leg. At r_prime = optimal_ratio(r) the force terms cancel for any theta2
    and the result reduces to Phi_r(theta2) @ d0.
    """
    phi = transition_matrix(spec.r, spec.theta2)
    d_dec = displacement(f0, spec.r_prime, math.pi, omega).to_array()
    d_sq = displacement(f0, spec.r, spec.theta2, omega).to_array()
    return PhaseVec.from_array(phi @ d0.to_array() - phi @ d_dec - d_sq + d_dec)


def echo_force_gain(spec: EchoSpec, omega: float) -> PhaseVec:
    """Sensitivity of the final echo mean to the per-shot force: the residual
    displacement per unit normalized force (the mean is affine in f0)."""
    return echo_mean(PhaseVec(0.0, 0.0), 1.0, spec, omega)


def echo_cov(
    cov0: CovMat, spec: EchoSpec, cfg: OscillatorConfig, sigma_f0: float
) -> CovMat:
    """End-to-end covariance of the echo protocol in closed form.

    Coherent evolution of cov0 through the squeezing leg (the decoupling legs
    are covariance identities), heating from all three legs with the first
    leg's contribution carried through the squeezing leg, plus the
    shot-to-shot term sigma_f0^2 * g g^T with g = echo_force_gain. The last
    term vanishes identically at r_prime = optimal_ratio(r).
    """
    sigma_f0 = _require_nonnegative("sigma_f0", sigma_f0)
    phi = transition_matrix(spec.r, spec.theta2)
    heat_dec = heating_cov(spec.r_prime, math.pi, cfg.gamma, cfg.omega)
    heat_sq = heating_cov(spec.r, spec.theta2, cfg.gamma, cfg.omega)
    coherent = phi @ (cov0.to_matrix() + heat_dec.to_matrix()) @ phi.T
    total = CovMat.from_matrix(coherent) + heat_sq + heat_dec
    if sigma_f0 > 0.0:
        g = echo_force_gain(spec, cfg.omega)
        var = sigma_f0 * sigma_f0
        total = total + CovMat(var * g.q * g.q, var * g.q * g.p, var * g.p * g.p)
    return total


def state_size(cov: CovMat) -> float:
    """Total state size sqrt(det(cov)): geometric mean of the axis-aligned
    quadrature variances, 1 for vacuum."""
    det = cov.det()
    if det < 0.0:
        if det < -1e-12 * max(1.0, cov.qq * cov.pp):
            raise InvariantViolation(f"covariance determinant is negative: {det}")
        det = 0.0
    return math.sqrt(det)
