"""Stochastic oracle: per-shot Langevin integration of jump sequences.

Each trajectory integrates dv/dt = A v + w(t) + force with the softened
drift A = [[0, omega], [-omega/ratio^2, 0]] and a white momentum noise
calibrated so that dVar(P)/dt = 4*gamma/ratio^2, which reproduces the
closed-form heating covariance upon integration. The per-shot constant
force enters through the shifted rotation center at
q = (f0/omega)*(ratio^2 - 1) (positions are measured from the unsoftened
potential minimum, matching the closed-form module).

Reproducibility contract
------------------------
Shot i consumes exactly one array of standard normals drawn from
``numpy.random.Generator(Philox(key=(master_seed, i)))``:

    z[0], z[1] -> initial-state draw (mean + chol(cov) @ z[:2])
    z[2]       -> per-shot force draw (f0_mean + f0_sigma * z[2])
    z[3:]      -> momentum kicks, one per integration substep, time order

Streams are keyed, not sequential, so any subset of shots can be re-run
bitwise identically and shots may be integrated concurrently in any
batching without changing results. Auxiliary estimation streams (e.g.
bootstrap resampling) use key=(master_seed, 2**63 + k) and never collide
with shot streams.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import (
    CovMat,
    ForceModel,
    GaussianState,
    OscillatorConfig,
    PhaseVec,
)
from .errors import ConfigurationError, InvariantViolation
from .protocol import JumpSequence

_AUX_STREAM_BASE = 2**63
_BATCH_SHOTS = 4096

METHODS = ("rotation", "euler")


@dataclass(frozen=True, slots=True)
class McConfig:
    """Ensemble settings.

    steps_per_period counts substeps per oscillation period at the softened
    frequency (i.e. per 2*pi of accumulated phase); 100 is the accuracy
    floor. method selects the integrator: "rotation" applies the exact
    segment rotation about the force-shifted center per substep and adds the
    momentum kick afterwards (deterministic part exact, noise split to first
    order); "euler" is a plain Euler-Maruyama fallback kept for independent
    cross-checking.
    """

    shots: int
    steps_per_period: int = 400
    master_seed: int = 0
    method: str = "rotation"

    def __post_init__(self):
        if not isinstance(self.shots, int) or self.shots < 1:
            raise ConfigurationError(f"shots must be an integer >= 1, got {self.shots!r}")
        if not isinstance(self.steps_per_period, int) or self.steps_per_period < 100:
            raise ConfigurationError(
                f"steps_per_period must be an integer >= 100, got {self.steps_per_period!r}"
            )
        if not isinstance(self.master_seed, int) or not 0 <= self.master_seed < 2**64:
            raise ConfigurationError(
                f"master_seed must be a 64-bit unsigned integer, got {self.master_seed!r}"
            )
        if self.method not in METHODS:
            raise ConfigurationError(
                f"method must be one of {METHODS}, got {self.method!r}"
            )


@dataclass(frozen=True, slots=True)
class ShotRecord:
    """One trajectory: the force drawn for the shot and its phase-space
    samples, one per sample mark plus the final state."""

    shot_index: int
    f0_draw: float
    samples: tuple[PhaseVec, ...]


def shot_normals(master_seed: int, stream_index: int, count: int) -> np.ndarray:
    """The documented seed-splitting rule: stream `stream_index` is
    Philox4x64 keyed by (master_seed, stream_index); one array draw."""
    key = np.array([master_seed, stream_index], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.standard_normal(count)


def aux_rng(master_seed: int, k: int = 0) -> np.random.Generator:
    """Auxiliary (non-shot) stream k; disjoint from all shot streams."""
    return np.random.Generator(
        np.random.Philox(key=np.array([master_seed, _AUX_STREAM_BASE + k], dtype=np.uint64))
    )


def cov_sqrt(cov: CovMat) -> np.ndarray:
    """Matrix square root L with L @ L.T = cov, for exact Gaussian sampling.

    Cholesky when positive definite; degenerate covariances fall back to an
    eigendecomposition with near-zero negative eigenvalues clipped at 0.
    """
    mat = cov.to_matrix()
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(mat)
        floor = -1e-12 * max(1.0, float(np.max(np.abs(vals))))
        if np.any(vals < floor):
            raise InvariantViolation(f"covariance has negative eigenvalue: {vals}")
        return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))


@dataclass(frozen=True, slots=True)
class _Chunk:
    ratio: float
    n_steps: int
    dphase: float
    dt: float


_SAMPLE = None  # plan sentinel: record the current state


def _build_plan(seq: JumpSequence, cfg: OscillatorConfig, mc: McConfig):
    """Flatten the sequence into chunks split at sample marks.

    Returns (items, n_kicks) where items is a list of _Chunk objects
    interleaved with _SAMPLE sentinels in protocol order.
    """
    items: list[_Chunk | None] = []
    n_kicks = 0
    for idx, seg in enumerate(seq.segments):
        cuts = [m.phase for m in seq.sample_marks if m.segment == idx]
        start = 0.0
        for end in cuts:
            span = end - start
            if span > 0.0:
                n = max(1, math.ceil(mc.steps_per_period * span / (2.0 * math.pi)))
                dphase = span / n
                items.append(_Chunk(seg.ratio, n, dphase, seg.ratio * dphase / cfg.omega))
                n_kicks += n
            items.append(_SAMPLE)
            start = end
        span = seg.phase - start
        if span > 0.0:
            n = max(1, math.ceil(mc.steps_per_period * span / (2.0 * math.pi)))
            dphase = span / n
            items.append(_Chunk(seg.ratio, n, dphase, seg.ratio * dphase / cfg.omega))
            n_kicks += n
    return items, n_kicks


def _integrate_batch(plan, q, p, f0, kicks, cfg: OscillatorConfig, method: str):
    """Advance (q, p) arrays through the plan, consuming kicks column by
    column; returns the list of sampled (q, p) snapshots plus the final."""
    omega, gamma = cfg.omega, cfg.gamma
    snapshots = []
    k = 0
    for item in plan:
        if item is _SAMPLE:
            snapshots.append((q.copy(), p.copy()))
            continue
        ratio = item.ratio
        kick_scale = math.sqrt(4.0 * gamma * item.dt) / ratio
        if method == "rotation":
            c, s = math.cos(item.dphase), math.sin(item.dphase)
            r01, r10 = ratio * s, -s / ratio
            cq = (f0 / omega) * (ratio * ratio - 1.0)
            for _ in range(item.n_steps):
                dq = q - cq
                q = cq + c * dq + r01 * p
                p = r10 * dq + c * p + kick_scale * kicks[:, k]
                k += 1
        else:
            dt = item.dt
            f_eff = f0 * (ratio * ratio - 1.0) / (ratio * ratio)
            for _ in range(item.n_steps):
                q_new = q + dt * omega * p
                p = p + dt * (-(omega / (ratio * ratio)) * q + f_eff) + kick_scale * kicks[:, k]
                q = q_new
                k += 1
    snapshots.append((q.copy(), p.copy()))
    return snapshots


def integrate_shot(
    state0_draw: PhaseVec,
    seq: JumpSequence,
    f0_draw: float,
    cfg: OscillatorConfig,
    mc: McConfig,
    shot_index: int,
) -> ShotRecord:
    """Integrate a single shot from a given initial point and force draw.

    The momentum kicks come from the shot's own keyed stream (entries 3
    onward; the first three normals are reserved for the initial-state and
    force draws made by run_ensemble), so a shot re-run standalone matches
    the corresponding ensemble record exactly.
    """
    plan, n_kicks = _build_plan(seq, cfg, mc)
    z = shot_normals(mc.master_seed, shot_index, 3 + n_kicks)
    kicks = z[3:].reshape(1, n_kicks)
    q = np.array([state0_draw.q])
    p = np.array([state0_draw.p])
    f0 = np.array([f0_draw])
    snaps = _integrate_batch(plan, q, p, f0, kicks, cfg, mc.method)
    samples = tuple(PhaseVec(float(sq[0]), float(sp[0])) for sq, sp in snaps)
    return ShotRecord(shot_index, float(f0_draw), samples)


def _ensemble_arrays(
    state0: GaussianState,
    seq: JumpSequence,
    force: ForceModel,
    cfg: OscillatorConfig,
    mc: McConfig,
    workers: int = 0,
    f0_transform=None,
):
    """Vectorized ensemble run.

    Returns (f0_draws, samples) with samples of shape
    (n_marks + 1, shots, 2); the last slot is the final state.
    """
    plan, n_kicks = _build_plan(seq, cfg, mc)
    n_out = len(seq.sample_marks) + 1
    chol = cov_sqrt(state0.cov)
    mean = state0.mean.to_array()

    f0_out = np.empty(mc.shots)
    samples_out = np.empty((n_out, mc.shots, 2))

    def run_batch(lo: int, hi: int):
        n = hi - lo
        z = np.empty((n, 3 + n_kicks))
        for i in range(n):
            z[i] = shot_normals(mc.master_seed, lo + i, 3 + n_kicks)
        init = mean[:, None] + chol @ z[:, :2].T
        if f0_transform is None:
            f0 = force.f0_mean + force.f0_sigma * z[:, 2]
        else:
            f0 = np.asarray(f0_transform(z[:, 2]), dtype=float)
        snaps = _integrate_batch(plan, init[0], init[1], f0, z[:, 3:], cfg, mc.method)
        f0_out[lo:hi] = f0
        for j, (sq, sp) in enumerate(snaps):
            samples_out[j, lo:hi, 0] = sq
            samples_out[j, lo:hi, 1] = sp

    bounds = [
        (lo, min(lo + _BATCH_SHOTS, mc.shots)) for lo in range(0, mc.shots, _BATCH_SHOTS)
    ]
    n_workers = workers if workers > 0 else min(8, os.cpu_count() or 1)
    if n_workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(lambda b: run_batch(*b), bounds))
    else:
        for b in bounds:
            run_batch(*b)
    return f0_out, samples_out


def run_ensemble(
    state0: GaussianState,
    seq: JumpSequence,
    force: ForceModel,
    cfg: OscillatorConfig,
    mc: McConfig,
    workers: int = 0,
    f0_transform=None,
) -> list[ShotRecord]:
    """Integrate `mc.shots` independent trajectories.

    Initial points are exact Gaussian draws from state0, the per-shot force
    is Normal(f0_mean, f0_sigma^2) by default (f0_transform maps the shot's
    standard-normal force draw to a custom distribution). Results are
    bitwise independent of batching and worker count.
    """
    f0_draws, samples = _ensemble_arrays(
        state0, seq, force, cfg, mc, workers=workers, f0_transform=f0_transform
    )
    records = []
    for i in range(mc.shots):
        pts = tuple(PhaseVec(float(samples[j, i, 0]), float(samples[j, i, 1]))
                    for j in range(samples.shape[0]))
        records.append(ShotRecord(i, float(f0_draws[i]), pts))
    return records


def samples_array(records: list[ShotRecord], index: int) -> np.ndarray:
    """Stack sample `index` of every record into an (n, 2) array; index -1
    addresses the final state."""
    return np.array([[rec.samples[index].q, rec.samples[index].p] for rec in records])
