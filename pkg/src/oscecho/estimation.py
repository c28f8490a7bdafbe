"""Point-cloud statistics, force-parameter fits, and decoupling-ratio sweeps.

The fitters mirror the package's two forward models: the residual mean
displacement of the echo protocol (linear in the mean force) and the total
state size at the protocol end (monotone in the shot-to-shot force
variance). Both are exact on data generated by their own forward model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import CovMat, ForceModel, GaussianState, OscillatorConfig, PhaseVec, shot_cov, heating_cov, transition_matrix
from .errors import (
    DomainError,
    FitFailureError,
    InsufficientDataError,
    UnidentifiableError,
)
from .montecarlo import McConfig, _ensemble_arrays, aux_rng
from .protocol import EchoSpec, echo_cov, echo_force_gain, echo_mean, echo_sequence, optimal_ratio, state_size

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True, slots=True)
class EnsembleStats:
    """Sample mean and unbiased covariance of a phase-space point cloud."""

    n: int
    mean: PhaseVec
    cov: CovMat


class FitResult(NamedTuple):
    value: float
    stderr: float


class CovSE(NamedTuple):
    qq: float
    qp: float
    pp: float


@dataclass(frozen=True, slots=True)
class SweepRow:
    r_prime: float
    d_norm: float
    v_tot: float


@dataclass(frozen=True, slots=True)
class SweepResult:
    """Sweep of the decoupling ratio: per grid point the residual displacement
    magnitude and total state size at the protocol end, with optional fitted
    force parameters attached by the caller."""

    rows: tuple[SweepRow, ...]
    fit_f0: FitResult | None = None
    fit_sigma_f0: FitResult | None = None

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        grid = [row.r_prime for row in self.rows]
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise DomainError("sweep grid must be strictly increasing in r_prime")

    def with_fits(self, fit_f0: FitResult, fit_sigma_f0: FitResult) -> "SweepResult":
        return SweepResult(self.rows, fit_f0, fit_sigma_f0)


def _as_points(points) -> np.ndarray:
    if isinstance(points, (list, tuple)) and points and isinstance(points[0], PhaseVec):
        arr = np.array([[p.q, p.p] for p in points])
    else:
        arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DomainError(f"points must form an (n, 2) array, got shape {arr.shape}")
    return arr


def ensemble_stats(points) -> EnsembleStats:
    """Unbiased sample mean and covariance (divisor n-1) of a point cloud.

    Accepts a sequence of PhaseVec or an (n, 2) array.
    """
    arr = _as_points(points)
    n = arr.shape[0]
    if n < 2:
        raise InsufficientDataError(f"need at least 2 points, got {n}")
    mean = arr.mean(axis=0)
    centered = arr - mean
    cov = centered.T @ centered / (n - 1)
    return EnsembleStats(n, PhaseVec(mean[0], mean[1]), CovMat.from_matrix(cov))


def mean_standard_error(stats: EnsembleStats) -> PhaseVec:
    """Standard error of the sample mean, per quadrature."""
    return PhaseVec(
        math.sqrt(stats.cov.qq / stats.n), math.sqrt(stats.cov.pp / stats.n)
    )


def bootstrap_cov_se(points, n_boot: int = 200, master_seed: int = 0) -> CovSE:
    """Bootstrap standard errors of the sample-covariance elements.

    Resamples shots with replacement from the auxiliary stream
    (master_seed, 2**63 + 2), so repeated calls are deterministic.
    """
    arr = _as_points(points)
    n = arr.shape[0]
    if n < 2:
        raise InsufficientDataError(f"need at least 2 points, got {n}")
    rng = aux_rng(master_seed, k=2)
    reps = np.empty((n_boot, 3))
    chunk = max(1, int(2_000_000 // max(n, 1)))
    for lo in range(0, n_boot, chunk):
        hi = min(lo + chunk, n_boot)
        idx = rng.integers(0, n, size=(hi - lo, n))
        resampled = arr[idx]  # (b, n, 2)
        mean = resampled.mean(axis=1, keepdims=True)
        centered = resampled - mean
        reps[lo:hi, 0] = np.einsum("bn,bn->b", centered[..., 0], centered[..., 0])
        reps[lo:hi, 1] = np.einsum("bn,bn->b", centered[..., 0], centered[..., 1])
        reps[lo:hi, 2] = np.einsum("bn,bn->b", centered[..., 1], centered[..., 1])
    reps /= n - 1
    se = reps.std(axis=0, ddof=1)
    return CovSE(float(se[0]), float(se[1]), float(se[2]))


def _wishart_weights(stats: EnsembleStats) -> np.ndarray:
    """Inverse-variance weights for (qq, qp, pp) from the Wishart variance of
    sample covariances: Var(S_ij) = (S_ii S_jj + S_ij^2) / (n - 1)."""
    s = stats.cov
    var = np.array(
        [
            2.0 * s.qq * s.qq,
            s.qq * s.pp + s.qp * s.qp,
            2.0 * s.pp * s.pp,
        ]
    ) / (stats.n - 1)
    with np.errstate(divide="ignore"):
        w = np.where(var > 0.0, 1.0 / np.maximum(var, 1e-300), 0.0)
    return w


def fit_sigma_from_growth(
    stats_by_phase: list[tuple[float, EnsembleStats]],
    r: float,
    cfg: OscillatorConfig,
) -> FitResult:
    """Extract the shot-to-shot force std from covariance growth along one
    frequency-jump leg of ratio `r`.

    Model per phase theta: observed cov = Phi Sigma0 Phi^T + heating +
    sigma^2 * shape(theta), with Sigma0 the thermal state from cfg.n0 and
    shape the unit-variance shot covariance. sigma^2 enters linearly, so the
    weighted least-squares solution is closed form; the uncertainty scales
    the formal error by the residual scatter.
    """
    if len(stats_by_phase) < 2:
        raise InsufficientDataError(
            f"need stats at >= 2 phases, got {len(stats_by_phase)}"
        )
    cov0 = GaussianState.thermal(cfg.n0).cov.to_matrix()
    shapes, residuals, weights = [], [], []
    for theta, stats in stats_by_phase:
        phi = transition_matrix(r, theta)
        base = phi @ cov0 @ phi.T + heating_cov(r, theta, cfg.gamma, cfg.omega).to_matrix()
        shape = shot_cov(1.0, r, theta, cfg.omega)
        obs = stats.cov
        shapes.append([shape.qq, shape.qp, shape.pp])
        residuals.append(
            [obs.qq - base[0, 0], obs.qp - 0.5 * (base[0, 1] + base[1, 0]), obs.pp - base[1, 1]]
        )
        weights.append(_wishart_weights(stats))
    m = np.asarray(shapes).ravel()
    res = np.asarray(residuals).ravel()
    w = np.asarray(weights).ravel()
    denom = float(np.sum(w * m * m))
    if denom <= 0.0:
        raise UnidentifiableError(
            "shot-covariance shape vanishes at every supplied phase "
            "(e.g. all phases are multiples of 2*pi)"
        )
    var_hat = float(np.sum(w * m * res)) / denom
    dof = m.size - 1
    chi2 = float(np.sum(w * (res - var_hat * m) ** 2))
    var_err = math.sqrt(max(chi2 / dof, 0.0) / denom)
    sigma = math.sqrt(max(var_hat, 0.0))
    err = var_err / (2.0 * sigma) if sigma > 0.0 else math.sqrt(var_err)
    return FitResult(sigma, err)


def sweep_rprime(
    r: float,
    theta2: float,
    rprime_grid,
    force: ForceModel,
    cfg: OscillatorConfig,
    backend: str = "analytic",
    mc: McConfig | None = None,
    cov0: CovMat | None = None,
    workers: int = 0,
) -> SweepResult:
    """Sweep the decoupling ratio r' and report |d| and v_tot at the protocol
    end for each grid point.

    backend "analytic" evaluates the closed forms (initial state at the
    origin with covariance cov0, thermal from cfg.n0 when omitted);
    backend "mc" runs a seeded ensemble per grid point, with per-point
    master seeds drawn from the auxiliary stream (mc.master_seed, 2**63 + 1)
    so grid points are statistically independent yet reproducible.
    """
    grid = [float(v) for v in rprime_grid]
    if len(grid) < 3:
        raise DomainError(f"sweep grid needs >= 3 points, got {len(grid)}")
    if backend not in ("analytic", "mc"):
        raise DomainError(f"backend must be 'analytic' or 'mc', got {backend!r}")
    if backend == "mc" and mc is None:
        raise DomainError("backend 'mc' requires an McConfig")
    if cov0 is None:
        cov0 = GaussianState.thermal(cfg.n0).cov
    origin = PhaseVec(0.0, 0.0)

    rows = []
    if backend == "analytic":
        for rp in grid:
            spec = EchoSpec(r, rp, theta2)
            d = echo_mean(origin, force.f0_mean, spec, cfg.omega)
            v = state_size(echo_cov(cov0, spec, cfg, force.f0_sigma))
            rows.append(SweepRow(rp, d.norm(), v))
    else:
        point_seeds = aux_rng(mc.master_seed, k=1).integers(
            0, 2**64, size=len(grid), dtype=np.uint64
        )
        state0 = GaussianState(origin, cov0)
        for rp, seed in zip(grid, point_seeds):
            spec = EchoSpec(r, rp, theta2)
            seq = echo_sequence(spec, cfg.omega)
            point_mc = McConfig(
                shots=mc.shots,
                steps_per_period=mc.steps_per_period,
                master_seed=int(seed),
                method=mc.method,
            )
            _, samples = _ensemble_arrays(state0, seq, force, cfg, point_mc, workers=workers)
            stats = ensemble_stats(samples[-1])
            rows.append(SweepRow(rp, stats.mean.norm(), state_size(stats.cov)))
    return SweepResult(tuple(rows))


def fit_f0_from_displacement(
    rows, r: float, theta2: float, cfg: OscillatorConfig
) -> FitResult:
    """Fit the mean-force magnitude to |d|(r') sweep data.

    |d| = |f0| * |gain(r')| with the gain the protocol's residual
    displacement per unit force, so the least-squares solution is closed
    form. Only the magnitude of f0 is identifiable from |d| data; the
    returned value is non-negative by convention.
    """
    rows = list(rows)
    gains = np.array(
        [echo_force_gain(EchoSpec(r, row.r_prime, theta2), cfg.omega).norm() for row in rows]
    )
    y = np.array([row.d_norm for row in rows])
    # rounding leaves ~1e-15-scale residual gains at the optimal ratio
    gain_floor = 1e-9 * (r * r + 1.0) / cfg.omega
    denom = float(np.sum(gains * gains))
    if not rows or float(np.max(gains, initial=0.0)) <= gain_floor:
        raise UnidentifiableError(
            "displacement gain vanishes on the whole grid (all points at the "
            "optimal decoupling ratio)"
        )
    f0_hat = float(np.sum(gains * y)) / denom
    dof = len(rows) - 1
    if dof > 0:
        s2 = float(np.sum((y - f0_hat * gains) ** 2)) / dof
        err = math.sqrt(s2 / denom)
    else:
        err = float("nan")
    return FitResult(abs(f0_hat), err)


def _golden_min(f, a: float, b: float, rel_tol: float = 1e-12, max_iter: int = 200):
    """Golden-section search for the minimum of a unimodal f on [a, b]."""
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(max_iter):
        if b - a <= rel_tol * max(abs(a), abs(b), 1e-300):
            break
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = f(x2)
    return 0.5 * (a + b)


def fit_sigma_from_vtot(
    rows,
    r: float,
    theta2: float,
    cfg: OscillatorConfig,
    cov0: CovMat,
    upper: float | None = None,
) -> FitResult:
    """Fit the shot-to-shot force std to v_tot(r') sweep data.

    Model: v_tot(r') = sqrt(det(base(r') + sigma^2 * gain gain^T)) with base
    the sigma-free protocol covariance. The single nonlinear parameter
    sigma^2 is located by a bracketed geometric scan over [0, upper]
    followed by golden-section refinement; the uncertainty comes from the
    curvature of the squared residual at the minimum, scaled by the
    residual scatter. Defaults to upper = (10 * omega)^2.
    """
    rows = list(rows)
    if len(rows) < 2:
        raise InsufficientDataError(f"need >= 2 sweep rows, got {len(rows)}")
    if upper is None:
        upper = (10.0 * cfg.omega) ** 2
    if upper <= 0.0:
        raise DomainError(f"upper bound must be > 0, got {upper}")

    y = np.array([row.v_tot for row in rows])
    a_c, b_c, c_c = [], [], []
    for row in rows:
        spec = EchoSpec(r, row.r_prime, theta2)
        base = echo_cov(cov0, spec, cfg, 0.0)
        g = echo_force_gain(spec, cfg.omega)
        gqq, gqp, gpp = g.q * g.q, g.q * g.p, g.p * g.p
        a_c.append(base.det())
        b_c.append(base.qq * gpp + base.pp * gqq - 2.0 * base.qp * gqp)
        c_c.append(gqq * gpp - gqp * gqp)
    a_c, b_c, c_c = np.array(a_c), np.array(b_c), np.array(c_c)

    def model(s: float) -> np.ndarray:
        return np.sqrt(np.maximum(a_c + b_c * s + c_c * s * s, 0.0))

    def sse(s: float) -> float:
        d = y - model(s)
        return float(d @ d)

    scan = np.concatenate(([0.0], np.geomspace(upper * 1e-16, upper, 400)))
    values = np.array([sse(s) for s in scan])
    k = int(np.argmin(values))
    if k == len(scan) - 1:
        raise FitFailureError(
            "no interior minimum below the search bound: "
            f"sse({scan[0]:.3g})={values[0]:.6g}, "
            f"sse({scan[-1]:.3g})={values[-1]:.6g}; raise `upper`"
        )
    lo = scan[k - 1] if k > 0 else 0.0
    hi = scan[k + 1]
    s_hat = max(_golden_min(sse, lo, hi), 0.0)

    dof = len(rows) - 1
    noise_var = sse(s_hat) / dof
    slope = np.where(model(s_hat) > 0.0, (b_c + 2.0 * c_c * s_hat), 0.0)
    denom = model(s_hat)
    grad = np.divide(slope, 2.0 * denom, out=np.zeros_like(slope), where=denom > 0.0)
    curvature = float(grad @ grad)  # Gauss-Newton half-curvature of sse
    s_err = math.sqrt(noise_var / curvature) if curvature > 0.0 else float("inf")
    sigma = math.sqrt(s_hat)
    err = s_err / (2.0 * sigma) if sigma > 0.0 else math.sqrt(s_err)
    return FitResult(sigma, err)
