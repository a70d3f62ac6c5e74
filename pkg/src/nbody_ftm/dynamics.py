"""Long-horizon integration of Newton's equations and asymptotic classification.

All detectors are finite-horizon surrogates for limits as t -> infinity and
report tri-state flags ("yes" / "no" / "indeterminate"). Thresholds:

* pair relation i~j when the fitted exponent of r_ij is <= 2/3 + delta
  (delta = 0.1 by default);
* superhyperbolic when the windowed max of R(t)/t grows by >= 1.5 between
  consecutive dyadic windows, over the last four windows;
* expansive when every window minimum of r_ij increases over the same
  windows and the final min distance is more than twice its value at the
  logarithmic midpoint of the sampled span.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .core import (
    ClusterPartition,
    MassSystem,
    UsageError,
    as_configuration,
    in_omega,
    pair_indices,
    pairwise_distances,
    potential_gradient,
    potential_stack,
)

__all__ = [
    "Trajectory",
    "ExponentTable",
    "PartitionResult",
    "AsymptoticsReport",
    "integrate",
    "trajectory_from_positions",
    "fit_power_law",
    "fit_pair_exponents",
    "detect_partition",
    "classify",
    "YES",
    "NO",
    "INDETERMINATE",
]

YES, NO, INDETERMINATE = "yes", "no", "indeterminate"

SUPERHYPERBOLIC_GROWTH = 1.5
N_WINDOWS = 4
DRIFT_RESIDUAL_TOL = 1e-2
DRIFT_STABILITY_TOL = 0.1


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray        # (k,)
    positions: np.ndarray    # (k, n, d)
    velocities: np.ndarray   # (k, n, d)
    energy_drift: float = 0.0
    nfev: int = 0
    diagnostic: str = ""
    masses: tuple = ()

    def __post_init__(self):
        if not np.all(np.diff(self.times) > 0):
            raise UsageError("trajectory times must be strictly increasing")
        if self.positions.shape != self.velocities.shape or \
                self.positions.shape[0] != self.times.size:
            raise UsageError("trajectory sample shapes are inconsistent")

    @property
    def n_bodies(self) -> int:
        return self.positions.shape[1]


def trajectory_from_positions(times, positions, velocities=None, masses=None) -> Trajectory:
    """Wrap sampled positions (e.g. a synthetic motion) as a Trajectory."""
    times = np.asarray(times, dtype=float)
    positions = np.asarray(positions, dtype=float)
    if velocities is None:
        velocities = np.gradient(positions, times, axis=0)
    n = positions.shape[1]
    masses = tuple(masses) if masses is not None else (1.0,) * n
    return Trajectory(times, positions, np.asarray(velocities, dtype=float), masses=masses)


def _energy(sys: MassSystem, x, v):
    kin = 0.5 * np.sum(sys.m[None, :, None] * v * v, axis=(1, 2))
    pot = potential_stack(sys, x)
    return kin - pot, kin + pot


def integrate(sys: MassSystem, x0, v0, horizon: float, tol: float = 1e-9, *,
              t0: float = 0.0, t_first: float | None = None, samples: int = 400,
              sample_times=None, close_floor: float | None = None) -> Trajectory:
    """Integrate m_i x_i'' = dU/dx_i from (x0, v0) until ``t0 + horizon``.

    Output is sampled at ``t0`` and on a geometric grid from ``t0 + t_first``
    (default ``horizon * 1e-4``) to the end, unless ``sample_times`` is
    given explicitly. The DOP853 tolerance is
    tightened until the relative energy drift, measured against the initial
    T + U, is below ``tol``. A close approach below ``close_floor`` (default
    1e-6 times the initial minimum distance) ends the run early.
    """
    x0 = as_configuration(sys, x0)
    v0 = as_configuration(sys, v0)
    if not horizon > 0:
        raise UsageError("horizon must be positive")
    if not in_omega(x0):
        raise UsageError("initial configuration has a collision")
    n, d = sys.n_bodies, sys.dim
    t_first = horizon * 1e-4 if t_first is None else t_first
    if sample_times is not None:
        t_eval = np.asarray(sample_times, dtype=float)
    else:
        t_eval = np.concatenate([[t0], t0 + np.geomspace(t_first, horizon, samples)])
    if close_floor is None:
        close_floor = 1e-6 * pairwise_distances(x0).min() if n > 1 else 0.0
    inv_m = 1.0 / sys.m[:, None]

    def rhs(_t, y):
        x = y[: n * d].reshape(n, d)
        acc = potential_gradient(sys, x) * inv_m
        return np.concatenate([y[n * d:], acc.ravel()])

    def close(_t, y):
        return pairwise_distances(y[: n * d].reshape(n, d)).min() - close_floor

    close.terminal = True
    events = [close] if n > 1 else None
    y0 = np.concatenate([x0.ravel(), v0.ravel()])
    scale0 = _energy(sys, x0[None], v0[None])[1][0]
    rtol = min(1e-6, tol)
    while True:
        sol = solve_ivp(rhs, (t0, t0 + horizon), y0, method="DOP853", t_eval=t_eval,
                        rtol=rtol, atol=rtol * 1e-3 * max(1.0, np.abs(x0).max()), events=events)
        xs = sol.y[: n * d].T.reshape(-1, n, d)
        vs = sol.y[n * d:].T.reshape(-1, n, d)
        e, _ = _energy(sys, xs, vs)
        drift = float(np.max(np.abs(e - e[0])) / scale0) if scale0 > 0 else 0.0
        if drift <= tol or rtol <= 1e-14:
            break
        rtol = max(rtol * 1e-2, 1e-14)
    diag = ""
    if sol.status == 1:
        diag = f"close encounter at t={sol.t_events[0][0]:.6g}"
    elif sol.status < 0:
        diag = sol.message
    elif drift > tol:
        diag = f"energy drift {drift:.3g} exceeds tol"
    return Trajectory(sol.t, xs, vs, drift, int(sol.nfev), diag, sys.masses)


def fit_power_law(t, y) -> tuple[float, float]:
    """Least-squares slope of log y against log t, and its standard error."""
    lt, ly = np.log(np.asarray(t, float)), np.log(np.asarray(y, float))
    if lt.size < 3:
        return math.nan, math.nan
    A = np.column_stack([lt, np.ones_like(lt)])
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    sxx = np.sum((lt - lt.mean()) ** 2)
    se = math.sqrt(np.sum(resid ** 2) / (lt.size - 2) / sxx) if sxx > 0 else math.nan
    return float(coef[0]), float(se)


def _window_mask(times: np.ndarray, window: float | None):
    pos = times > 0
    if pos.sum() < 3:
        return None
    t_lo, t_hi = times[pos][0], times[-1]
    if t_hi / t_lo < 100.0:     # need two decades of data
        return None
    if window is None:
        start = t_hi / 10.0
    else:
        if not 0 < window <= 1:
            raise UsageError("window must be a fraction in (0, 1]")
        start = math.exp(math.log(t_hi) - window * math.log(t_hi / t_lo))
    return pos & (times >= start * (1 - 1e-12))


@dataclass(frozen=True)
class ExponentTable:
    pairs: tuple[tuple[int, int], ...]
    exponents: np.ndarray
    stderr: np.ndarray

    @property
    def indeterminate(self) -> np.ndarray:
        return ~np.isfinite(self.exponents)

    def as_dict(self) -> dict:
        return {p: (float(e), float(s)) for p, e, s in zip(self.pairs, self.exponents, self.stderr)}


def fit_pair_exponents(traj: Trajectory, window: float | None = None) -> ExponentTable:
    """Per-pair log-log slope of r_ij(t) over the last decade (or a log-span fraction)."""
    n = traj.n_bodies
    i, j = pair_indices(n)
    pairs = tuple(zip(i.tolist(), j.tolist()))
    mask = _window_mask(traj.times, window)
    if mask is None or n < 2:
        nan = np.full(len(pairs), np.nan)
        return ExponentTable(pairs, nan, nan.copy())
    r = pairwise_distances(traj.positions[mask])
    fits = [fit_power_law(traj.times[mask], r[:, k]) for k in range(len(pairs))]
    return ExponentTable(pairs, np.array([f[0] for f in fits]), np.array([f[1] for f in fits]))


@dataclass(frozen=True)
class PartitionResult:
    partition: ClusterPartition
    inconsistent: bool
    excluded: tuple[tuple[int, int], ...] = ()


def detect_partition(table: ExponentTable, delta: float = 0.1,
                     n_bodies: int | None = None) -> PartitionResult:
    """Transitive closure of the relation p_ij <= 2/3 + delta.

    ``inconsistent`` is set when the closure relates a pair whose exponent is
    >= 1 - delta. Pairs with indeterminate exponents are excluded and listed.
    """
    if n_bodies is None:
        n_bodies = 1 + max((max(p) for p in table.pairs), default=0)
    ok = ~table.indeterminate
    link = ok & (table.exponents <= 2.0 / 3.0 + delta)
    rows = [p[0] for p, l in zip(table.pairs, link) if l]
    cols = [p[1] for p, l in zip(table.pairs, link) if l]
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_bodies, n_bodies))
    _, labels = connected_components(graph, directed=False)
    classes = {}
    for b, lab in enumerate(labels):
        classes.setdefault(lab, []).append(b)
    P = ClusterPartition(tuple(tuple(c) for c in classes.values()), n_bodies)
    linear = ok & (table.exponents >= 1.0 - delta)
    inconsistent = any(labels[a] == labels[b] for (a, b), f in zip(table.pairs, linear) if f)
    excluded = tuple(p for p, bad in zip(table.pairs, table.indeterminate) if bad)
    return PartitionResult(P, bool(inconsistent), excluded)


@dataclass(frozen=True)
class AsymptoticsReport:
    exponents: ExponentTable
    partition: PartitionResult
    drift: np.ndarray                  # (n, d) fitted linear drift velocities a_i
    drift_stderr: np.ndarray           # (n,) OLS error combined with the cross-decade change
    drift_residual: float              # rms fit residual relative to R at the end
    drift_stable: bool                 # last-decade and previous-decade fits agree
    drift_conclusive: bool
    drift_class_spread: float          # max |a_i - a_j| over within-class pairs
    drift_class_consistent: bool       # every within-class |a_i - a_j| <= 3 * its stderr
    superhyperbolic: str
    expansive: str
    cluster_potential_exponents: tuple[tuple[float, float], ...] = field(default=())
    windows: int = 0


def _dyadic_windows(times: np.ndarray, count: int):
    """Masks for [T/2^(k+1), T/2^k], oldest first; None when fewer than 3 fit."""
    T = times[-1]
    t_lo = times[times > 0][0] if np.any(times > 0) else T
    masks = []
    for k in range(count):
        lo, hi = T / 2 ** (k + 1), T / 2 ** k
        if lo < t_lo:
            break
        m = (times >= lo) & (times <= hi)
        if m.sum() < 2:
            break
        masks.append(m)
    if len(masks) < 3:
        return None
    return masks[::-1]


def _drift_fit(times, positions):
    """Fit x_i(t) = a_i t + b_i t^(2/3) + c_i; returns a, se(a), rms residual."""
    A = np.column_stack([times, times ** (2.0 / 3.0), np.ones_like(times)])
    k, n, d = positions.shape
    Y = positions.reshape(k, n * d)
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    resid = Y - A @ coef
    dof = max(k - 3, 1)
    sigma2 = np.sum(resid ** 2, axis=0) / dof
    cov00 = np.linalg.pinv(A.T @ A)[0, 0]
    se = np.sqrt(sigma2 * cov00).reshape(n, d)
    return coef[0].reshape(n, d), np.linalg.norm(se, axis=1), float(np.sqrt(np.mean(resid ** 2)))


def classify(traj: Trajectory, delta: float = 0.1, masses=None, grav_const: float = 1.0
             ) -> AsymptoticsReport:
    """Asymptotic classification of a sampled motion."""
    n = traj.n_bodies
    masses = np.asarray(masses if masses is not None else (traj.masses or (1.0,) * n), float)
    times, pos = traj.times, traj.positions
    table = fit_pair_exponents(traj)
    part = detect_partition(table, delta, n)

    windows = _dyadic_windows(times, N_WINDOWS)
    sh = exp = INDETERMINATE
    if windows is not None and n > 1:
        r = pairwise_distances(pos)
        R = r.max(axis=1)
        ratio_max = np.array([np.max(R[m] / times[m]) for m in windows])
        sh = YES if np.all(ratio_max[1:] >= SUPERHYPERBOLIC_GROWTH * ratio_max[:-1]) else NO
        rmin_w = np.array([r[m].min(axis=0) for m in windows])
        increasing = bool(np.all(np.diff(rmin_w, axis=0) > 0))
        pos_t = times > 0
        t_mid = math.sqrt(times[pos_t][0] * times[-1])
        k_mid = int(np.argmin(np.abs(np.log(times[pos_t] / t_mid))))
        r_mid = r[pos_t][k_mid].min()
        exp = YES if increasing and r[-1].min() > 2.0 * r_mid else NO

    # drift over the last decade; stability against the decade before it
    T = times[-1]
    last = (times >= T / 10.0) & (times > 0)
    prev = (times >= T / 100.0) & (times <= T / 10.0) & (times > 0)
    R_end = pairwise_distances(pos[-1]).max() if n > 1 else np.abs(pos[-1]).max()
    if last.sum() >= 4:
        a, a_se, rms = _drift_fit(times[last], pos[last])
        rel_resid = rms / R_end if R_end > 0 else 0.0
    else:
        a, a_se, rel_resid = np.full(pos.shape[1:], np.nan), np.full(n, np.nan), math.inf
    stable = False
    if prev.sum() >= 4 and np.all(np.isfinite(a)):
        a_prev, _, _ = _drift_fit(times[prev], pos[prev])
        change = np.linalg.norm(a - a_prev, axis=1)
        # the remainder is systematic, so OLS alone understates the error in a
        a_se = np.sqrt(a_se ** 2 + change ** 2)
        vscale = max(R_end / T, 1e-300)
        stable = bool(np.max(change) <= DRIFT_STABILITY_TOL * vscale)
    conclusive = bool(rel_resid <= DRIFT_RESIDUAL_TOL and stable)
    spread, consistent = 0.0, True
    for c in part.partition.classes:
        for p in range(len(c)):
            for q in range(p + 1, len(c)):
                gap = float(np.linalg.norm(a[c[p]] - a[c[q]]))
                spread = max(spread, gap)
                consistent &= bool(gap <= 3.0 * math.hypot(a_se[c[p]], a_se[c[q]]))

    cluster_exps = []
    for c in part.partition.classes:
        if len(c) < 2 or last.sum() < 3:
            cluster_exps.append((math.nan, math.nan))
            continue
        sub = MassSystem(tuple(masses[list(c)]), pos.shape[2], grav_const)
        u = potential_stack(sub, pos[last][:, list(c)])
        cluster_exps.append(fit_power_law(times[last], u))

    return AsymptoticsReport(
        exponents=table,
        partition=part,
        drift=a,
        drift_stderr=a_se,
        drift_residual=float(rel_resid),
        drift_stable=stable,
        drift_conclusive=conclusive,
        drift_class_spread=spread,
        drift_class_consistent=consistent,
        superhyperbolic=sh,
        expansive=exp,
        cluster_potential_exponents=tuple(cluster_exps),
        windows=0 if windows is None else len(windows),
    )


def minimizer_initial_velocity(path) -> np.ndarray:
    """Velocity handed to the flow from a computed minimizer: first-segment difference quotient."""
    return (path.nodes[1] - path.nodes[0]) / (path.times[1] - path.times[0])
