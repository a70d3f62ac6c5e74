"""Direct-method minimization of the discretized action.

Fixed-time problems are solved over the interior nodes of a uniform grid by
a damped Newton iteration on the exact block-tridiagonal Hessian with a
backtracking line search. A step is accepted only if every quadrature node
keeps all mutual distances above a collision floor; the floor is halved
whenever it blocks progress. Free-time problems wrap the fixed-time solver
in a one-dimensional search over the duration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded
from scipy.optimize import brentq

from .action import (
    DiscretePath,
    action,
    action_gradient,
    action_hessian_blocks,
    interaction_integral,
    mean_segment_energy,
    quadrature_min_distance,
    straight_path,
)
from .core import (
    ClusterPartition,
    MassSystem,
    UsageError,
    as_configuration,
    cluster_split,
    in_omega,
    mass_norm,
    pairwise_distances,
)

__all__ = [
    "SolveOptions",
    "MinimizeResult",
    "NoInteractionResult",
    "minimize_fixed_time",
    "minimize_free_time",
    "phi_no_interaction",
    "interior_collision_margin",
    "TRIVIAL_ENDPOINT",
    "H0_NOT_CLOSED",
]

TRIVIAL_ENDPOINT = "trivial endpoint"
H0_NOT_CLOSED = "h=0 free-time search did not close"

_GOLDEN = 0.5 * (3.0 - math.sqrt(5.0))


@dataclass(frozen=True)
class SolveOptions:
    segments: int = 64
    grad_tol: float = 1e-8
    max_iters: int = 500
    collision_floor: Optional[float] = None   # default: 1e-6 * mean pairwise distance
    tau_rel_tol: float = 1e-8
    seed: int = 0
    max_expand: int = 40                      # doublings/halvings while bracketing tau

    def __post_init__(self):
        if self.segments < 2:
            raise UsageError("segments must be >= 2")
        for name in ("grad_tol", "max_iters", "tau_rel_tol", "max_expand"):
            if not getattr(self, name) > 0:
                raise UsageError(f"{name} must be positive")
        if self.collision_floor is not None and not self.collision_floor > 0:
            raise UsageError("collision_floor must be positive")


@dataclass(frozen=True)
class MinimizeResult:
    path: Optional[DiscretePath]
    value: float
    tau: float
    grad_norm: float
    iterations: int
    converged: bool
    interior_min_distance: float
    h: float = 0.0
    status: str = ""
    collision_floor: float = 0.0
    trace: tuple = field(default=(), repr=False)   # (tau, value) pairs of a free-time search

    @property
    def trivial(self) -> bool:
        return self.status == TRIVIAL_ENDPOINT


def _dual_norm(sys: MassSystem, g: np.ndarray) -> float:
    """Mass norm dual to the configuration norm: sqrt(sum |g_i|^2 / m_i)."""
    return float(np.sqrt(np.sum(g * g / sys.m[None, :, None])))


def _to_banded(diag: np.ndarray, off: np.ndarray) -> np.ndarray:
    """Upper banded storage of a symmetric block-tridiagonal matrix."""
    K, b, _ = diag.shape
    u = 2 * b - 1
    ab = np.zeros((u + 1, K * b))
    p, q = np.meshgrid(np.arange(b), np.arange(b), indexing="ij")
    base = (np.arange(K) * b)[:, None]
    upper = q >= p
    rows = (u + p - q)[upper]
    ab[rows[None, :], base + q[upper][None, :]] = diag[:, p[upper], q[upper]]
    if K > 1:
        rows = (u - (b + q - p)).ravel()
        ab[rows[None, :], base[1:] + q.ravel()[None, :]] = off.reshape(K - 1, -1)
    return ab


def _newton_direction(diag, off, grad):
    ab = _to_banded(diag, off)
    u = ab.shape[0] - 1
    scale = float(np.max(np.abs(ab[u])))
    mu = 0.0
    for _ in range(60):
        shifted = ab.copy()
        shifted[u] += mu
        try:
            cb = cholesky_banded(shifted, lower=False)
        except LinAlgError:
            mu = max(10.0 * mu, 1e-10 * scale)
            continue
        return -cho_solve_banded((cb, False), grad.ravel()).reshape(grad.shape)
    return -grad


def _mean_pair_distance(*xs) -> float:
    return float(np.mean([pairwise_distances(x).mean() for x in xs]))


def _deflect(path: DiscretePath, amplitude: float, seed: int) -> DiscretePath:
    rng = np.random.default_rng(seed)
    s = (path.times - path.times[0]) / path.duration
    bump = np.sin(np.pi * s)
    w = rng.standard_normal(path.nodes.shape[1:])
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    nodes = path.nodes + amplitude * bump[:, None, None] * w[None]
    return DiscretePath(path.times, nodes)


def _initial_path(sys, x, x_end, tau, opts, eps, initial):
    if initial is not None:
        if initial.segments != opts.segments:
            raise UsageError("initial path must have opts.segments segments")
        nodes = initial.nodes.copy()
        nodes[0], nodes[-1] = x, x_end
        return DiscretePath(np.linspace(0.0, tau, opts.segments + 1), nodes)
    path = straight_path(x, x_end, tau, opts.segments)
    if sys.n_bodies > 1:
        amp = 0.1 * _mean_pair_distance(x, x_end)
        attempt = 0
        while quadrature_min_distance(path, interior_only=True) <= eps and attempt < 20:
            path = _deflect(straight_path(x, x_end, tau, opts.segments), amp, opts.seed + attempt)
            attempt += 1
    return path


def _descend(sys, path, h, opts, eps):
    """Damped Newton on the interior nodes. Returns (path, grad_norm, iters, converged, status, eps)."""
    times = path.times
    nodes = path.nodes.copy()
    f = action(sys, path, h)
    status = "max iterations"
    gn = math.inf
    it = 0
    halvings = 0
    while it < opts.max_iters:
        cur = DiscretePath(times, nodes)
        g = action_gradient(sys, cur, h)[1:-1]
        gn = _dual_norm(sys, g)
        if gn <= opts.grad_tol:
            return cur, gn, it, True, "converged", eps
        it += 1
        diag, off = action_hessian_blocks(sys, cur)
        p = _newton_direction(diag[1:-1], off[1:-1], g)
        slope = float(np.sum(g * p))
        if slope >= 0:
            p, slope = -g / sys.m[None, :, None], -float(np.sum(g * g / sys.m[None, :, None]))
        alpha = 1.0
        accepted = False
        blocked = False
        while alpha > 1e-14:
            trial = nodes.copy()
            trial[1:-1] += alpha * p
            tpath = DiscretePath(times, trial)
            if sys.n_bodies > 1 and quadrature_min_distance(tpath, interior_only=True) <= eps:
                blocked = True
                alpha *= 0.5
                continue
            ft = action(sys, tpath, h)
            if ft <= f + 1e-4 * alpha * slope:
                accepted = True
            elif ft <= f + 8 * np.finfo(float).eps * abs(f):
                # round-off regime near the optimum: accept if the gradient shrinks
                gt = _dual_norm(sys, action_gradient(sys, tpath, h)[1:-1])
                accepted = gt < gn
            if accepted:
                nodes, f = trial, ft
                break
            alpha *= 0.5
        if not accepted:
            if blocked and halvings < 40:
                eps *= 0.5
                halvings += 1
                continue
            status = "line search stalled"
            break
    cur = DiscretePath(times, nodes)
    gn = _dual_norm(sys, action_gradient(sys, cur, h)[1:-1])
    return cur, gn, it, gn <= opts.grad_tol, status if gn > opts.grad_tol else "converged", eps


def _check_endpoints(sys, x, x_end, h):
    x = as_configuration(sys, x)
    x_end = as_configuration(sys, x_end)
    if not h >= 0:
        raise UsageError(f"energy h must be >= 0, got {h}")
    if not (in_omega(x) and in_omega(x_end)):
        raise UsageError("endpoint configurations must be collision free")
    return x, x_end


def minimize_fixed_time(sys: MassSystem, x, x_end, tau: float, h: float = 0.0,
                        opts: SolveOptions | None = None,
                        initial: DiscretePath | None = None) -> MinimizeResult:
    """Minimize the discretized (L+h)-action among paths from ``x`` to ``x_end`` in time ``tau``.

    The returned value is a local minimum and an upper bound (up to
    discretization error) for the true fixed-time infimum. ``initial``
    warm-starts the interior nodes; by default the straight line is used.
    """
    opts = opts or SolveOptions()
    x, x_end = _check_endpoints(sys, x, x_end, h)
    if not tau > 0:
        raise UsageError(f"tau must be positive, got {tau}")
    eps = opts.collision_floor
    if eps is None:
        eps = 1e-6 * _mean_pair_distance(x, x_end) if sys.n_bodies > 1 else 0.0
    path = _initial_path(sys, x, x_end, tau, opts, eps, initial)
    path, gn, iters, ok, status, eps = _descend(sys, path, h, opts, eps)
    return MinimizeResult(
        path=path,
        value=action(sys, path, h),
        tau=float(tau),
        grad_norm=gn,
        iterations=iters,
        converged=ok,
        interior_min_distance=quadrature_min_distance(path, interior_only=True),
        h=float(h),
        status=status,
        collision_floor=eps,
    )


@dataclass
class _TauSearch:
    """Bracket, golden-section on log(tau), then a root polish of d(value)/d(tau).

    ``evaluate(tau)`` returns ``(value, derivative, payload)``.
    """

    evaluate: Callable[[float], tuple]
    rel_tol: float
    max_expand: int
    cache: dict = field(default_factory=dict)

    def f(self, tau: float) -> float:
        if tau not in self.cache:
            self.cache[tau] = self.evaluate(tau)
        return self.cache[tau][0]

    def d(self, tau: float) -> float:
        self.f(tau)
        return self.cache[tau][1]

    def run(self, tau0: float) -> bool:
        closed = self._bracket(tau0)
        if closed is None:
            return False
        a, b, c = closed
        la, lb, lc = math.log(a), math.log(b), math.log(c)
        while lc - la > 1e-3:
            if lc - lb > lb - la:
                lx = lb + _GOLDEN * (lc - lb)
                if self.f(math.exp(lx)) < self.f(math.exp(lb)):
                    la, lb = lb, lx
                else:
                    lc = lx
            else:
                lx = lb - _GOLDEN * (lb - la)
                if self.f(math.exp(lx)) < self.f(math.exp(lb)):
                    lc, lb = lb, lx
                else:
                    la = lx
        a, c = math.exp(la), math.exp(lc)
        da, dc = self.d(a), self.d(c)
        if da < 0 < dc:
            root = brentq(self.d, a, c, xtol=self.rel_tol * a, rtol=max(self.rel_tol, 4e-16),
                          maxiter=100)
            self.f(root)
        return True

    def _bracket(self, tau0):
        lo, mid, hi = tau0 / 2.0, tau0, 2.0 * tau0
        if self.f(hi) < self.f(mid):
            for _ in range(self.max_expand):
                lo, mid, hi = mid, hi, 2.0 * hi
                if self.f(hi) >= self.f(mid):
                    return lo, mid, hi
            return None
        if self.f(lo) < self.f(mid):
            for _ in range(self.max_expand):
                lo, mid, hi = lo / 2.0, lo, mid
                if self.f(lo) >= self.f(mid):
                    return lo, mid, hi
            return None
        return lo, mid, hi

    def best(self):
        tau = min(self.cache, key=lambda t: (self.cache[t][0], -t))
        return tau, self.cache[tau]

    def trace(self):
        return tuple((t, self.cache[t][0]) for t in sorted(self.cache))


class _WarmStarts:
    """Keeps solved paths keyed by tau; hands out the nearest one in log(tau)."""

    def __init__(self):
        self.paths: dict[float, DiscretePath] = {}

    def nearest(self, tau: float) -> DiscretePath | None:
        if not self.paths:
            return None
        key = min(self.paths, key=lambda t: abs(math.log(t / tau)))
        return self.paths[key]


def _initial_tau(sys: MassSystem, x, x_end, h: float) -> float:
    dist = mass_norm(sys, x_end - x)
    if h > 0:
        return dist / math.sqrt(2.0 * h)
    # h = 0: a free-fall time at the configuration scale
    size = max(dist / math.sqrt(sys.total_mass),
               _mean_pair_distance(x, x_end) if sys.n_bodies > 1 else 0.0)
    return size ** 1.5 / math.sqrt(sys.grav_const * sys.total_mass)


def _trivial_result(h: float) -> MinimizeResult:
    return MinimizeResult(path=None, value=0.0, tau=0.0, grad_norm=0.0, iterations=0,
                          converged=True, interior_min_distance=math.inf, h=float(h),
                          status=TRIVIAL_ENDPOINT)


def minimize_free_time(sys: MassSystem, x, x_end, h: float,
                       opts: SolveOptions | None = None) -> MinimizeResult:
    """Minimize the (L+h)-action over paths and durations.

    The duration is bracketed by doubling/halving from the free-particle
    estimate, narrowed by golden section on log(tau), and finished with a
    root solve of d(value)/d(tau) = h - mean energy. The best fixed-time
    result seen is returned; ``trace`` lists every probed (tau, value).
    """
    opts = opts or SolveOptions()
    x, x_end = _check_endpoints(sys, x, x_end, h)
    if np.array_equal(x, x_end):
        return _trivial_result(h)
    warm = _WarmStarts()

    def evaluate(tau):
        res = minimize_fixed_time(sys, x, x_end, tau, h, opts, initial=warm.nearest(tau))
        if res.converged:
            warm.paths[tau] = res.path
        return res.value, h - mean_segment_energy(sys, res.path), res

    search = _TauSearch(evaluate, opts.tau_rel_tol, opts.max_expand)
    closed = search.run(_initial_tau(sys, x, x_end, h))
    _, (_, _, res) = search.best()
    status = res.status
    if not closed:
        status = H0_NOT_CLOSED if h == 0 else "free-time search did not close"
    return replace(res, converged=res.converged and closed, status=status,
                   trace=search.trace())


@dataclass(frozen=True)
class NoInteractionResult:
    value: float
    center_value: float                 # h*tau + |y - y'|^2 / (2 tau), block-total masses
    cluster_values: tuple[float, ...]   # phi_A(z_A, z'_A, tau) per block, 0 for singletons
    tau: float
    path: Optional[DiscretePath]        # the assembled interaction-free minimizer
    converged: bool
    status: str = ""
    trace: tuple = field(default=(), repr=False)


def phi_no_interaction(sys: MassSystem, x, x_end, P: ClusterPartition, h: float = 0.0,
                       tau: float | None = None,
                       opts: SolveOptions | None = None) -> NoInteractionResult:
    """Minimal action with the cross-cluster interaction removed.

    The block centers move uniformly (closed form); each block's relative
    motion is a fixed-time minimization of its own Lagrangian with no h term.
    Without ``tau`` the duration is optimized as in ``minimize_free_time``.
    """
    opts = opts or SolveOptions()
    x, x_end = _check_endpoints(sys, x, x_end, h)
    if tau is not None and not tau > 0:
        raise UsageError(f"tau must be positive, got {tau}")
    s0, s1 = cluster_split(sys, x, P), cluster_split(sys, x_end, P)
    M = P.block_masses(sys)
    dy2 = mass_norm(sys, s1.centers - s0.centers, masses=M) ** 2
    blocks = [a for a, c in enumerate(P.classes) if len(c) > 1]
    subs = {a: sys.subsystem(P.classes[a]) for a in blocks}
    warm = {a: _WarmStarts() for a in blocks}

    def evaluate(t):
        center = h * t + dy2 / (2.0 * t)
        deriv = h - dy2 / (2.0 * t * t)
        parts = {}
        for a in blocks:
            r = minimize_fixed_time(subs[a], s0.relatives[a], s1.relatives[a], t, 0.0, opts,
                                    initial=warm[a].nearest(t))
            if r.converged:
                warm[a].paths[t] = r.path
            parts[a] = r
            deriv -= mean_segment_energy(subs[a], r.path)
        value = center + sum(r.value for r in parts.values())
        return value, deriv, (center, parts)

    if tau is None:
        if np.array_equal(x, x_end):
            return NoInteractionResult(0.0, 0.0, tuple(0.0 for _ in P.classes), 0.0, None,
                                       True, TRIVIAL_ENDPOINT)
        search = _TauSearch(evaluate, opts.tau_rel_tol, opts.max_expand)
        closed = search.run(_initial_tau(sys, x, x_end, h))
        tau, (value, _, (center, parts)) = search.best()
        trace = search.trace()
    else:
        closed = True
        value, _, (center, parts) = evaluate(float(tau))
        trace = ((float(tau), value),)

    path = _assemble(sys, P, s0, s1, tau, opts.segments, parts)
    ok = closed and all(r.converged for r in parts.values())
    status = "converged" if ok else (
        (H0_NOT_CLOSED if h == 0 else "free-time search did not close") if not closed
        else "block solve not converged")
    cluster_values = tuple(parts[a].value if a in parts else 0.0 for a in range(len(P)))
    return NoInteractionResult(float(value), float(center), cluster_values, float(tau), path,
                               ok, status, trace)


def _assemble(sys, P, s0, s1, tau, segments, parts) -> DiscretePath:
    times = np.linspace(0.0, tau, segments + 1)
    s = times / tau
    nodes = np.empty((segments + 1, sys.n_bodies, sys.dim))
    for a, c in enumerate(P.classes):
        y = (1.0 - s)[:, None] * s0.centers[a] + s[:, None] * s1.centers[a]
        if a in parts:
            rel = parts[a].path.nodes
        else:
            rel = np.zeros((segments + 1, 1, sys.dim))
        nodes[:, list(c)] = y[:, None, :] + rel
    return DiscretePath(times, nodes)


def interior_collision_margin(result) -> float:
    """Smallest mutual distance over strictly interior samples of the result's path.

    ``inf`` means not applicable: a single body, or a trivial-endpoint result
    that carries no path.
    """
    path = result.path if hasattr(result, "path") else result
    if path is None or path.nodes.shape[1] < 2:
        return math.inf
    return quadrature_min_distance(path, interior_only=True)
