"""Discretized (L+h)-action on piecewise-linear paths.

Each segment contributes its exact kinetic energy, a 3-point Simpson rule
for U along the chord, and ``h * dt``. The cluster splitting below uses the
same quadrature nodes, so the splitting identity holds to round-off.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    ClusterPartition,
    MassSystem,
    UsageError,
    cluster_split,
    pair_indices,
    pairwise_distances,
    potential_gradient,
    potential_hessian,
    potential_stack,
)

__all__ = [
    "DiscretePath",
    "ActionSplit",
    "straight_path",
    "action",
    "action_gradient",
    "action_hessian_blocks",
    "split_action",
    "interaction_integral",
    "energy_profile",
    "mean_segment_energy",
    "quadrature_min_distance",
]


@dataclass(frozen=True)
class DiscretePath:
    times: np.ndarray   # (n+1,)
    nodes: np.ndarray   # (n+1, n_bodies, dim)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        q = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "nodes", q)
        if t.ndim != 1 or t.size < 2:
            raise UsageError("a path needs at least two time nodes")
        if q.ndim != 3 or q.shape[0] != t.size:
            raise UsageError(f"nodes shape {q.shape} does not match {t.size} times")
        if not np.all(np.diff(t) > 0):
            raise UsageError("path times must be strictly increasing")

    @property
    def segments(self) -> int:
        return self.times.size - 1

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[1:] + self.nodes[:-1])

    def at(self, t: float) -> np.ndarray:
        """Linear interpolation of the configuration at time ``t``."""
        if not self.times[0] <= t <= self.times[-1]:
            raise UsageError(f"t={t} outside [{self.times[0]}, {self.times[-1]}]")
        k = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.segments - 1))
        s = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        return (1.0 - s) * self.nodes[k] + s * self.nodes[k + 1]

    def restrict(self, t0: float, t1: float) -> "DiscretePath":
        """The sub-path on ``[t0, t1]``, cut at the interpolated endpoints."""
        if not (self.times[0] <= t0 < t1 <= self.times[-1]):
            raise UsageError(f"[{t0}, {t1}] is not inside the path span")
        eps = 1e-12 * max(1.0, abs(t0), abs(t1))
        inner = (self.times > t0 + eps) & (self.times < t1 - eps)
        times = np.concatenate([[t0], self.times[inner], [t1]])
        nodes = np.concatenate([self.at(t0)[None], self.nodes[inner], self.at(t1)[None]])
        return DiscretePath(times, nodes)


def straight_path(x, x_end, tau: float, segments: int, t0: float = 0.0) -> DiscretePath:
    x = np.asarray(x, dtype=float)
    x_end = np.asarray(x_end, dtype=float)
    s = np.linspace(0.0, 1.0, segments + 1)
    nodes = (1.0 - s)[:, None, None] * x + s[:, None, None] * x_end
    return DiscretePath(t0 + tau * s, nodes)


def _check(sys: MassSystem, path: DiscretePath, h: float | None = None):
    if path.nodes.shape[1:] != (sys.n_bodies, sys.dim):
        raise UsageError(f"path nodes {path.nodes.shape[1:]} do not match the mass system")
    if h is not None and not h >= 0:
        raise UsageError(f"energy h must be >= 0, got {h}")


def _segment_terms(sys: MassSystem, path: DiscretePath):
    """Per-segment kinetic energy integrals and Simpson integrals of U."""
    dt = np.diff(path.times)
    dx = np.diff(path.nodes, axis=0)
    m = sys.m
    kin = 0.5 * np.sum(m[None, :, None] * dx * dx, axis=(1, 2)) / dt
    u_nodes = potential_stack(sys, path.nodes)
    u_mid = potential_stack(sys, path.midpoints)
    pot = dt / 6.0 * (u_nodes[:-1] + 4.0 * u_mid + u_nodes[1:])
    return dt, kin, pot


def action(sys: MassSystem, path: DiscretePath, h: float = 0.0) -> float:
    """A_{L+h} of the path; ``inf`` if a quadrature node is a collision."""
    _check(sys, path, h)
    dt, kin, pot = _segment_terms(sys, path)
    return float(np.sum(kin) + np.sum(pot) + h * np.sum(dt))


def mean_segment_energy(sys: MassSystem, path: DiscretePath) -> float:
    """Time average of T - U with U averaged by the Simpson rule.

    For a uniform grid whose interior nodes are stationary for the action,
    ``h - mean_segment_energy`` is d(action)/d(duration).
    """
    dt, kin, pot = _segment_terms(sys, path)
    return float(np.mean((kin - pot) / dt))


def action_gradient(sys: MassSystem, path: DiscretePath, h: float = 0.0) -> np.ndarray:
    """d(action)/d(nodes), shape ``(n+1, n_bodies, dim)``; ``h`` does not enter."""
    _check(sys, path, h)
    dt = np.diff(path.times)
    dx = np.diff(path.nodes, axis=0)
    m = sys.m[None, :, None]
    g = np.zeros_like(path.nodes)
    p = m * dx / dt[:, None, None]
    g[:-1] -= p
    g[1:] += p
    gu_nodes = potential_gradient(sys, path.nodes)
    gu_mid = potential_gradient(sys, path.midpoints)
    w = dt[:, None, None]
    g[:-1] += w / 6.0 * gu_nodes[:-1] + w / 3.0 * gu_mid
    g[1:] += w / 6.0 * gu_nodes[1:] + w / 3.0 * gu_mid
    return g


def action_hessian_blocks(sys: MassSystem, path: DiscretePath) -> tuple[np.ndarray, np.ndarray]:
    """Block-tridiagonal Hessian over all nodes.

    Returns ``(diag, off)`` with ``diag[k]`` the ``(b, b)`` block of node ``k``
    and ``off[k]`` the block coupling node ``k`` (rows) to ``k+1`` (columns),
    where ``b = n_bodies * dim``.
    """
    dt = np.diff(path.times)
    b = sys.n_bodies * sys.dim
    mvec = np.repeat(sys.m, sys.dim)
    Mk = np.diag(mvec)
    h_nodes = potential_hessian(sys, path.nodes)
    h_mid = potential_hessian(sys, path.midpoints)
    w = dt[:, None, None]
    diag = np.zeros((path.times.size, b, b))
    seg_diag = Mk[None] / w
    diag[:-1] += seg_diag + w / 6.0 * h_nodes[:-1] + w / 6.0 * h_mid
    diag[1:] += seg_diag + w / 6.0 * h_nodes[1:] + w / 6.0 * h_mid
    off = -Mk[None] / w + w / 6.0 * h_mid
    return diag, off


@dataclass(frozen=True)
class ActionSplit:
    h_term: float
    center_kinetic: float
    cluster_actions: tuple[float, ...]
    interaction: float
    total: float

    @property
    def no_interaction(self) -> float:
        """A_{L+h, I=0}: the total with the cross-cluster term removed."""
        return self.total - self.interaction


def _simpson(dt, f_nodes, f_mid):
    return dt / 6.0 * (f_nodes[:-1] + 4.0 * f_mid + f_nodes[1:])


def _cluster_stack_potentials(sys: MassSystem, xs: np.ndarray, P: ClusterPartition):
    """Per-block internal potentials and cross sum on a stack, shapes (k, nb) and (k,)."""
    k = xs.shape[0]
    if sys.n_bodies < 2:
        return np.zeros((k, len(P))), np.zeros(k)
    r = pairwise_distances(xs)
    m = sys.m
    i, j = pair_indices(sys.n_bodies)
    with np.errstate(divide="ignore"):
        terms = sys.grav_const * m[i] * m[j] / r
    blk = P.block_of()
    same = blk[i] == blk[j]
    inner = np.stack([terms[:, same & (blk[i] == a)].sum(axis=1) for a in range(len(P))], axis=1)
    return inner, terms[:, ~same].sum(axis=1)


def split_action(sys: MassSystem, path: DiscretePath, P: ClusterPartition,
                 h: float = 0.0) -> ActionSplit:
    """Decompose the action into h-term, center kinetic, cluster actions and interaction."""
    _check(sys, path, h)
    dt = np.diff(path.times)
    split_nodes = [cluster_split(sys, q, P) for q in path.nodes]
    M = P.block_masses(sys)
    y = np.array([s.centers for s in split_nodes])
    dy = np.diff(y, axis=0)
    center_kin = float(np.sum(0.5 * np.sum(M[None, :, None] * dy * dy, axis=(1, 2)) / dt))

    inner_n, cross_n = _cluster_stack_potentials(sys, path.nodes, P)
    inner_m, cross_m = _cluster_stack_potentials(sys, path.midpoints, P)
    m = sys.m
    cluster_actions = []
    for a, c in enumerate(P.classes):
        z = np.array([s.relatives[a] for s in split_nodes])
        dz = np.diff(z, axis=0)
        mc = m[list(c)][None, :, None]
        kin = np.sum(0.5 * np.sum(mc * dz * dz, axis=(1, 2)) / dt)
        pot = np.sum(_simpson(dt, inner_n[:, a], inner_m[:, a]))
        cluster_actions.append(float(kin + pot))
    interaction = float(np.sum(_simpson(dt, cross_n, cross_m)))
    h_term = float(h * np.sum(dt))
    total = h_term + center_kin + sum(cluster_actions) + interaction
    return ActionSplit(h_term, center_kin, tuple(cluster_actions), interaction, total)


def interaction_integral(sys: MassSystem, path: DiscretePath, P: ClusterPartition) -> float:
    """Time integral of the cross-block potential sum (Simpson per segment)."""
    _check(sys, path)
    dt = np.diff(path.times)
    _, cross_n = _cluster_stack_potentials(sys, path.nodes, P)
    _, cross_m = _cluster_stack_potentials(sys, path.midpoints, P)
    return float(np.sum(_simpson(dt, cross_n, cross_m)))


def energy_profile(sys: MassSystem, path: DiscretePath) -> np.ndarray:
    """``(n, 2)`` array of (midpoint time, T - U) using the segment velocity."""
    _check(sys, path)
    dt = np.diff(path.times)
    v = np.diff(path.nodes, axis=0) / dt[:, None, None]
    kin = 0.5 * np.sum(sys.m[None, :, None] * v * v, axis=(1, 2))
    e = kin - potential_stack(sys, path.midpoints)
    return np.column_stack([0.5 * (path.times[1:] + path.times[:-1]), e])


def quadrature_min_distance(path: DiscretePath, interior_only: bool = False) -> float:
    """Smallest mutual distance over nodes and segment midpoints.

    With ``interior_only`` the two endpoint nodes are skipped. ``inf`` for a
    single body.
    """
    if path.nodes.shape[1] < 2:
        return float("inf")
    nodes = path.nodes[1:-1] if interior_only else path.nodes
    pts = np.concatenate([nodes, path.midpoints]) if nodes.size else path.midpoints
    return float(pairwise_distances(pts).min())
