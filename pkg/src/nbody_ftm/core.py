"""Mass systems, configurations and cluster decompositions.

A configuration is an ``(n_bodies, dim)`` float array. All norms on
configuration space are mass weighted, ``|v|^2 = sum_i m_i |v_i|^2``, so the
kinetic energy of a velocity ``v`` is exactly ``0.5 * mass_norm(sys, v)**2``.

The potential is the positive force function ``U = sum_{i<j} G m_i m_j / r_ij``;
the Lagrangian is ``T + U`` and the energy ``T - U``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "UsageError",
    "MassSystem",
    "ClusterPartition",
    "ClusterSplit",
    "as_configuration",
    "pair_indices",
    "pairwise_distances",
    "pairwise_extremes",
    "potential",
    "potential_gradient",
    "potential_hessian",
    "in_omega",
    "mass_norm",
    "cluster_split",
    "cluster_reassemble",
]

Configuration = np.ndarray


class UsageError(ValueError):
    """Raised when an operation is called outside its preconditions."""


@dataclass(frozen=True)
class MassSystem:
    masses: tuple[float, ...]
    dim: int = 2
    grav_const: float = 1.0

    def __post_init__(self):
        masses = tuple(float(m) for m in np.atleast_1d(self.masses))
        object.__setattr__(self, "masses", masses)
        if len(masses) < 1:
            raise UsageError("a mass system needs at least one body")
        if any(not np.isfinite(m) or m <= 0 for m in masses):
            raise UsageError(f"masses must be positive, got {masses}")
        if not self.grav_const > 0:
            raise UsageError("grav_const must be positive")
        if int(self.dim) != self.dim or self.dim < 2:
            raise UsageError("dim must be an integer >= 2")

    @property
    def n_bodies(self) -> int:
        return len(self.masses)

    @property
    def m(self) -> np.ndarray:
        """Masses as an array (fresh copy)."""
        return np.array(self.masses)

    @property
    def total_mass(self) -> float:
        return float(sum(self.masses))

    def subsystem(self, bodies: Sequence[int]) -> "MassSystem":
        return MassSystem(tuple(self.masses[i] for i in bodies), self.dim, self.grav_const)


def as_configuration(sys: MassSystem, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (sys.n_bodies, sys.dim):
        raise UsageError(f"configuration shape {x.shape} does not match "
                         f"({sys.n_bodies}, {sys.dim})")
    return x


def pair_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Index arrays ``(i, j)`` over unordered pairs ``i < j``."""
    return np.triu_indices(n, k=1)


def pairwise_distances(x: np.ndarray) -> np.ndarray:
    """Distances ``r_ij`` over unordered pairs, in ``pair_indices`` order.

    Works on a single configuration ``(n, d)`` or a stack ``(..., n, d)``.
    """
    x = np.asarray(x, dtype=float)
    i, j = pair_indices(x.shape[-2])
    return np.linalg.norm(x[..., i, :] - x[..., j, :], axis=-1)


def pairwise_extremes(x) -> tuple[float, float]:
    """Return ``(R, r)``, the largest and smallest mutual distance."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise UsageError("pairwise extremes need at least two bodies")
    r = pairwise_distances(x)
    return float(r.max()), float(r.min())


def _pair_weights(sys: MassSystem) -> np.ndarray:
    m = sys.m
    i, j = pair_indices(sys.n_bodies)
    return sys.grav_const * m[i] * m[j]


def potential(sys: MassSystem, x) -> float:
    """Force function U(x); ``inf`` at a collision."""
    x = as_configuration(sys, x)
    if sys.n_bodies < 2:
        return 0.0
    r = pairwise_distances(x)
    if np.any(r == 0.0):
        return float("inf")
    return float(np.sum(_pair_weights(sys) / r))


def potential_stack(sys: MassSystem, xs: np.ndarray) -> np.ndarray:
    """U evaluated on a stack of configurations ``(k, n, d)``."""
    if sys.n_bodies < 2:
        return np.zeros(xs.shape[0])
    r = pairwise_distances(xs)
    with np.errstate(divide="ignore"):
        return np.sum(_pair_weights(sys) / r, axis=-1)


def potential_gradient(sys: MassSystem, xs: np.ndarray) -> np.ndarray:
    """dU/dx for one configuration or a stack; same shape as ``xs``."""
    xs = np.asarray(xs, dtype=float)
    g = np.zeros_like(xs)
    if sys.n_bodies < 2:
        return g
    i, j = pair_indices(sys.n_bodies)
    d = xs[..., i, :] - xs[..., j, :]
    r = np.linalg.norm(d, axis=-1)
    f = -(_pair_weights(sys) / r**3)[..., None] * d
    # scatter-add over pairs; small n so a loop over pairs is fine
    for k, (a, b) in enumerate(zip(i, j)):
        g[..., a, :] += f[..., k, :]
        g[..., b, :] -= f[..., k, :]
    return g


def potential_hessian(sys: MassSystem, xs: np.ndarray) -> np.ndarray:
    """Second derivatives of U, shape ``(..., n*d, n*d)``."""
    xs = np.asarray(xs, dtype=float)
    n, dim = sys.n_bodies, sys.dim
    lead = xs.shape[:-2]
    H = np.zeros(lead + (n * dim, n * dim))
    if n < 2:
        return H
    i, j = pair_indices(n)
    d = xs[..., i, :] - xs[..., j, :]
    r = np.linalg.norm(d, axis=-1)
    w = _pair_weights(sys)
    eye = np.eye(dim)
    # d^2/dx_i^2 of w/r = w (3 d d^T / r^5 - I / r^3)
    B = w[..., None, None] * (3.0 * d[..., :, None] * d[..., None, :] / r[..., None, None] ** 5
                              - eye / r[..., None, None] ** 3)
    for k, (a, b) in enumerate(zip(i, j)):
        sa, sb = slice(a * dim, (a + 1) * dim), slice(b * dim, (b + 1) * dim)
        H[..., sa, sa] += B[..., k, :, :]
        H[..., sb, sb] += B[..., k, :, :]
        H[..., sa, sb] -= B[..., k, :, :]
        H[..., sb, sa] -= B[..., k, :, :]
    return H


def in_omega(x) -> bool:
    """True when no two bodies coincide."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 2:
        return True
    return bool(pairwise_distances(x).min() > 0.0)


def mass_norm(sys: MassSystem, v, masses=None) -> float:
    """sqrt(sum_i m_i |v_i|^2). ``masses`` overrides the system masses,
    e.g. with block totals when ``v`` is a tuple of cluster centers."""
    v = np.asarray(v, dtype=float)
    m = sys.m if masses is None else np.asarray(masses, dtype=float)
    if v.ndim != 2 or v.shape != (m.size, sys.dim):
        raise UsageError(f"vector shape {v.shape} does not match ({m.size}, {sys.dim})")
    return float(np.sqrt(np.sum(m * np.sum(v * v, axis=1))))


@dataclass(frozen=True)
class ClusterPartition:
    """A partition of the body indices ``0..n-1`` into nonempty blocks."""

    classes: tuple[tuple[int, ...], ...]
    n_bodies: int = field(default=-1)

    def __post_init__(self):
        classes = tuple(tuple(sorted(int(i) for i in c)) for c in self.classes)
        classes = tuple(sorted(classes))
        object.__setattr__(self, "classes", classes)
        flat = [i for c in classes for i in c]
        n = self.n_bodies if self.n_bodies >= 0 else len(flat)
        object.__setattr__(self, "n_bodies", n)
        if any(len(c) == 0 for c in classes):
            raise UsageError("partition blocks must be nonempty")
        if sorted(flat) != list(range(n)):
            raise UsageError(f"{classes} is not a partition of range({n})")

    @classmethod
    def single(cls, n: int) -> "ClusterPartition":
        return cls((tuple(range(n)),), n)

    @classmethod
    def singletons(cls, n: int) -> "ClusterPartition":
        return cls(tuple((i,) for i in range(n)), n)

    def block_of(self) -> np.ndarray:
        """Array mapping body index to block index."""
        out = np.empty(self.n_bodies, dtype=int)
        for a, c in enumerate(self.classes):
            out[list(c)] = a
        return out

    def block_masses(self, sys: MassSystem) -> np.ndarray:
        m = sys.m
        return np.array([m[list(c)].sum() for c in self.classes])

    def cross_pairs(self) -> np.ndarray:
        """Boolean mask over ``pair_indices`` order: True for pairs in different blocks."""
        b = self.block_of()
        i, j = pair_indices(self.n_bodies)
        return b[i] != b[j]

    def __len__(self):
        return len(self.classes)


@dataclass(frozen=True)
class ClusterSplit:
    centers: np.ndarray                   # (n_blocks, dim), one y_A per block
    relatives: tuple[np.ndarray, ...]     # z_A, shape (|A|, dim) each
    partition: ClusterPartition

    @property
    def full_center(self) -> np.ndarray:
        return self.centers


def _check_partition(sys: MassSystem, P: ClusterPartition):
    if P.n_bodies != sys.n_bodies:
        raise UsageError(f"partition covers {P.n_bodies} bodies, system has {sys.n_bodies}")


def cluster_split(sys: MassSystem, x, P: ClusterPartition) -> ClusterSplit:
    x = as_configuration(sys, x)
    _check_partition(sys, P)
    m = sys.m
    centers, rel = [], []
    for c in P.classes:
        idx = list(c)
        mc = m[idx]
        # singletons are copied so their relative part is exactly zero
        y = x[idx[0]].copy() if len(idx) == 1 else (mc[:, None] * x[idx]).sum(axis=0) / mc.sum()
        centers.append(y)
        rel.append(x[idx] - y)
    return ClusterSplit(np.array(centers), tuple(rel), P)


def cluster_reassemble(split: ClusterSplit) -> np.ndarray:
    P = split.partition
    dim = split.centers.shape[1]
    x = np.empty((P.n_bodies, dim))
    for a, c in enumerate(P.classes):
        x[list(c)] = split.centers[a] + split.relatives[a]
    return x


def cluster_potentials(sys: MassSystem, x, P: ClusterPartition) -> tuple[np.ndarray, float]:
    """Per-block internal potentials U_A(z_A) and the cross-block interaction sum."""
    x = as_configuration(sys, x)
    _check_partition(sys, P)
    if sys.n_bodies < 2:
        return np.zeros(len(P)), 0.0
    r = pairwise_distances(x)
    with np.errstate(divide="ignore"):
        terms = _pair_weights(sys) / r
    b = P.block_of()
    i, j = pair_indices(sys.n_bodies)
    same = b[i] == b[j]
    inner = np.array([terms[same & (b[i] == a)].sum() for a in range(len(P))])
    return inner, float(terms[~same].sum())
