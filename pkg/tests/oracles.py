"""Closed-form reference solutions, built independently of the solvers."""
import math

import numpy as np
from scipy.integrate import quad


def kepler_arc(a, e, E0, E1, m1=1.0, m2=1.0, G=1.0):
    """Endpoints, duration and exact action of a two-body elliptic arc.

    Eccentric anomaly parametrization; bodies placed about the center of mass.
    """
    mu = G * (m1 + m2)
    n = math.sqrt(mu / a ** 3)
    b = a * math.sqrt(1 - e * e)
    M = m1 + m2

    def config(E):
        rel = np.array([a * (math.cos(E) - e), b * math.sin(E)])
        return np.array([-m2 / M * rel, m1 / M * rel])

    tau = ((E1 - e * math.sin(E1)) - (E0 - e * math.sin(E0))) / n
    reduced = m1 * m2 / M
    # v^2/2 + mu/r = eps + 2 mu/r, and mu/r dt = mu/(a n) dE
    value = reduced * (-mu / (2 * a) * tau + 2 * mu * (E1 - E0) / (a * n))
    return config(E0), config(E1), tau, value


def circular_orbit(radius=0.5, m=1.0, G=1.0):
    """Equal-mass circular orbit, bodies at +-radius. Returns (omega, positions(t), velocities(t))."""
    d = 2 * radius
    omega = math.sqrt(G * 2 * m / d ** 3)

    def pos(t):
        t = np.atleast_1d(t)
        u = np.stack([np.cos(omega * t), np.sin(omega * t)], axis=-1) * radius
        return np.stack([u, -u], axis=1)

    def vel(t):
        t = np.atleast_1d(t)
        u = np.stack([-np.sin(omega * t), np.cos(omega * t)], axis=-1) * radius * omega
        return np.stack([u, -u], axis=1)

    return omega, pos, vel


def circular_action(radius, m, G, tau):
    """Adaptive quadrature of T + U along the circular orbit."""
    omega, pos, vel = circular_orbit(radius, m, G)

    def lag(t):
        x, v = pos(t)[0], vel(t)[0]
        kin = 0.5 * m * np.sum(v * v)
        return kin + G * m * m / np.linalg.norm(x[0] - x[1])

    return quad(lag, 0.0, tau, epsabs=0, epsrel=1e-13, limit=200)[0]


def parabolic_initial(m1=1.0, m2=1.0, G=1.0, r0=1.0):
    """Two bodies at separation r0 with zero-energy radial relative velocity."""
    M = m1 + m2
    v_rel = math.sqrt(2 * G * M / r0)
    x0 = np.array([[-m2 / M * r0, 0.0], [m1 / M * r0, 0.0]])
    v0 = np.array([[-m2 / M * v_rel, 0.0], [m1 / M * v_rel, 0.0]])
    return x0, v0


def hyperbolic_initial(v_inf, m1=1.0, m2=1.0, G=1.0, r0=1.0):
    """Radial escape with asymptotic relative speed v_inf."""
    M = m1 + m2
    v_rel = math.sqrt(v_inf ** 2 + 2 * G * M / r0)
    x0 = np.array([[-m2 / M * r0, 0.0], [m1 / M * r0, 0.0]])
    v0 = np.array([[-m2 / M * v_rel, 0.0], [m1 / M * v_rel, 0.0]])
    return x0, v0
