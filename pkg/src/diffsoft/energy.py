"""Potential energies built from autodiff primitives.

Every force and second-order quantity in the simulator is derived from
these scalar functions by differentiation; none has a hand-written
gradient.  Positions are ``(n, 2)`` arrays, actions one entry per fiber.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .scene import RestData, Scene, compute_rest_data

ALL_TERMS = frozenset({"spring", "neohookean", "collision", "friction", "gravity"})


class DomainError(ValueError):
    """Energy evaluated outside its domain (e.g. a non-positive activation)."""


def log_substitute(J):
    """Second-order Taylor expansion of log(J) about J = 1, defined for every J."""
    d = J - 1.0
    return d - 0.5 * ad.square(d)


def edge_matrix(ends: np.ndarray, n: int) -> np.ndarray:
    """``(f, n)`` matrix mapping positions to fiber vectors ``x[j] - x[i]``."""
    E = np.zeros((len(ends), n))
    rows = np.arange(len(ends))
    E[rows, ends[:, 1]] += 1.0
    E[rows, ends[:, 0]] -= 1.0
    return E


def deformation_matrix(triangles: np.ndarray, dm_inv: np.ndarray, n: int) -> np.ndarray:
    """``(2m, n)`` matrix whose product with positions stacks ``F^T`` per triangle.

    With ``Ds = [x1 - x0, x2 - x0]`` and ``F = Ds Dm^-1``, row ``r`` of ``F^T``
    is ``sum_s Dm^-1[s, r] (x_{s+1} - x0)``.
    """
    m = len(triangles)
    A = np.zeros((2 * m, n))
    for t in range(m):
        for r in range(2):
            row = 2 * t + r
            for s in range(2):
                c = dm_inv[t, s, r]
                A[row, triangles[t, s + 1]] += c
                A[row, triangles[t, 0]] -= c
    return A


def spring_energy(x, a, edges: np.ndarray, rest_lengths: np.ndarray, stiffness: np.ndarray) -> Var:
    """Sum of ``k/2 (l / (a l0) - 1)^2`` over contractile fibers.

    ``edges`` is the ``edge_matrix`` of the fibers.
    """
    a = ad._lift(a)
    if np.any(a.value <= 0):
        raise DomainError("spring_energy: activations must be > 0")
    if len(edges) == 0:
        return ad.constant(0.0)
    d = ad.matmul(edges, x)
    length = ad.sqrt(ad.sum(ad.square(d), axis=1))
    strain = length / (a * rest_lengths) - 1.0
    return ad.dot(ad.square(strain), 0.5 * stiffness)


def neo_hookean_energy(x, deformation: np.ndarray, areas: np.ndarray, mu: float, lam: float) -> Var:
    """Area-weighted neo-Hookean energy with the quadratic log substitute.

    ``deformation`` is the ``deformation_matrix`` of the mesh.
    """
    if len(areas) == 0:
        return ad.constant(0.0)
    Ft = ad.reshape(ad.matmul(deformation, x), (len(areas), 2, 2))
    I1 = ad.sum(ad.square(Ft), axis=(1, 2))
    L = log_substitute(ad.det2x2(Ft))
    psi = (I1 - 2.0) * (0.5 * mu) - L * mu + ad.square(L) * (0.5 * lam)
    return ad.dot(psi, areas)


def collision_energy(x, k_collision: float) -> Var:
    """One-sided quadratic penalty against the ground line y = 0."""
    depth = ad.relu(-x[:, 1])
    return ad.sum(ad.square(depth)) * k_collision


def friction_energy(x, x0, h: float, k_friction: float, eps: float) -> Var:
    """Horizontal-velocity penalty gated by previous-step ground contact.

    The velocity is the backward-Euler one, ``(x - x0) / h``, and the gate
    ``relu(eps - x0_y)`` only looks at the previous positions.
    """
    gate = ad.relu(eps - x0[:, 1]) * (k_friction / (h * h))
    return ad.dot(ad.square(x[:, 0] - x0[:, 0]), gate)


def gravity_energy(x, masses: np.ndarray, gravity: np.ndarray) -> Var:
    return ad.dot(x, -masses[:, None] * gravity[None, :])


class EnergyModel:
    """Scene energies with a selectable subset of terms.

    ``terms`` picks from ``ALL_TERMS``; tests use it to isolate terms and
    to build potential-free systems.
    """

    def __init__(self, scene: Scene, rest: RestData, terms=ALL_TERMS):
        self.scene = scene
        self.rest = rest
        self.terms = frozenset(terms)
        n = scene.n_vertices
        self.edges = edge_matrix(rest.fiber_ends, n)
        self.deformation = deformation_matrix(scene.triangles, rest.dm_inv, n)
        self.half_mass = 0.5 * np.repeat(rest.masses[:, None], 2, axis=1)

    @classmethod
    def from_scene(cls, scene: Scene, terms=None) -> "EnergyModel":
        terms = ALL_TERMS if terms is None else frozenset(terms)
        unknown = terms - ALL_TERMS
        if unknown:
            raise ValueError(f"unknown energy terms {sorted(unknown)}")
        return cls(scene, compute_rest_data(scene), terms)

    def spring(self, x, a) -> Var:
        r = self.rest
        return spring_energy(x, a, self.edges, r.rest_lengths, r.stiffness)

    def neo_hookean(self, x) -> Var:
        m = self.scene.material
        return neo_hookean_energy(x, self.deformation, self.rest.areas, m.mu, m.lam)

    def collision(self, x) -> Var:
        return collision_energy(x, self.scene.contact.k_collision)

    def friction(self, x, x0) -> Var:
        c = self.scene.contact
        return friction_energy(x, x0, self.scene.dt, c.k_friction, c.eps)

    def gravity(self, x) -> Var:
        return gravity_energy(x, self.rest.masses, self.scene.gravity)

    def total_potential(self, x, a, x0=None) -> Var:
        """Sum of the enabled terms; friction needs ``x0`` and is skipped without it."""
        t = self.terms
        parts = []
        if "spring" in t and self.scene.n_fibers:
            parts.append(self.spring(x, a))
        if "neohookean" in t and len(self.scene.triangles):
            parts.append(self.neo_hookean(x))
        if "collision" in t and self.scene.contact.k_collision:
            parts.append(self.collision(x))
        if "friction" in t and x0 is not None and self.scene.contact.k_friction:
            parts.append(self.friction(x, x0))
        if "gravity" in t and np.any(self.scene.gravity):
            parts.append(self.gravity(x))
        if not parts:
            return ad.sum(ad._lift(x) * 0.0)
        total = parts[0]
        for p in parts[1:]:
            total = total + p
        return total

    def incremental_potential(self, x, x0, v0, a) -> Var:
        """Backward-Euler objective ``1/2 |x - (x0 + h v0)|_M^2 + h^2 E(x, a)``."""
        h = self.scene.dt
        d = x - (x0 + v0 * h)
        inertia = ad.dot(ad.square(d), self.half_mass)
        return inertia + self.total_potential(x, a, x0) * (h * h)
