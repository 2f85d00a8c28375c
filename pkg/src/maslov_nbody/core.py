"""Masses, the Newtonian potential, the inertia ellipsoid and graph charts on it.

Ambient configurations are flat arrays of length d*n laid out body by body,
``q[i*d:(i+1)*d]`` being the position of body i.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .errors import (
    ChartDomainError,
    DegenerateConfigurationError,
    InputError,
    SingularConfigurationError,
)

COLLISION_TOL = 1e-13
DEFAULT_VALIDITY_RADIUS = 0.5


def _pairs(n):
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


@dataclass(frozen=True, eq=False)
class MassSystem:
    """Point masses in R^d together with an M-orthonormal basis of the
    zero-center-of-mass subspace.

    ``reduced_basis`` has shape (n*, d*n) with n* = d*(n-1); its rows e satisfy
    sum_i m_i e_i = 0 and e M e' = delta.
    """

    masses: np.ndarray
    d: int
    reduced_basis: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float).ravel()
        if m.size < 2:
            raise InputError("need at least two bodies")
        if int(self.d) < 1:
            raise InputError("dimension must be >= 1")
        if not np.all(np.isfinite(m)) or np.any(m <= 0):
            raise InputError("masses must be finite and strictly positive")
        m.setflags(write=False)
        object.__setattr__(self, "masses", m)
        object.__setattr__(self, "d", int(self.d))
        n, d = m.size, self.d
        constraint = np.zeros((d, n * d))
        for i in range(n):
            constraint[:, i * d:(i + 1) * d] = m[i] * np.eye(d)
        null = scipy.linalg.null_space(constraint)
        gram = null.T @ (self.mass_diag[:, None] * null)
        w, v = np.linalg.eigh(gram)
        basis = (null @ (v / np.sqrt(w)) @ v.T).T
        basis.setflags(write=False)
        object.__setattr__(self, "reduced_basis", basis)

    @property
    def n(self):
        return self.masses.size

    @property
    def nstar(self):
        return self.d * (self.n - 1)

    @property
    def mass_diag(self):
        return np.repeat(self.masses, self.d)

    @property
    def mass_matrix(self):
        return np.diag(self.mass_diag)

    def scaled(self, c):
        return MassSystem(self.masses * c, self.d)

    # -- configurations -------------------------------------------------

    def center(self, q):
        """Subtract the center of mass."""
        q = np.asarray(q, dtype=float).reshape(self.n, self.d)
        com = self.masses @ q / self.masses.sum()
        return (q - com).ravel()

    def to_reduced(self, q):
        return self.reduced_basis @ (self.mass_diag * np.asarray(q, dtype=float))

    def from_reduced(self, c):
        return self.reduced_basis.T @ np.asarray(c, dtype=float)

    def pair_distances(self, q):
        q = np.asarray(q, dtype=float).reshape(self.n, self.d)
        return np.array([np.linalg.norm(q[i] - q[j]) for i, j in _pairs(self.n)])

    def collision_margin(self, q):
        return float(self.pair_distances(q).min())

    def _check(self, q):
        q = np.asarray(q, dtype=float).ravel()
        if q.size != self.n * self.d:
            raise InputError(f"expected {self.n * self.d} coordinates, got {q.size}")
        if self.collision_margin(q) < COLLISION_TOL:
            raise SingularConfigurationError("collision: pairwise distance below 1e-13")
        return q.reshape(self.n, self.d)

    # -- potential --------------------------------------------------------

    def potential(self, q):
        """U(q) = sum_{i<j} m_i m_j / |q_i - q_j|."""
        q = self._check(_coords(q))
        m = self.masses
        return float(sum(m[i] * m[j] / np.linalg.norm(q[i] - q[j]) for i, j in _pairs(self.n)))

    def gradient(self, q):
        q = self._check(_coords(q))
        m, d = self.masses, self.d
        g = np.zeros((self.n, d))
        for i, j in _pairs(self.n):
            rij = q[i] - q[j]
            rho = np.linalg.norm(rij)
            f = -m[i] * m[j] * rij / rho ** 3
            g[i] += f
            g[j] -= f
        return g.ravel()

    def hessian(self, q):
        q = self._check(_coords(q))
        m, d, n = self.masses, self.d, self.n
        h = np.zeros((n * d, n * d))
        eye = np.eye(d)
        for i, j in _pairs(n):
            rij = q[i] - q[j]
            rho = np.linalg.norm(rij)
            blk = m[i] * m[j] * (3.0 * np.outer(rij, rij) / rho ** 5 - eye / rho ** 3)
            si, sj = slice(i * d, (i + 1) * d), slice(j * d, (j + 1) * d)
            h[si, si] += blk
            h[sj, sj] += blk
            h[si, sj] -= blk
            h[sj, si] -= blk
        return h

    # -- inertia ---------------------------------------------------------

    def moment_of_inertia(self, q):
        q = np.asarray(_coords(q), dtype=float).ravel()
        return float(q @ (self.mass_diag * q))

    def normalize(self, q):
        """Polar split q = r*s with I(s) = 1."""
        q = np.asarray(_coords(q), dtype=float).ravel()
        inertia = self.moment_of_inertia(q)
        if not inertia > 0:
            raise DegenerateConfigurationError("cannot normalize the zero configuration")
        r = float(np.sqrt(inertia))
        return r, q / r

    def configuration(self, positions):
        """Centered configuration built from raw ambient positions."""
        return Configuration(self, self.center(positions))

    def builtin(self, name):
        """Normalized named guess: 'equilateral', 'collinear' or 'two-body'."""
        n, d = self.n, self.d
        if name == "equilateral":
            if n != 3 or d < 2:
                raise InputError("builtin:equilateral needs n=3, d>=2")
            pts = np.zeros((3, d))
            pts[1, 0] = 1.0
            pts[2, 0], pts[2, 1] = 0.5, np.sqrt(3.0) / 2.0
        elif name == "collinear":
            pts = np.zeros((n, d))
            pts[:, 0] = np.linspace(-1.0, 1.0, n)
        elif name == "two-body":
            if n != 2:
                raise InputError("builtin:two-body needs n=2")
            pts = np.zeros((2, d))
            pts[0, 0], pts[1, 0] = 1.0, -1.0
        else:
            raise InputError(f"unknown builtin configuration {name!r}")
        return self.normalize(self.center(pts.ravel()))[1]


def _coords(q):
    return q.coords if isinstance(q, Configuration) else q


@dataclass(frozen=True, eq=False)
class Configuration:
    system: MassSystem
    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float).ravel().copy()
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)
        com = c.reshape(self.system.n, self.system.d).T @ self.system.masses
        if np.max(np.abs(com)) > 1e-12 * max(1.0, np.abs(c).max()) * self.system.masses.sum():
            raise InputError("center of mass is not at the origin")

    @property
    def reduced(self):
        return self.system.to_reduced(self.coords)

    @property
    def collision_margin(self):
        return self.system.collision_margin(self.coords)

    @property
    def collision_free(self):
        return self.collision_margin > 0


@dataclass(frozen=True, eq=False)
class NormalizedConfiguration:
    """A point of the inertia ellipsoid with chart data pulled back at x."""

    s: np.ndarray
    x: np.ndarray
    U_val: float
    U_grad: np.ndarray
    U_hess: np.ndarray
    M_hat: np.ndarray


class RestrictedHessian(NamedTuple):
    ambient: np.ndarray      # (D^2U + U M) compressed to the tangent space, dn x dn
    normalized: np.ndarray   # same form in an M-orthonormal tangent frame; eigenvalues are the lambdas
    frame: np.ndarray        # the frame used, rows M-orthonormal


def tangent_frame(system, s):
    """Rows spanning the M-orthogonal complement of s inside the reduced space."""
    c = system.to_reduced(s)
    comp = scipy.linalg.null_space(c[None, :])
    return comp.T @ system.reduced_basis


def restricted_hessian(system, s):
    """Hessian of U restricted to the inertia ellipsoid at s."""
    s = np.asarray(s, dtype=float).ravel()
    u = system.potential(s)
    h = system.hessian(s) + u * system.mass_matrix
    frame = tangent_frame(system, s)
    normalized = frame @ h @ frame.T
    normalized = 0.5 * (normalized + normalized.T)
    proj = frame.T @ frame * system.mass_diag[None, :]
    return RestrictedHessian(proj.T @ h @ proj, normalized, frame)


@dataclass(frozen=True, eq=False)
class Chart:
    """Normalized graph chart psi^{-1}(x) = (base + frame^T x)/sqrt(1+|x|^2)."""

    system: MassSystem
    base: np.ndarray
    frame: np.ndarray
    validity_radius: float = DEFAULT_VALIDITY_RADIUS

    @classmethod
    def at(cls, system, s, validity_radius=DEFAULT_VALIDITY_RADIUS):
        r, s = system.normalize(s)
        s = system.from_reduced(system.to_reduced(s))
        s = s / np.sqrt(system.moment_of_inertia(s))
        return cls(system, s, tangent_frame(system, s), validity_radius)

    @property
    def dim(self):
        return self.frame.shape[0]

    def describe(self):
        return {"base": self.base.tolist(), "frame": self.frame.tolist(),
                "validity_radius": self.validity_radius}

    def _check(self, x):
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.dim:
            raise InputError(f"chart coordinates need length {self.dim}")
        if np.linalg.norm(x) >= self.validity_radius:
            raise ChartDomainError(f"|x| = {np.linalg.norm(x):.3g} outside chart radius")
        return x

    def to_ambient(self, x, check=True):
        x = self._check(x) if check else np.asarray(x, dtype=float).ravel()
        return (self.base + self.frame.T @ x) / np.sqrt(1.0 + x @ x)

    def from_ambient(self, s):
        ms = self.system.mass_diag * np.asarray(s, dtype=float).ravel()
        denom = self.base @ ms
        if denom <= 0:
            raise ChartDomainError("point lies on the far side of the chart")
        return self.frame @ ms / denom

    def jacobian(self, x):
        """d psi^{-1}/dx, shape (dn, k)."""
        x = np.asarray(x, dtype=float).ravel()
        nrm = np.sqrt(1.0 + x @ x)
        y = self.base + self.frame.T @ x
        return self.frame.T / nrm - np.outer(y, x) / nrm ** 3

    def evaluate(self, x, check=True):
        """Pull U and the metric back to chart coordinates."""
        x = self._check(x) if check else np.asarray(x, dtype=float).ravel()
        sys_ = self.system
        n2 = 1.0 + x @ x
        nrm = np.sqrt(n2)
        y = self.base + self.frame.T @ x
        uy = sys_.potential(y)
        fg = self.frame @ sys_.gradient(y)
        u_val = nrm * uy
        u_grad = x / nrm * uy + nrm * fg
        u_hess = ((np.eye(x.size) / nrm - np.outer(x, x) / nrm ** 3) * uy
                  + (np.outer(x, fg) + np.outer(fg, x)) / nrm
                  + nrm * self.frame @ sys_.hessian(y) @ self.frame.T)
        u_hess = 0.5 * (u_hess + u_hess.T)
        return NormalizedConfiguration(y / nrm, x, u_val, u_grad, u_hess, metric(x))


def chart_eval(chart, x):
    return chart.evaluate(x)


# The closed forms below are specific to the normalized graph chart.

def metric(x):
    x = np.asarray(x, dtype=float).ravel()
    n2 = 1.0 + x @ x
    return (np.eye(x.size) - np.outer(x, x) / n2) / n2


def metric_inv(x):
    x = np.asarray(x, dtype=float).ravel()
    return (1.0 + x @ x) * (np.eye(x.size) + np.outer(x, x))


def inv_metric_apply(x, p):
    """M_hat(x)^{-1} p."""
    x, p = np.asarray(x, float).ravel(), np.asarray(p, float).ravel()
    return (1.0 + x @ x) * (p + x * (x @ p))


def inv_metric_quad(x, p):
    """<M_hat(x)^{-1} p, p>."""
    x, p = np.asarray(x, float).ravel(), np.asarray(p, float).ravel()
    xp = x @ p
    return (1.0 + x @ x) * (p @ p + xp * xp)


def inv_metric_quad_grad(x, p):
    """Gradient in x of <M_hat(x)^{-1} p, p>."""
    x, p = np.asarray(x, float).ravel(), np.asarray(p, float).ravel()
    xp = x @ p
    return 2.0 * x * (p @ p + xp * xp) + 2.0 * (1.0 + x @ x) * xp * p


def inv_metric_quad_hess(x, p):
    """Hessian in x of <M_hat(x)^{-1} p, p>."""
    x, p = np.asarray(x, float).ravel(), np.asarray(p, float).ravel()
    xp = x @ p
    k = x.size
    return (2.0 * (p @ p + xp * xp) * np.eye(k)
            + 4.0 * xp * (np.outer(x, p) + np.outer(p, x))
            + 2.0 * (1.0 + x @ x) * np.outer(p, p))


def inv_metric_apply_jac(x, p):
    """Jacobian in x of M_hat(x)^{-1} p."""
    x, p = np.asarray(x, float).ravel(), np.asarray(p, float).ravel()
    xp = x @ p
    return (2.0 * np.outer(p + x * xp, x)
            + (1.0 + x @ x) * (xp * np.eye(x.size) + np.outer(x, p)))
