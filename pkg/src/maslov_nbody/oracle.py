"""Brute-force Morse index of the second variation by piecewise-linear
finite elements, for cross-checking the Maslov pipeline.

For a coefficient path B = [[P, Q], [Q^T, R]] (momenta first) the form is

    A[x] = int (x' - Q x)^T P^{-1} (x' - Q x) - x^T R x  dt

on H^1_0 of the window, whose Euler-Lagrange system is xi' = J B xi.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigvals_banded
from scipy.optimize import brentq

from .errors import InputError, SingularConfigurationError
from .linear import CoefficientPath
from .maslov import morse_from_maslov

NEGATIVE_RTOL = 1e-10
NEAR_ZERO_RTOL = 1e-8
GAUSS_POINTS = 3
MAX_EXTRA_REFINEMENTS = 3


@dataclass
class IndexForm:
    window: tuple
    nodes: int
    k: int
    band: np.ndarray
    eigenvalues: np.ndarray = field(default=None, repr=False)

    @property
    def size(self):
        return self.band.shape[1]

    def dense(self):
        """Full symmetric matrix (for tests; the band form is what gets solved)."""
        n, w = self.size, self.band.shape[0]
        m = np.zeros((n, n))
        for d in range(w):
            idx = np.arange(n - d)
            m[idx + d, idx] = self.band[d, : n - d]
            m[idx, idx + d] = self.band[d, : n - d]
        return m

    def spectrum(self):
        if self.eigenvalues is None:
            self.eigenvalues = eigvals_banded(self.band, lower=True)
        return self.eigenvalues

    @property
    def norm(self):
        ev = self.spectrum()
        return float(np.abs(ev).max()) if ev.size else 0.0


def assemble(path, window, N):
    """Lumped-mass scaled FEM matrix of the form on ``window`` with N elements.

    The matrix is divided by the element length so that its eigenvalues
    approximate those of the Sturm-Liouville operator.
    """
    a, b = map(float, window)
    if not b > a:
        raise InputError("window must have positive length")
    N = int(N)
    if N < 2:
        raise InputError("need at least two elements")
    k = path.k
    h = (b - a) / N
    gx, gw = np.polynomial.legendre.leggauss(GAUSS_POINTS)
    gx, gw = 0.5 * (gx + 1.0), 0.5 * gw
    total = k * (N + 1)
    full = np.zeros((2 * k, total))  # lower band storage, width 2k
    eye = np.eye(k)
    times = a + h * (np.arange(N)[:, None] + gx[None, :])
    mats = np.array([[path(t) for t in row] for row in times])  # (N, G, 2k, 2k)
    P, Q, R = mats[..., :k, :k], mats[..., :k, k:], mats[..., k:, k:]
    pinv = np.linalg.inv(P)
    shape = np.stack([1.0 - gx, gx])  # (2, G)
    dshape = np.array([-1.0, 1.0]) / h
    # ops[i] = dshape_i I - shape_i Q, shape (2, N, G, k, k)
    ops = dshape[:, None, None, None, None] * eye - shape[:, None, :, None, None] * Q[None]
    loc = np.zeros((N, 2 * k, 2 * k))
    for i in range(2):
        for j in range(2):
            blk = np.einsum("ngba,ngbc,ngcd->ngad", ops[i], pinv, ops[j])
            blk -= (shape[i] * shape[j])[None, :, None, None] * R
            loc[:, i * k:(i + 1) * k, j * k:(j + 1) * k] = h * np.einsum("g,ngad->nad", gw, blk)
    for r in range(2 * k):
        for c in range(r + 1):
            cols = np.arange(N) * k + c
            np.add.at(full[r - c], cols, loc[:, r, c])
    # drop the boundary nodes (Dirichlet conditions)
    inner = full[:, k: total - k].copy()
    n_in = inner.shape[1]
    for d in range(2 * k):
        inner[d, max(n_in - d, 0):] = 0.0
    return IndexForm((a, b), N + 1, k, inner / h)


def negative_count(form):
    """(number of eigenvalues below -1e-10 ||form||, number within 1e-8 ||form|| of 0)."""
    ev = form.spectrum()
    scale = form.norm
    neg = int(np.sum(ev < -NEGATIVE_RTOL * scale))
    near = int(np.sum(np.abs(ev) <= NEAR_ZERO_RTOL * scale))
    return neg, near


def smallest_magnitude(form, count=4):
    ev = form.spectrum()
    return np.sort(ev[np.argsort(np.abs(ev))[:count]]).tolist()


@dataclass
class Verdict:
    verdict: str
    fem_counts: list
    N_schedule: list
    near_zero: list
    maslov: int
    nstar: int
    morse_maslov: int
    window: tuple
    detail: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.verdict == "pass"

    def to_dict(self):
        return {"verdict": self.verdict, "window": list(self.window),
                "N_schedule": self.N_schedule, "fem_counts": self.fem_counts,
                "near_zero": self.near_zero, "maslov": self.maslov, "nstar": self.nstar,
                "morse_from_maslov": self.morse_maslov, **self.detail}


def stabilized_count(path, window, N_schedule=(200, 400, 800), extra=MAX_EXTRA_REFINEMENTS):
    """Refine until three consecutive counts agree; returns (count or None, counts, near, Ns, forms)."""
    Ns = [int(n) for n in N_schedule]
    counts, near, forms = [], [], []
    i = 0
    while True:
        if i >= len(Ns):
            if len(Ns) - len(N_schedule) >= extra:
                break
            Ns.append(2 * Ns[-1])
        f = assemble(path, window, Ns[i])
        c, z = negative_count(f)
        counts.append(c)
        near.append(z)
        forms.append(f)
        i += 1
        if len(counts) >= 3 and len(set(counts[-3:])) == 1 and i >= len(N_schedule):
            return counts[-1], counts, near, Ns[:i], forms
    return None, counts, near, Ns[:i], forms


def compare(path, window, N_schedule=(200, 400, 800), nstar=None):
    """FEM count against mu(V_D, gamma V_D) - n* on the same window."""
    a, b = map(float, window)
    k = path.k if nstar is None else nstar
    count, counts, near, Ns, forms = stabilized_count(path, (a, b), N_schedule)
    m, res = morse_from_maslov(path, a, b, nstar=k)
    detail = {}
    if any(near[-3:]):
        verdict = "deferred"
        detail["reason"] = "near-zero eigenvalue: a conjugate point sits at the window end"
    elif count is None:
        verdict = "deferred"
        detail["reason"] = "FEM count did not stabilize"
    else:
        verdict = "pass" if count == m else "fail"
    if verdict != "pass":
        detail["crossings"] = [c.to_dict() for c in res.crossings]
        detail["fem_spectrum_near_zero"] = smallest_magnitude(forms[-1])
    return Verdict(verdict, counts, Ns, near, res.value, k, m, (a, b), detail)


# -- Newtonian second variation ------------------------------------------------

def newtonian_path(system, position):
    """B(t) = diag(I, -E D^2U(q(t)) E^T) in M-orthonormal reduced coordinates.

    ``position`` maps Newtonian time to an ambient configuration.
    """
    basis = system.reduced_basis
    k = basis.shape[0]

    def f(t):
        q = position(t)
        if system.collision_margin(q) <= 0:
            raise SingularConfigurationError(f"collision inside the window at t={t}")
        hess = basis @ system.hessian(q) @ basis.T
        return np.block([[np.eye(k), np.zeros((k, k))], [np.zeros((k, k)), -hess]])

    return CoefficientPath(2 * k, f, (None, None), "newtonian")


def homothetic_position(orbit):
    """t -> r(t) s0 for a negative-energy homothetic orbit (t measured from the apex)."""
    if orbit.cc is None:
        raise InputError("homothetic window needs a central configuration")
    if orbit.H0 >= 0:
        raise InputError("Newtonian windows are provided for negative energy only")
    s0 = orbit.cc.s0.s
    lo, hi = orbit.collision_times

    def tau_of(t):
        if not lo < t < hi:
            raise SingularConfigurationError(f"t={t} outside the collision-free interval")
        span = 1.0
        while not orbit.t(-span) < t < orbit.t(span):
            span *= 2.0
        return brentq(lambda s: orbit.t(s) - t, -span, span, xtol=1e-15, rtol=1e-15)

    return lambda t: orbit.r(tau_of(t)) * s0


def harmonic_surrogate():
    """Scalar form int y'^2 - y^2: B = diag(1, 1)."""
    return CoefficientPath.constant(np.eye(2), "harmonic")


def random_path(rng, k, span, modes=3, amplitude=4.0):
    """Smooth random symmetric path with positive momentum block on [0, span]."""
    freqs = rng.uniform(0.2, 2.0, size=modes)
    phases = rng.uniform(0, 2 * np.pi, size=modes)
    pl = rng.normal(size=(modes, k, k)) * 0.4
    qs = rng.normal(size=(modes, k, k)) * 0.5
    rs = rng.normal(size=(modes, k, k))
    r0 = rng.normal(size=(k, k))
    r0 = r0 + r0.T + amplitude * np.eye(k) * rng.uniform(0.5, 1.5)

    def f(t):
        c = np.cos(freqs * t + phases)
        L = np.eye(k) + np.tensordot(c, pl, axes=1)
        P = L @ L.T + 0.2 * np.eye(k)
        Q = np.tensordot(c, qs, axes=1)
        R = np.tensordot(c, rs, axes=1)
        R = r0 + R + R.T
        return np.block([[P, Q], [Q.T, R]])

    return CoefficientPath(2 * k, f, (None, None), "random", {"span": span})
