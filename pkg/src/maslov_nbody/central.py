"""Central configurations: Newton search on the inertia ellipsoid and
spectral classification."""

from dataclasses import dataclass

import numpy as np

from .core import Chart, NormalizedConfiguration, restricted_hessian
from .errors import SearchFailure, SingularConfigurationError

SPIRAL = "spiral"
BOUNDARY = "non-spiral-boundary"
STRICT = "strict-non-spiral"

RESIDUAL_TOL = 1e-10
CLASSIFY_TOL = 1e-8
KERNEL_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class CentralConfiguration:
    system: object
    s0: NormalizedConfiguration
    residual: float
    lambdas: np.ndarray
    U0: float
    spiral_class: str
    kernel_dim: int
    iterations: int = 0

    def to_dict(self):
        return {
            "lambdas": [float(v) for v in self.lambdas],
            "U0": float(self.U0),
            "class": self.spiral_class,
            "kernel_dim": self.kernel_dim,
            "residual": float(self.residual),
            "s0": self.s0.s.tolist(),
        }


def ambient_residual(system, s):
    """M-norm of the gradient of U restricted to the ellipsoid, grad U + U M s."""
    g = system.gradient(s) + system.potential(s) * system.mass_diag * s
    return float(np.sqrt(g @ (g / system.mass_diag)))


def _spectrum(system, s):
    lam = np.linalg.eigvalsh(restricted_hessian(system, s).normalized)
    return np.sort(lam)


def classify_lambdas(lambdas, U0, tol=CLASSIFY_TOL):
    if len(lambdas) == 0:
        return STRICT
    gap = float(np.min(lambdas)) + U0 / 8.0
    if gap < -tol:
        return SPIRAL
    if gap > tol:
        return STRICT
    return BOUNDARY


def _kernel(lambdas, U0):
    return int(np.sum(np.abs(lambdas) <= KERNEL_RTOL * U0))


def from_point(system, s, tol=CLASSIFY_TOL, iterations=0):
    """Wrap a point already known to be central."""
    r, s = system.normalize(s)
    chart = Chart.at(system, s)
    nc = chart.evaluate(np.zeros(chart.dim))
    lam = _spectrum(system, chart.base)
    u0 = nc.U_val
    return CentralConfiguration(system, nc, ambient_residual(system, chart.base), lam, u0,
                                classify_lambdas(lam, u0, tol), _kernel(lam, u0), iterations)


def rotation_generators(system, s):
    """Ambient velocity fields of the infinitesimal rotations at s."""
    d = system.d
    pts = np.asarray(s, dtype=float).reshape(system.n, d)
    out = []
    for a in range(d):
        for b in range(a + 1, d):
            gen = np.zeros((d, d))
            gen[a, b], gen[b, a] = -1.0, 1.0
            out.append((pts @ gen.T).ravel())
    return out


def _transverse_basis(chart, x):
    """Orthonormal basis of chart directions transverse to the rotation orbit."""
    k = chart.dim
    gens = rotation_generators(chart.system, chart.to_ambient(x, check=False))
    if not gens or k == 0:
        return np.eye(k)
    jac = chart.jacobian(x)
    tang = np.array([np.linalg.lstsq(jac, g, rcond=None)[0] for g in gens])
    u, sv, vt = np.linalg.svd(tang)
    rank = int(np.sum(sv > 1e-10 * max(1.0, np.abs(tang).max())))
    return vt[rank:].T


def find_cc(system, guess, max_iter=200, tol=CLASSIFY_TOL):
    """Newton iteration in a recentered chart with Armijo backtracking on |grad|^2.

    Steps are restricted to directions transverse to the rotation orbit, since
    U is constant along rotations and the Hessian is singular there at every
    central configuration in dimension >= 2.  When the Newton step is
    not a descent direction for the merit function the step falls back to the
    steepest descent direction of |grad|^2.
    """
    _, s = system.normalize(guess)
    best = (np.inf, s)
    chart = Chart.at(system, s)
    x = np.zeros(chart.dim)
    stalled = False
    for it in range(max_iter):
        if np.linalg.norm(x) > 0.25:
            chart = Chart.at(system, chart.to_ambient(x))
            x = np.zeros(chart.dim)
        nc = chart.evaluate(x)
        s = nc.s
        res = ambient_residual(system, s)
        if res < best[0]:
            best = (res, s)
        if res <= RESIDUAL_TOL * 1e-2 or (res <= RESIDUAL_TOL and it > 0 and stalled):
            return from_point(system, s, tol, it)
        g, h = nc.U_grad, nc.U_hess
        phi = g @ g
        q = _transverse_basis(chart, x)
        w, vec = np.linalg.eigh(q.T @ h @ q)
        keep = np.abs(w) > 1e-10 * max(np.abs(w).max(), 1e-300)
        step = -q @ (vec[:, keep] @ ((vec[:, keep].T @ (q.T @ g)) / w[keep]))
        descent = -h @ g
        if 2.0 * (h @ step) @ g >= 0:
            step = descent / max(np.linalg.norm(descent), 1e-300) * min(0.1, np.sqrt(phi))
        lim = 0.2
        if np.linalg.norm(step) > lim:
            step *= lim / np.linalg.norm(step)
        alpha, accepted = 1.0, False
        slope = 2.0 * (h @ step) @ g
        for _ in range(40):
            try:
                trial = chart.evaluate(x + alpha * step, check=False)
                gt = trial.U_grad
                if gt @ gt <= phi + 1e-4 * alpha * slope or gt @ gt < phi * (1 - 1e-12):
                    accepted = True
                    break
            except SingularConfigurationError:
                pass
            alpha *= 0.5
        stalled = not accepted
        if not accepted:
            if res <= RESIDUAL_TOL:
                return from_point(system, s, tol, it)
            raise SearchFailure(f"line search failed at residual {res:.3e}", best=best)
        x = x + alpha * step
    res, s = best
    if res <= RESIDUAL_TOL:
        return from_point(system, s, tol, max_iter)
    raise SearchFailure(f"no convergence after {max_iter} iterations, best residual {res:.3e}",
                        best=best)


def classify(cc, tol=CLASSIFY_TOL):
    return classify_lambdas(cc.lambdas, cc.U0, tol)


def kernel_dim(cc):
    return _kernel(cc.lambdas, cc.U0)
