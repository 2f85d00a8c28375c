"""Linearized Hamiltonian systems: coefficient paths, frame changes,
limit matrices and fundamental solutions.

Phase-space vectors are ordered (momenta, positions) and the standard
symplectic matrix is J = [[0, -I], [I, 0]], so a linear Hamiltonian system
reads xi' = J B(tau) xi with B symmetric.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.integrate import DOP853
from scipy.interpolate import CubicSpline

from .core import (
    inv_metric_apply,
    inv_metric_apply_jac,
    inv_metric_quad,
    inv_metric_quad_grad,
    inv_metric_quad_hess,
    metric_inv,
)
from .errors import ContractViolation, DivergenceError, InputError, InvalidStateError

SYMPLECTIC_CHECK = 1e-10


def jmat(k):
    z, i = np.zeros((k, k)), np.eye(k)
    return np.block([[z, -i], [i, z]])


def symplectic_defect(g):
    k = g.shape[0] // 2
    j = jmat(k)
    return float(np.abs(g.T @ j @ g - j).max())


def is_symplectic(g, tol=SYMPLECTIC_CHECK):
    return symplectic_defect(g) <= tol * max(1.0, np.abs(g).max() ** 2)


def symplectic_sum(*mats):
    """Interleave Hamiltonian blocks: momenta of all blocks first, then positions."""
    mats = [np.atleast_2d(np.asarray(m, dtype=float)) for m in mats if np.asarray(m).size]
    if not mats:
        return np.zeros((0, 0))
    ks = [m.shape[0] // 2 for m in mats]
    total = sum(ks)
    out = np.zeros((2 * total, 2 * total))
    offs = np.concatenate([[0], np.cumsum(ks)])
    for m, k, o in zip(mats, ks, offs):
        idx = np.concatenate([np.arange(o, o + k), total + np.arange(o, o + k)])
        out[np.ix_(idx, idx)] = m
    return out


def symplectic_split(mat, ks):
    """Inverse of ``symplectic_sum`` for the diagonal blocks."""
    total = sum(ks)
    offs = np.concatenate([[0], np.cumsum(ks)])
    out = []
    for k, o in zip(ks, offs):
        idx = np.concatenate([np.arange(o, o + k), total + np.arange(o, o + k)])
        out.append(mat[np.ix_(idx, idx)])
    return out


# -- coefficient paths ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class CoefficientPath:
    """tau -> symmetric 2k x 2k matrix, optionally with limits at -inf / +inf."""

    dim: int
    func: object
    limits: tuple = (None, None)
    kind: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim % 2:
            raise InputError("coefficient path dimension must be even")

    @property
    def k(self):
        return self.dim // 2

    def __call__(self, tau):
        b = np.asarray(self.func(tau), dtype=float)
        return 0.5 * (b + b.T)

    def norm_bound(self, a, b, samples=64):
        return max(np.linalg.norm(self(t), 2) for t in np.linspace(a, b, samples))

    @classmethod
    def constant(cls, mat, kind="constant"):
        m = np.asarray(mat, dtype=float)
        m = 0.5 * (m + m.T)
        return cls(m.shape[0], lambda tau, _m=m: _m, (m, m), kind)

    @classmethod
    def from_samples(cls, taus, mats, kind="samples"):
        taus = np.asarray(taus, dtype=float)
        mats = np.asarray(mats, dtype=float)
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2] or len(taus) != len(mats):
            raise InputError("samples must be a list of square matrices matching tau")
        if len(taus) < 2:
            return cls.constant(mats[0], kind)
        spline = CubicSpline(taus, mats, axis=0)
        return cls(mats.shape[1], spline, (None, None), kind)


def sum_paths(*paths, kind="symplectic-sum"):
    paths = [p for p in paths if p.dim]
    lim = []
    for side in (0, 1):
        vals = [p.limits[side] for p in paths]
        lim.append(symplectic_sum(*vals) if all(v is not None for v in vals) else None)
    return CoefficientPath(sum(p.dim for p in paths),
                           lambda tau: symplectic_sum(*[p(tau) for p in paths]),
                           tuple(lim), kind)


def phi_R(path, R, Rdot, check_points=None):
    """Symplectic change of frame: -J R' R^{-1} + R^{-T} B R^{-1}.

    Solutions correspond through eta = R xi.  R is verified to be symplectic
    at ``check_points`` (default: a handful of points in [-1, 1]).
    """
    k = path.k
    j = jmat(k)
    pts = np.linspace(-1.0, 1.0, 5) if check_points is None else check_points
    for tau in pts:
        if not is_symplectic(np.asarray(R(tau), dtype=float)):
            raise ContractViolation(f"R(tau) not symplectic at tau={tau}")

    def f(tau):
        r = np.asarray(R(tau), dtype=float)
        rinv = np.linalg.inv(r)
        return -j @ np.asarray(Rdot(tau), dtype=float) @ rinv + rinv.T @ path(tau) @ rinv

    return CoefficientPath(path.dim, f, (None, None), path.kind + "+phi_R")


def blowup_frame_scaling(kind):
    """Powers of r in the diagonal frame change R of the two blow-up flavours,
    for the blocks (p1, p2, r, x).  Used by ``radial_frame``."""
    exps = (np.array([0.75, -0.25, -0.75, 0.25]) if kind == "mcgehee"
            else np.array([0.5, -0.5, -0.5, 0.5]))
    return exps


def radial_frame(kind, r, v, k):
    """Diagonal R(tau) and R'(tau) for a fiber of dimension k."""
    e = blowup_frame_scaling(kind)
    diag_e = np.concatenate([[e[0]], np.full(k, e[1]), [e[2]], np.full(k, e[3])])
    rvals = r ** diag_e
    return np.diag(rvals), np.diag(diag_e * v * rvals)


# -- second derivatives of the chart Hamiltonian --------------------------

def hamiltonian(chart, p1, p2, r, x):
    return 0.5 * (p1 ** 2 + inv_metric_quad(x, p2) / r ** 2) - chart.evaluate(x, check=False).U_val / r


def hamiltonian_field(chart, z):
    """J grad H for z = (p1, p2, r, x)."""
    k = chart.dim
    p1, p2, r, x = z[0], z[1:1 + k], z[1 + k], z[2 + k:]
    nc = chart.evaluate(x, check=False)
    g = inv_metric_quad(x, p2)
    dp1 = -(-g / r ** 3 + nc.U_val / r ** 2)
    dp2 = -(0.5 * inv_metric_quad_grad(x, p2) / r ** 2 - nc.U_grad / r)
    return np.concatenate([[dp1], dp2, [p1], inv_metric_apply(x, p2) / r ** 2])


def build_D2H(chart, p1, p2, r, x):
    """Hessian of H(p1, p2, r, x) = (p1^2 + <M_hat^{-1}p2, p2>/r^2)/2 - U_hat(x)/r."""
    if not r > 0:
        raise InvalidStateError("radius must be positive")
    p2 = np.asarray(p2, dtype=float).ravel()
    x = np.asarray(x, dtype=float).ravel()
    k = chart.dim
    nc = chart.evaluate(x, check=False)
    minv = metric_inv(x)
    mp = inv_metric_apply(x, p2)
    g = inv_metric_quad(x, p2)
    gx = inv_metric_quad_grad(x, p2)
    gxx = inv_metric_quad_hess(x, p2)
    jac = inv_metric_apply_jac(x, p2)
    n = 2 + 2 * k
    h = np.zeros((n, n))
    ip1, ip2, ir, ix = 0, slice(1, 1 + k), 1 + k, slice(2 + k, 2 + 2 * k)
    h[ip1, ip1] = 1.0
    h[ip2, ip2] = minv / r ** 2
    h[ip2, ir] = -2.0 * mp / r ** 3
    h[ip2, ix] = jac / r ** 2
    h[ir, ir] = 3.0 * g / r ** 4 - 2.0 * nc.U_val / r ** 3
    h[ir, ix] = -gx / r ** 3 + nc.U_grad / r ** 2
    h[ix, ix] = 0.5 * gxx / r ** 2 - nc.U_hess / r
    h = np.triu(h) + np.triu(h, 1).T
    return h


def state_momenta(state):
    """(p1, p2) of the chart Hamiltonian recovered from a blow-up state."""
    if state.kind == "mcgehee":
        return state.v / np.sqrt(state.r), np.sqrt(state.r) * state.u
    return state.v, state.r * state.u


def b_tau(state):
    """dt/dtau times D2H: the linearization written in the blown-up time."""
    p1, p2 = state_momenta(state)
    return state.time_factor * build_D2H(state.chart, p1, p2, state.r, state.x)


def bhat(kind, chart, v, u, r, x):
    """Closed form of the frame-changed linearization in blow-up time.

    Entries depend on (v, u, x) and, for the hyperbolic flavour, on 1/r.
    """
    u = np.asarray(u, dtype=float).ravel()
    x = np.asarray(x, dtype=float).ravel()
    k = chart.dim
    nc = chart.evaluate(x, check=False)
    minv = metric_inv(x)
    mu = inv_metric_apply(x, u)
    g = inv_metric_quad(x, u)
    gx = inv_metric_quad_grad(x, u)
    gxx = inv_metric_quad_hess(x, u)
    jac = inv_metric_apply_jac(x, u)
    if kind == "mcgehee":
        cr, cx, pot, pot_x, pot_xx = -0.75 * v, 0.25 * v, nc.U_val, nc.U_grad, nc.U_hess
    else:
        cr, cx = -0.5 * v, 0.5 * v
        pot, pot_x, pot_xx = nc.U_val / r, nc.U_grad / r, nc.U_hess / r
    n = 2 + 2 * k
    h = np.zeros((n, n))
    ip1, ip2, ir, ix = 0, slice(1, 1 + k), 1 + k, slice(2 + k, 2 + 2 * k)
    h[ip1, ip1] = 1.0
    h[ip1, ir] = cr
    h[ip2, ip2] = minv
    h[ip2, ir] = -2.0 * mu
    h[ip2, ix] = jac + cx * np.eye(k)
    h[ir, ir] = 3.0 * g - 2.0 * pot
    h[ir, ix] = pot_x - gx
    h[ix, ix] = 0.5 * gxx - pot_xx
    return np.triu(h) + np.triu(h, 1).T


def bhat_state(state):
    return bhat(state.kind, state.chart, state.v, state.u, state.r, state.x)


def bhat_path(traj):
    """CoefficientPath of the frame-changed linearization along a trajectory."""
    k = traj.segments[0].chart.dim
    if any(seg.chart.dim != k for seg in traj.segments):
        raise InputError("inconsistent chart dimensions")
    if traj.recenters:
        raise InputError("frame-changed path needs a trajectory in a single chart")
    return CoefficientPath(2 + 2 * k, lambda tau: bhat_state(traj.state(tau)),
                           (None, None), "bhat-" + traj.kind)


# -- limits ---------------------------------------------------------------

def collision_limit_blocks(v_star, U_star, Uxx_star, Mhat_star):
    """Limit matrix at a collision or parabolic end as the pair (radial, fiber)."""
    b1 = np.array([[1.0, -0.75 * v_star], [-0.75 * v_star, -2.0 * U_star]])
    uxx = np.atleast_2d(np.asarray(Uxx_star, dtype=float))
    k = uxx.shape[0] if uxx.size else 0
    if k == 0:
        return b1, np.zeros((0, 0))
    minv = np.linalg.inv(np.asarray(Mhat_star, dtype=float))
    b2 = np.block([[minv, 0.25 * v_star * np.eye(k)], [0.25 * v_star * np.eye(k), -uxx]])
    return b1, b2


def hyperbolic_limit_blocks(v_star, Mhat_star):
    b1 = np.array([[1.0, -0.5 * v_star], [-0.5 * v_star, 0.0]])
    m = np.atleast_2d(np.asarray(Mhat_star, dtype=float))
    k = m.shape[0] if m.size else 0
    if k == 0:
        return b1, np.zeros((0, 0))
    b2 = np.block([[np.linalg.inv(m), 0.5 * v_star * np.eye(k)],
                   [0.5 * v_star * np.eye(k), np.zeros((k, k))]])
    return b1, b2


def metric_normalizer(Mhat):
    """Constant symplectic R = diag(A^T, A^{-1}) with A = L^{-T}, M_hat = L L^T.

    Phi_R maps the fiber limit block to one with identity momentum block and
    position block -A^T U_xx A.
    """
    low = np.linalg.cholesky(np.asarray(Mhat, dtype=float))
    a = np.linalg.inv(low).T
    k = a.shape[0]
    z = np.zeros((k, k))
    return np.block([[a.T, z], [z, np.linalg.inv(a)]])


@dataclass(frozen=True, eq=False)
class HyperbolicSplitting:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    V_plus: np.ndarray
    V_minus: np.ndarray
    gap: float
    hyperbolic: bool

    def to_dict(self):
        return {"eigenvalues": [[float(e.real), float(e.imag)] for e in self.eigenvalues],
                "gap": self.gap, "hyperbolic": self.hyperbolic}


def splitting(B, rel_tol=1e-7):
    """Invariant subspaces of J B for eigenvalues in the right/left half planes."""
    B = np.asarray(B, dtype=float)
    k = B.shape[0] // 2
    jb = jmat(k) @ B
    eig = np.linalg.eigvals(jb)
    scale = 1.0 + np.abs(eig).max() if eig.size else 1.0
    gap = float(np.abs(eig.real).min()) if eig.size else float("inf")
    hyper = bool(gap > rel_tol * scale)
    vp = vm = None
    if hyper:
        t, z, sdim = scipy.linalg.schur(jb, sort="rhp")
        vp = z[:, :sdim]
        t, z, sdim2 = scipy.linalg.schur(jb, sort="lhp")
        vm = z[:, :sdim2]
        if sdim != k or sdim2 != k:
            hyper = False
    order = np.lexsort((eig.imag, eig.real))
    return HyperbolicSplitting(B, eig[order], vp, vm, gap, hyper)


def bhat_limits_collision(cc, v_star=None):
    """Splitting at a collision/parabolic end whose limit shape is the CC.

    ``v_star`` defaults to -sqrt(2U) (collision); parabolic escape uses +sqrt(2U).
    """
    u0 = cc.U0
    if v_star is None:
        v_star = -np.sqrt(2.0 * u0)
    b1, b2 = collision_limit_blocks(v_star, u0, cc.s0.U_hess, cc.s0.M_hat)
    return splitting(symplectic_sum(b1, b2))


def bhat_limits_hyperbolic(v_star, Mhat_star):
    b1, b2 = hyperbolic_limit_blocks(v_star, Mhat_star)
    return splitting(symplectic_sum(b1, b2))


def hyperbolicity_check(split):
    return ("hyperbolic" if split.hyperbolic else "non-hyperbolic"), split.gap


# -- fundamental solutions ------------------------------------------------

class FundamentalSolution:
    """gamma(tau, tau1) for xi' = J B xi, dense on the integrated span."""

    def __init__(self, tau1, tau2, segments, defect, corrections):
        self.tau1, self.tau2 = tau1, tau2
        self.segments = segments
        self.symplectic_defect = defect
        self.corrections = corrections
        self.direction = 1.0 if tau2 >= tau1 else -1.0

    def __call__(self, tau):
        lo, hi = sorted((self.tau1, self.tau2))
        if tau < lo - 1e-12 or tau > hi + 1e-12:
            raise InputError(f"tau={tau} outside span")
        for taus, dense, m in self.segments:
            a, b = sorted((taus[0], taus[-1]))
            if a - 1e-12 <= tau <= b + 1e-12:
                if not dense:
                    return m.copy()
                idx = np.searchsorted(np.array(taus) * self.direction, tau * self.direction) - 1
                idx = int(np.clip(idx, 0, len(dense) - 1))
                n = m.shape[0]
                return dense[idx](tau).reshape(n, n)
        raise InputError(f"tau={tau} not covered")

    def gamma(self, tau):
        return self(tau)


def integrate_fundamental(path, span, rtol=1e-12, atol=1e-13, resymplectify_every=50,
                          max_steps=500000, overflow=1e12):
    """Propagate gamma' = J B gamma, gamma(tau1) = I.

    Every ``resymplectify_every`` steps the matrix is replaced by
    gamma (I + J Delta / 2) with Delta = gamma^T J gamma - J, the first-order
    symplectic projection; each correction size is logged.
    """
    a, b = map(float, span)
    n = path.dim
    j = jmat(n // 2)
    g = np.eye(n)
    segments, corrections = [], []
    defect = 0.0
    cur = a
    total = 0
    fun = lambda tau, y: (j @ path(tau) @ y.reshape(n, n)).ravel()
    while True:
        solver = DOP853(fun, cur, g.ravel(), b, rtol=rtol, atol=atol)
        taus, dense = [cur], []
        segments.append((taus, dense, g.copy()))
        since = 0
        restart = False
        while solver.status == "running":
            solver.step()
            if solver.status == "failed":
                raise DivergenceError(f"fundamental solution integration failed at {solver.t}")
            total += 1
            since += 1
            taus.append(solver.t)
            dense.append(solver.dense_output())
            gm = solver.y.reshape(n, n)
            if np.abs(gm).max() > overflow:
                raise DivergenceError("fundamental solution overflow; use frame propagation")
            defect = max(defect, symplectic_defect(gm))
            if total > max_steps:
                raise DivergenceError("step budget exhausted")
            if solver.status == "running" and resymplectify_every and since >= resymplectify_every:
                delta = gm.T @ j @ gm - j
                corr = 0.5 * j @ delta
                size = float(np.abs(corr).max())
                corrections.append((solver.t, size))
                if size > 0:
                    g = gm @ (np.eye(n) + corr)
                    cur = solver.t
                    restart = True
                    break
                since = 0
        if not restart:
            break
    return FundamentalSolution(a, b, segments, defect, corrections)
