"""Lagrangian subspaces, crossing forms and Maslov-type indices.

A Lagrangian subspace L of (R^{2k}, omega) with orthonormal frame [P; X]
(momenta on top) is encoded by the unitary U = P + iX and its symmetric
unitary W = U U^T, which depends on L only.  For two Lagrangians the
eigenvalues of W1^* W2 equal 1 exactly on L1 n L2, and the index of a pair
of paths is the number of eigenvalues passing 1 counterclockwise minus the
number passing clockwise.  Angles are taken in (-pi, pi]; a branch moving
from theta <= 0 to theta > 0 counts +1 and the reverse counts -1.  Together
with snapping |theta| <= 1e-8 to zero at the ends this reproduces the
partial-signature endpoint rule (m+ at the start, -m- at the end).

Crossing forms are computed independently and logged for every crossing as
a cross-check of the spectral count.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.integrate import DOP853
from scipy.optimize import linear_sum_assignment

from .errors import ContractViolation, InputError, InvariantViolation, NonRegularCrossing
from .linear import CoefficientPath, jmat, splitting

INTERSECTION_TOL = 1e-9
ENDPOINT_SNAP = 1e-8
FORM_TOL = 1e-9
MAX_ANGLE_STEP = 0.3
LOCATE_TOL = 1e-10
PERTURB_BUDGET = 1e-6


# -- frames ---------------------------------------------------------------

def orthonormalize(frame):
    """Orthonormal basis of the column span (polar factor keeps it smooth)."""
    u, _, vt = np.linalg.svd(np.asarray(frame, dtype=float), full_matrices=False)
    return u @ vt


@dataclass(frozen=True, eq=False)
class LagrangianFrame:
    frame: np.ndarray

    def __post_init__(self):
        f = np.atleast_2d(np.asarray(self.frame, dtype=float))
        if f.shape[0] != 2 * f.shape[1]:
            raise InputError("a Lagrangian frame must be 2k x k")
        if f.shape[1] and np.linalg.matrix_rank(f) < f.shape[1]:
            raise ContractViolation("frame is not of full column rank")
        f = orthonormalize(f) if f.size else f
        k = f.shape[1]
        if k and np.abs(f.T @ jmat(k) @ f).max() > 1e-10:
            raise ContractViolation("frame does not span a Lagrangian subspace")
        f.setflags(write=False)
        object.__setattr__(self, "frame", f)

    @property
    def dim(self):
        return self.frame.shape[1]

    @property
    def projector(self):
        return self.frame @ self.frame.T

    def unitary(self):
        k = self.dim
        return self.frame[:k] + 1j * self.frame[k:]

    def souriau(self):
        u = self.unitary()
        return u @ u.T

    def transform(self, g):
        return LagrangianFrame(np.asarray(g, dtype=float) @ self.frame)

    def __add__(self, other):
        """Direct sum in the interleaved ordering of ``linear.symplectic_sum``."""
        k1, k2 = self.dim, other.dim
        out = np.zeros((2 * (k1 + k2), k1 + k2))
        out[:k1, :k1] = self.frame[:k1]
        out[k1 + k2:2 * k1 + k2, :k1] = self.frame[k1:]
        out[k1:k1 + k2, k1:] = other.frame[:k2]
        out[2 * k1 + k2:, k1:] = other.frame[k2:]
        return LagrangianFrame(out)

    @classmethod
    def from_unitary(cls, u):
        u = np.asarray(u)
        return cls(np.vstack([u.real, u.imag]))


def dirichlet(k):
    """V_D: momenta free, positions zero."""
    return LagrangianFrame(np.vstack([np.eye(k), np.zeros((k, k))]))


def neumann(k):
    """V_N: momenta zero, positions free."""
    return LagrangianFrame(np.vstack([np.zeros((k, k)), np.eye(k)]))


def graph(S):
    """Lagrangian {(S x, x)} for symmetric S."""
    s = np.atleast_2d(np.asarray(S, dtype=float))
    return LagrangianFrame(np.vstack([0.5 * (s + s.T), np.eye(s.shape[0])]))


def random_lagrangian(k, rng):
    """Haar-distributed Lagrangian subspace via a random unitary."""
    z = (rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    q = q * (np.diag(r) / np.abs(np.diag(r)))
    return LagrangianFrame.from_unitary(q)


def _frame(x):
    return x.frame if isinstance(x, LagrangianFrame) else np.asarray(x, dtype=float)


def intersection_dim(L1, L2, tol=INTERSECTION_TOL):
    """Number of singular values of L1^T (I - P_{L2}) below ``tol``."""
    f1, f2 = _frame(L1), _frame(L2)
    if f1.shape[1] == 0:
        return 0
    comp = np.eye(f2.shape[0]) - f2 @ f2.T
    sv = np.linalg.svd(f1.T @ comp, compute_uv=False)
    return int(np.sum(sv < tol))


def subspace_distance(L1, L2):
    f1, f2 = _frame(L1), _frame(L2)
    return float(np.linalg.norm(f1 @ f1.T - f2 @ f2.T, 2))


def _angles(w1, w2):
    return np.angle(np.linalg.eigvals(w1.conj().T @ w2))


# -- paths ------------------------------------------------------------------

class LagrangianPath:
    """A C^1 path of Lagrangian subspaces given by frames and frame velocities.

    ``velocity`` may return any derivative of any smooth frame of the same
    subspaces; the crossing form only depends on it modulo the frame itself.
    """

    k = 0

    def frame(self, tau):
        raise NotImplementedError

    def velocity(self, tau):
        raise NotImplementedError

    def speed_bound(self):
        return 1.0

    def souriau(self, tau):
        f = self.frame(tau)
        u = f[:self.k] + 1j * f[self.k:]
        return u @ u.T

    def lagrangian(self, tau):
        return LagrangianFrame(self.frame(tau))


class ConstantPath(LagrangianPath):
    def __init__(self, L):
        self.L = L if isinstance(L, LagrangianFrame) else LagrangianFrame(L)
        self.k = self.L.dim

    def frame(self, tau):
        return self.L.frame

    def velocity(self, tau):
        return np.zeros_like(self.L.frame)

    def speed_bound(self):
        return 0.0


class FunctionPath(LagrangianPath):
    """Path from explicit frame and velocity callables."""

    def __init__(self, k, frame_fn, velocity_fn, speed=1.0):
        self.k, self._f, self._v, self._speed = k, frame_fn, velocity_fn, speed

    def frame(self, tau):
        return orthonormalize(self._f(tau))

    def velocity(self, tau):
        # derivative of the raw frame; re-expressed in the orthonormal basis
        raw = np.asarray(self._f(tau), dtype=float)
        q = orthonormalize(raw)
        g = np.linalg.lstsq(raw, q, rcond=None)[0]
        return np.asarray(self._v(tau), dtype=float) @ g

    def speed_bound(self):
        return self._speed


class UnitaryPath(LagrangianPath):
    """tau -> frame of U0 expm(tau K) with K skew-Hermitian."""

    def __init__(self, u0, K, t0=0.0):
        self.u0, self.K, self.t0 = np.asarray(u0), np.asarray(K), t0
        self.k = self.u0.shape[0]

    def _u(self, tau):
        return self.u0 @ scipy.linalg.expm((tau - self.t0) * self.K)

    def frame(self, tau):
        u = self._u(tau)
        return np.vstack([u.real, u.imag])

    def velocity(self, tau):
        du = self._u(tau) @ self.K
        return np.vstack([du.real, du.imag])

    def speed_bound(self):
        return float(np.abs(np.linalg.eigvals(self.K)).max()) if self.k else 0.0


class TransformedPath(LagrangianPath):
    """tau -> G(tau) L(tau) for a path of symplectic matrices G."""

    def __init__(self, path, G, Gdot, speed=None):
        self.path, self.G, self.Gdot = path, G, Gdot
        self.k = path.k
        self._speed = speed

    def frame(self, tau):
        return orthonormalize(self.G(tau) @ self.path.frame(tau))

    def velocity(self, tau):
        raw = self.G(tau) @ self.path.frame(tau)
        q = orthonormalize(raw)
        g = np.linalg.lstsq(raw, q, rcond=None)[0]
        d = self.Gdot(tau) @ self.path.frame(tau) + self.G(tau) @ self.path.velocity(tau)
        return d @ g

    def speed_bound(self):
        return self._speed if self._speed is not None else self.path.speed_bound() * 4.0


class Reparametrized(LagrangianPath):
    """tau -> L(phi(tau)) with phi monotone or not, phi' given."""

    def __init__(self, path, phi, dphi, speed=None):
        self.path, self.phi, self.dphi = path, phi, dphi
        self.k = path.k
        self._speed = speed

    def frame(self, tau):
        return self.path.frame(self.phi(tau))

    def velocity(self, tau):
        return self.dphi(tau) * self.path.velocity(self.phi(tau))

    def speed_bound(self):
        return self._speed if self._speed is not None else self.path.speed_bound()


class SumPath(LagrangianPath):
    """Direct sum of two paths (interleaved ordering)."""

    def __init__(self, p1, p2):
        self.p1, self.p2 = p1, p2
        self.k = p1.k + p2.k

    @staticmethod
    def _join(a, b, k1, k2):
        out = np.zeros((2 * (k1 + k2), k1 + k2))
        out[:k1, :k1] = a[:k1]
        out[k1 + k2:2 * k1 + k2, :k1] = a[k1:]
        out[k1:k1 + k2, k1:] = b[:k2]
        out[2 * k1 + k2:, k1:] = b[k2:]
        return out

    def frame(self, tau):
        return self._join(self.p1.frame(tau), self.p2.frame(tau), self.p1.k, self.p2.k)

    def velocity(self, tau):
        return self._join(self.p1.velocity(tau), self.p2.velocity(tau), self.p1.k, self.p2.k)

    def speed_bound(self):
        return max(self.p1.speed_bound(), self.p2.speed_bound())


class PropagatedPath(LagrangianPath):
    """tau -> gamma(tau, tau0) L0 for xi' = J B xi, by continuous orthonormalization.

    The frame obeys Z' = (I - Z Z^T) J B Z, which keeps the columns orthonormal
    and spans the propagated subspace.  Works backwards when ``tau1 < tau0``.
    """

    def __init__(self, path, L0, tau0, tau1, rtol=1e-11, atol=1e-12, max_step=np.inf):
        self.B = path
        f0 = _frame(L0)
        self.k = f0.shape[1]
        self.tau0, self.tau1 = float(tau0), float(tau1)
        self._j = jmat(self.k)
        n, k = 2 * self.k, self.k
        j = self._j

        def rhs(tau, y):
            z = y.reshape(n, k)
            v = j @ path(tau) @ z
            return (v - z @ (z.T @ v)).ravel()

        self._pieces = []
        self._breaks = [self.tau0]
        y0 = orthonormalize(f0).ravel()
        if self.tau1 != self.tau0:
            solver = DOP853(rhs, self.tau0, y0, self.tau1, rtol=rtol, atol=atol, max_step=max_step)
            while solver.status == "running":
                solver.step()
                if solver.status == "failed":
                    raise InvariantViolation("frame propagation failed")
                self._pieces.append(solver.dense_output())
                self._breaks.append(solver.t)
                # cheap cleanup keeps drift away from the Stiefel manifold
                z = solver.y.reshape(n, k)
                if np.abs(z.T @ z - np.eye(k)).max() > 1e-9:
                    solver.y[:] = orthonormalize(z).ravel()
        self._y0 = y0
        self._dir = 1.0 if self.tau1 >= self.tau0 else -1.0
        self._bt = np.array(self._breaks) * self._dir
        self._norm = max((np.linalg.norm(path(t), 2) for t in np.linspace(min(tau0, tau1), max(tau0, tau1), 33)), default=1.0)

    def frame(self, tau):
        n, k = 2 * self.k, self.k
        lo, hi = sorted((self.tau0, self.tau1))
        if tau < lo - 1e-9 or tau > hi + 1e-9:
            raise InputError(f"tau={tau} outside propagated span [{lo}, {hi}]")
        if not self._pieces:
            return self._y0.reshape(n, k)
        idx = int(np.clip(np.searchsorted(self._bt, tau * self._dir) - 1, 0, len(self._pieces) - 1))
        return orthonormalize(self._pieces[idx](tau).reshape(n, k))

    def velocity(self, tau):
        return self._j @ self.B(tau) @ self.frame(tau)

    def speed_bound(self):
        return self._norm


# -- crossing forms ---------------------------------------------------------

@dataclass
class CrossingRecord:
    tau: float
    intersection_dim: int
    m_plus: int
    m_minus: int
    spectral: int
    form_eigenvalues: list = field(default_factory=list)
    regular: bool = True
    endpoint: str = ""

    def to_dict(self):
        return {"tau": self.tau, "intersection_dim": self.intersection_dim,
                "m_plus": self.m_plus, "m_minus": self.m_minus,
                "contribution": self.spectral, "form_eigenvalues": self.form_eigenvalues,
                "regular": self.regular, "endpoint": self.endpoint}


def crossing_form_matrix(Z, Zdot, W, dim=None, tol=1e-6):
    """Matrix of h -> -h^T Z^T J Zdot h on {h : Z h in W}, in an orthonormal basis.

    With ``dim`` given, the ``dim`` smallest singular directions of
    W^T J Z are used (near-crossings located by bisection).
    """
    Z, Zdot, wf = np.asarray(Z, float), np.asarray(Zdot, float), _frame(W)
    k = Z.shape[1]
    j = jmat(k)
    _, sv, vt = np.linalg.svd(wf.T @ j @ Z)
    if dim is None:
        dim = int(np.sum(sv < tol))
    if dim == 0:
        return np.zeros((0, 0))
    basis = vt[k - dim:].T
    q = -Z.T @ j @ Zdot
    q = 0.5 * (q + q.T)
    return basis.T @ q @ basis


def crossing_form(Z, Zdot, W, dim=None, tol=FORM_TOL):
    """Signature (m+, m-) and eigenvalues of the crossing form; regular iff no
    eigenvalue is within ``tol`` of zero (relative to the frame velocity)."""
    q = crossing_form_matrix(Z, Zdot, W, dim)
    ev = np.linalg.eigvalsh(q) if q.size else np.zeros(0)
    scale = max(1.0, float(np.linalg.norm(Zdot, 2)))
    mp = int(np.sum(ev > tol * scale))
    mm = int(np.sum(ev < -tol * scale))
    return mp, mm, ev, bool(mp + mm == ev.size)


def pair_form(path1, path2, tau, dim):
    """Crossing form of the pair (path1, path2): Gamma(path2) - Gamma(path1)
    restricted to the intersection, evaluated in path2's frame."""
    z2, v2 = path2.frame(tau), path2.velocity(tau)
    q = crossing_form_matrix(z2, v2, path1.frame(tau), dim)
    if not isinstance(path1, ConstantPath) and q.size:
        z1, v1 = path1.frame(tau), path1.velocity(tau)
        k = z2.shape[1]
        j = jmat(k)
        _, sv, vt = np.linalg.svd(z1.T @ j @ z2)
        basis = vt[k - dim:].T
        vecs = z2 @ basis
        h1 = np.linalg.lstsq(z1, vecs, rcond=None)[0]
        q1 = -z1.T @ j @ v1
        q = q - h1.T @ (0.5 * (q1 + q1.T)) @ h1
    ev = np.linalg.eigvalsh(0.5 * (q + q.T)) if q.size else np.zeros(0)
    scale = max(1.0, float(np.linalg.norm(path2.velocity(tau), 2)),
                float(np.linalg.norm(path1.velocity(tau), 2)))
    mp = int(np.sum(ev > FORM_TOL * scale))
    mm = int(np.sum(ev < -FORM_TOL * scale))
    return mp, mm, ev, bool(mp + mm == ev.size)


# -- spectral-flow counting ---------------------------------------------------

@dataclass
class MaslovResult:
    value: int
    crossings: list
    span: tuple
    samples: int
    perturbed: tuple = (0.0, 0.0)

    def count_until(self, tau):
        """Index over [a, tau] for tau not at a crossing, using the stored log."""
        a, b = self.span
        total = 0
        for c in self.crossings:
            if c.endpoint == "start":
                total += c.spectral
            elif c.endpoint == "" and (c.tau - a) * (tau - c.tau) > 0:
                total += c.spectral
        return total

    def to_dict(self):
        return {"maslov": self.value, "span": list(self.span), "samples": self.samples,
                "endpoint_perturbation": list(self.perturbed),
                "crossings": [c.to_dict() for c in self.crossings]}


def _wrap(x):
    return (x + np.pi) % (2.0 * np.pi) - np.pi


def _branch_step(prev, new):
    """Match eigenvalue angles between samples; returns (matched new, max move)."""
    d = np.abs(_wrap(new[None, :] - prev[:, None]))
    rows, cols = linear_sum_assignment(d)
    matched = new[cols[np.argsort(rows)]]
    moves = np.abs(_wrap(matched - prev))
    return matched, float(moves.max()) if moves.size else 0.0


def _crossing_sign(prev, nxt):
    if abs(nxt - prev) > np.pi:
        return 0
    if prev <= 0.0 < nxt:
        return 1
    if prev > 0.0 >= nxt:
        return -1
    return 0


class _Tracker:
    def __init__(self, path1, path2):
        self.p1, self.p2 = path1, path2
        self.evals = 0

    def angles(self, tau):
        self.evals += 1
        return _angles(self.p1.souriau(tau), self.p2.souriau(tau))


def _locate(tracker, t0, t1, th0, branch, max_move):
    """Bisection for the parameter where ``branch`` passes angle 0."""
    a, b = t0, t1
    ta = th0[branch]
    while abs(b - a) > LOCATE_TOL:
        m = 0.5 * (a + b)
        th = tracker.angles(m)
        d = np.abs(_wrap(th - ta))
        val = th[int(np.argmin(d))]
        if (ta <= 0.0) == (val <= 0.0):
            a, ta = m, val
        else:
            b = m
    return 0.5 * (a + b)


def _endpoint_perturb(path1, path2, tau, inward):
    """Move an endpoint inward until its crossing form is regular or the
    intersection is empty; returns (new tau, shift)."""
    shift = 0.0
    for step in (1e-7, 2e-7, 4e-7, 8e-7, 1e-6):
        t = tau + inward * step
        dim = intersection_dim(path1.frame(t), path2.frame(t), ENDPOINT_SNAP)
        if dim == 0:
            return t, step
        mp, mm, ev, reg = pair_form(path1, path2, t, dim)
        if reg:
            return t, step
        shift = step
    raise NonRegularCrossing(f"endpoint crossing at {tau} stays degenerate within {PERTURB_BUDGET:g}")


def maslov_pair(path1, path2, a, b, speed=None, max_samples=2_000_000):
    """Index mu(path1(t), path2(t); [a, b]) by spectral flow, with crossing log."""
    if path1.k != path2.k:
        raise InputError("paths must live in the same symplectic space")
    if path1.k == 0 or a == b:
        return MaslovResult(0, [], (a, b), 0)
    tracker = _Tracker(path1, path2)
    direction = 1.0 if b > a else -1.0
    a0, b0 = a, b
    crossings = []

    # endpoint regularity: perturb the interval (never the system)
    pert = [0.0, 0.0]
    for idx, (t, inward) in enumerate(((a, direction), (b, -direction))):
        dim = intersection_dim(path1.frame(t), path2.frame(t), ENDPOINT_SNAP)
        if dim:
            mp, mm, ev, reg = pair_form(path1, path2, t, dim)
            if not reg:
                t2, sh = _endpoint_perturb(path1, path2, t, inward)
                pert[idx] = sh * inward
                if idx == 0:
                    a = t2
                else:
                    b = t2
    spd = speed if speed is not None else max(path1.speed_bound(), path2.speed_bound(), 1e-3)
    h = min(0.25 * MAX_ANGLE_STEP / (2.0 * spd), abs(b - a) / 8.0)
    h_min = 1e-12 * max(1.0, abs(b - a))

    th = tracker.angles(a)
    th = np.where(np.abs(th) <= ENDPOINT_SNAP, 0.0, th)
    start_zero = np.abs(th) == 0.0
    t = a
    total = 0
    first = True
    while (b - t) * direction > 0:
        step = min(h, abs(b - t))
        while True:
            t_new = t + direction * step
            last = abs(b - t_new) <= 1e-15 * max(1.0, abs(b))
            if last:
                t_new = b
            nw = tracker.angles(t_new)
            if last:
                nw = np.where(np.abs(nw) <= ENDPOINT_SNAP, 0.0, nw)
            matched, move = _branch_step(th, nw)
            if move <= MAX_ANGLE_STEP or step <= h_min:
                break
            step *= 0.5
        signs = [_crossing_sign(p, q) for p, q in zip(th, matched)]
        if any(signs):
            events = []
            for i, sg in enumerate(signs):
                if not sg:
                    continue
                if first and start_zero[i]:
                    events.append((a, sg, "start"))
                elif last and matched[i] == 0.0:
                    events.append((b, sg, "end"))
                else:
                    events.append((_locate(tracker, t, t_new, th, i, move), sg, ""))
            total += sum(e[1] for e in events)
            crossings.extend(_group(path1, path2, events, direction))
        th = matched
        t = t_new
        first = False
        if move < 0.25 * MAX_ANGLE_STEP:
            h = min(step * 1.6, abs(b0 - a0))
        else:
            h = step
        if tracker.evals > max_samples:
            raise InvariantViolation("sample budget exhausted while tracking eigenvalues")
    # endpoint crossings with no motion still appear in the log for completeness
    return MaslovResult(int(total), crossings, (a0, b0), tracker.evals, tuple(pert))


def _group(path1, path2, events, direction=1.0):
    events = sorted(events, key=lambda e: e[0])
    groups = []
    for e in events:
        if groups and abs(groups[-1][0][0] - e[0]) < 1e-8 and groups[-1][0][2] == e[2]:
            groups[-1].append(e)
        else:
            groups.append([e])
    out = []
    for g in groups:
        tau = float(np.mean([e[0] for e in g]))
        contrib = int(sum(e[1] for e in g))
        dim = len(g)
        mp, mm, ev, reg = pair_form(path1, path2, tau, dim)
        if direction < 0:
            mp, mm, ev = mm, mp, -ev[::-1]
        out.append(CrossingRecord(tau, dim, mp, mm, contrib, [float(x) for x in ev], reg, g[0][2]))
    return out


def maslov_index(W, path, a, b, **kw):
    """mu(W, path(t); [a, b]) for a fixed Lagrangian W."""
    w = W if isinstance(W, LagrangianPath) else ConstantPath(W)
    return maslov_pair(w, path, a, b, **kw)


# -- Hormander index ----------------------------------------------------------

def _log_unitary(m):
    t, z = scipy.linalg.schur(m, output="complex")
    ang = np.angle(np.diag(t))
    return z @ np.diag(1j * ang) @ z.conj().T


def geodesic(L0, L1):
    """Path from L0 to L1 on [0, 1]: U(t) = U0 expm(t log(U0^* U1)) up to the
    frame ambiguity, chosen so the endpoint subspaces match exactly."""
    u0, u1 = L0.unitary(), L1.unitary()
    K = _log_unitary(u0.conj().T @ u1)
    K = 0.5 * (K - K.conj().T)
    return UnitaryPath(u0, K)


def hormander_index(V0, V1, L0, L1, via=None):
    """s(V0, V1; L0, L1) = mu(V0, L(t)) - mu(V1, L(t)) along a path L from L0 to L1.

    With ``via`` the path is the concatenation L0 -> via -> L1.
    """
    if via is None:
        legs = [geodesic(L0, L1)]
    else:
        legs = [geodesic(L0, via), geodesic(via, L1)]
    total = 0
    for leg in legs:
        total += maslov_index(V0, leg, 0.0, 1.0).value - maslov_index(V1, leg, 0.0, 1.0).value
    return total


# -- stable and unstable subspaces --------------------------------------------

def _limit_split(path, side):
    lim = path.limits[0 if side < 0 else 1]
    if lim is None:
        raise InputError("coefficient path has no declared limit at this end")
    sp = splitting(lim)
    if not sp.hyperbolic:
        from .errors import SpiralError
        raise SpiralError("limit matrix is not hyperbolic at this end")
    return sp


def truncation_point(path, side, start=1.0, tol=1e-8, cap=1e4):
    """Smallest |tau| in a doubling schedule with ||B(tau) - B(+-inf)|| < tol."""
    lim = path.limits[0 if side < 0 else 1]
    tau = start
    while tau <= cap:
        ok = all(np.linalg.norm(path(side * s) - lim, 2) < tol for s in (tau, 1.25 * tau, 1.5 * tau))
        if ok:
            return side * tau
        tau *= 1.5
    raise InputError("coefficient path does not reach its limit within the cap")


@dataclass
class InvariantSubspace:
    path: PropagatedPath
    start: float
    limit_frame: np.ndarray
    evidence: dict


def unstable_subspace(B, tau_minus=None, tau_end=0.0, tol=1e-8):
    """V^u: propagate V+(J B(-inf)) forward from a truncation point."""
    sp = _limit_split(B, -1)
    tm = tau_minus if tau_minus is not None else truncation_point(B, -1, tol=tol)
    path = PropagatedPath(B, sp.V_plus, tm, max(tau_end, tm))
    ev = {"tau_minus": tm, "limit_gap": sp.gap,
          "coefficient_error": float(np.linalg.norm(B(tm) - B.limits[0], 2))}
    # successive-start check: start further out and compare at tau_end
    tm2 = tm * 1.5 - 1.0
    alt = PropagatedPath(B, sp.V_plus, tm2, max(tau_end, tm))
    ev["start_distance"] = subspace_distance(alt.frame(path.tau1), path.frame(path.tau1))
    return InvariantSubspace(path, tm, sp.V_plus, ev)


def stable_subspace(B, tau_plus=None, tau_end=0.0, tol=1e-8):
    """V^s: propagate V-(J B(+inf)) backward from a truncation point."""
    sp = _limit_split(B, +1)
    tp = tau_plus if tau_plus is not None else truncation_point(B, +1, tol=tol)
    path = PropagatedPath(B, sp.V_minus, tp, min(tau_end, tp))
    ev = {"tau_plus": tp, "limit_gap": sp.gap,
          "coefficient_error": float(np.linalg.norm(B(tp) - B.limits[1], 2))}
    tp2 = tp * 1.5 + 1.0
    alt = PropagatedPath(B, sp.V_minus, tp2, min(tau_end, tp))
    ev["start_distance"] = subspace_distance(alt.frame(path.tau1), path.frame(path.tau1))
    return InvariantSubspace(path, tp, sp.V_minus, ev)


@dataclass
class IndexReport:
    maslov: int
    nu: int
    morse: int
    crossings: list
    truncation: tuple
    evidence: dict
    momentum_positive: bool = True
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {"maslov": self.maslov, "nu": self.nu, "morse": self.morse,
                "truncation": list(self.truncation), "evidence": self.evidence,
                "momentum_block_positive": self.momentum_positive,
                "crossings": [c.to_dict() for c in self.crossings], **self.extra}


def momentum_block_positive(B, taus):
    k = B.k
    return bool(all(np.linalg.eigvalsh(B(t)[:k, :k]).min() > 0 for t in taus))


def _tail_to_limit(B, frame, tau_from, W, target, tol=1e-6, extend=4.0, max_extend=2000.0):
    """Extend the propagation of ``frame`` past ``tau_from`` with the path's
    coefficient until it is within ``tol`` of ``target`` (or stops moving).

    Returns (extra crossings path result, final distance, end tau).
    """
    span = extend
    while True:
        end = tau_from + span
        p = PropagatedPath(B, frame, tau_from, end)
        dist = subspace_distance(p.frame(end), target)
        still = subspace_distance(p.frame(end), p.frame(end - 1.0)) < 1e-10
        if dist < tol or still or span >= max_extend:
            return p, dist, end
        span *= 2.0


def mu_nu(B, tau0=0.0, against=None, tau_minus=None, tau_plus=None, tol=1e-8, full_line=True):
    """(mu(B; tau0), mu(B; R), nu(B)) for a path with hyperbolic limits.

    mu(B; tau0) counts crossings of V^u(tau) with V_D on (-inf, tau0]; the full
    line value continues to +inf.  nu = dim V^u(tau0) n V^s(tau0).
    """
    k = B.k
    W = against if against is not None else dirichlet(k)
    un = unstable_subspace(B, tau_minus, tau0, tol)
    tm = un.start
    res0 = maslov_index(W, un.path, tm, tau0)
    evidence = dict(un.evidence)
    result = {"mu_tau0": res0.value}
    crossings = list(res0.crossings)
    nu = None
    mu_line = None
    tp = None
    if full_line:
        st = stable_subspace(B, tau_plus, tau0, tol)
        tp = st.start
        evidence.update({"tau_plus": tp, "stable_start_distance": st.evidence["start_distance"]})
        nu = intersection_dim(un.path.frame(tau0), st.path.frame(tau0), 1e-6)
        fwd = PropagatedPath(B, un.path.frame(tau0), tau0, tp)
        res1 = maslov_index(W, fwd, tau0, tp)
        sp_plus = splitting(B.limits[1])
        # beyond tau_plus the coefficient is constant to tolerance; follow
        # the frame until it settles on V+(+inf) (or stops moving when
        # V^u meets V^s and part of it decays instead)
        tail, dist, end = _tail_to_limit(B, fwd.frame(tp), tp, W, sp_plus.V_plus)
        res2 = maslov_index(W, tail, tp, end)
        evidence["unstable_to_plus_limit_distance"] = dist
        evidence["tail_end"] = end
        mu_line = res0.value + res1.value + res2.value
        crossings += res1.crossings + res2.crossings
        vs_dist = subspace_distance(st.path.frame(tp), sp_plus.V_minus)
        evidence["stable_limit_distance"] = vs_dist
    taus = np.linspace(tm, tp if tp is not None else tau0, 41)
    return IndexReport(
        maslov=mu_line if mu_line is not None else res0.value,
        nu=nu if nu is not None else 0,
        morse=mu_line if mu_line is not None else res0.value,
        crossings=crossings,
        truncation=(tm, tp),
        evidence=evidence,
        momentum_positive=momentum_block_positive(B, taus),
        extra={"mu_tau0": res0.value, "mu_line": mu_line},
    )


# -- Morse index theorem --------------------------------------------------------

def dirichlet_path(B, t1, t2, L0=None):
    k = B.k
    return PropagatedPath(B, dirichlet(k) if L0 is None else L0, t1, t2)


def morse_from_maslov(B, t1, t2, nstar=None, path=None):
    """m- = mu(V_D, gamma(t, t1) V_D; [t1, t2]) - n*."""
    k = B.k if nstar is None else nstar
    p = path if path is not None else dirichlet_path(B, t1, t2)
    res = maslov_index(dirichlet(B.k), p, t1, t2)
    m = res.value - k
    if m < 0:
        raise InvariantViolation(f"negative Morse index {m} from Maslov index {res.value}")
    return m, res
