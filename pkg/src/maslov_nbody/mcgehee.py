"""Blow-up coordinates near total collision and near hyperbolic infinity.

Two flavours share one state layout:

* ``mcgehee``: v = r^{1/2} r', u = r^{3/2} M_hat x', with dt = r^{3/2} dtau.
  The energy identity reads (<M_hat^{-1}u,u> + v^2)/2 - U_hat = r H0.
* ``hyperbolic``: v = r', u = r M_hat x', with dt = r dtau.
  The energy identity reads (<M_hat^{-1}u,u> + v^2)/2 - U_hat/r = H0.

Internally the radius is integrated as log r so that trajectories can run
many decades into a collision without underflow.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import DOP853
from scipy.optimize import curve_fit

from .core import (
    Chart,
    inv_metric_apply,
    inv_metric_quad,
    inv_metric_quad_grad,
)
from .errors import DivergenceError, InputError, InvalidStateError

MCGEHEE = "mcgehee"
HYPERBOLIC = "hyperbolic"
KINDS = (MCGEHEE, HYPERBOLIC)

DIVERGENCE_BOUND = 1e6
RECENTER_RADIUS = 0.3


def _kind(kind):
    if kind in ("hyperbolic-mcgehee", HYPERBOLIC):
        return HYPERBOLIC
    if kind == MCGEHEE:
        return MCGEHEE
    raise InputError(f"unknown blow-up kind {kind!r}")


@dataclass(frozen=True, eq=False)
class BlowupState:
    kind: str
    v: float
    u: np.ndarray
    r: float
    x: np.ndarray
    chart: Chart
    tau: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", _kind(self.kind))
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float).ravel())
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).ravel())
        if not (np.isfinite(self.r) and self.r > 0):
            raise InvalidStateError("radius must be positive")
        if self.u.size != self.chart.dim or self.x.size != self.chart.dim:
            raise InvalidStateError("u and x must match the chart dimension")

    def pack(self):
        return np.concatenate([[self.v], self.u, [np.log(self.r)], self.x, [self.t]])

    @classmethod
    def unpack(cls, kind, chart, y, tau):
        k = chart.dim
        return cls(kind, float(y[0]), y[1:1 + k], float(np.exp(y[1 + k])),
                   y[2 + k:2 + 2 * k], chart, float(tau), float(y[-1]))

    @property
    def time_factor(self):
        """dt/dtau."""
        return self.r ** 1.5 if self.kind == MCGEHEE else self.r


def _rhs(kind, chart, y):
    k = chart.dim
    v, u = y[0], y[1:1 + k]
    rho, x = y[1 + k], y[2 + k:2 + 2 * k]
    nc = chart.evaluate(x, check=False)
    g = inv_metric_quad(x, u)
    gx = inv_metric_quad_grad(x, u)
    out = np.empty_like(y)
    if kind == MCGEHEE:
        out[0] = 0.5 * v * v + g - nc.U_val
        out[1:1 + k] = -0.5 * u * v + nc.U_grad - 0.5 * gx
        out[-1] = np.exp(1.5 * rho)
    else:
        rinv = np.exp(-rho)
        out[0] = g - nc.U_val * rinv
        out[1:1 + k] = -u * v + nc.U_grad * rinv - 0.5 * gx
        out[-1] = np.exp(rho)
    out[1 + k] = v
    out[2 + k:2 + 2 * k] = inv_metric_apply(x, u)
    return out


def rhs(state):
    """Derivative of (v, u, r, x) in tau plus dt/dtau.

    Returns a dict with keys v, u, r, x, t.
    """
    d = _rhs(state.kind, state.chart, state.pack())
    k = state.chart.dim
    return {"v": float(d[0]), "u": d[1:1 + k], "r": state.r * float(d[1 + k]),
            "x": d[2 + k:2 + 2 * k], "t": float(d[-1])}


def energy_residual(state, H0, kind=None):
    """Left minus right side of the energy identity for ``kind``
    (defaults to the state's own kind)."""
    kind = _kind(kind or state.kind)
    nc = state.chart.evaluate(state.x, check=False)
    kin = 0.5 * (inv_metric_quad(state.x, state.u) + state.v ** 2)
    if kind == MCGEHEE:
        return float(kin - nc.U_val - state.r * H0)
    return float(kin - nc.U_val / state.r - H0)


def _project_v(kind, chart, y, H0):
    """Re-solve the energy identity for v, keeping its sign."""
    k = chart.dim
    x, u = y[2 + k:2 + 2 * k], y[1:1 + k]
    r = np.exp(y[1 + k])
    ux = chart.evaluate(x, check=False).U_val
    g = inv_metric_quad(x, u)
    target = 2.0 * (r * H0 + ux) - g if kind == MCGEHEE else 2.0 * (H0 + ux / r) - g
    if target <= 0 or abs(y[0]) < 1e-3 * np.sqrt(abs(target)):
        return y, 0.0
    vnew = np.copysign(np.sqrt(target), y[0])
    shift = vnew - y[0]
    y = y.copy()
    y[0] = vnew
    return y, float(abs(shift))


def recenter(state, chart=None):
    """Re-express a state in a chart centred at its current shape."""
    old = state.chart
    s = old.to_ambient(state.x, check=False)
    new = chart if chart is not None else Chart.at(old.system, s)
    if old.dim == 0:
        return replace(state, chart=new)
    mdiag = old.system.mass_diag
    vel = old.jacobian(state.x) @ inv_metric_apply(state.x, state.u)
    xn = new.from_ambient(s)
    un = new.jacobian(xn).T @ (mdiag * vel)
    return BlowupState(state.kind, state.v, un, state.r, xn, new, state.tau, state.t)


# -- cartesian round trip -------------------------------------------------

def from_cartesian(system, q, qdot, kind=MCGEHEE, chart=None, t=0.0, tau=0.0):
    kind = _kind(kind)
    q = np.asarray(q, dtype=float).ravel()
    qdot = np.asarray(qdot, dtype=float).ravel()
    r, s = system.normalize(q)
    chart = chart or Chart.at(system, s)
    mdiag = system.mass_diag
    rdot = float(q @ (mdiag * qdot)) / r
    sdot = (qdot - rdot * s) / r
    x = chart.from_ambient(s)
    cov = chart.jacobian(x).T @ (mdiag * sdot)
    if kind == MCGEHEE:
        v, u = np.sqrt(r) * rdot, r ** 1.5 * cov
    else:
        v, u = rdot, r * cov
    return BlowupState(kind, float(v), u, r, x, chart, tau, t)


def to_cartesian(state):
    chart, r = state.chart, state.r
    s = chart.to_ambient(state.x, check=False)
    scale = r ** 1.5 if state.kind == MCGEHEE else r
    xdot = inv_metric_apply(state.x, state.u) / scale
    sdot = chart.jacobian(state.x) @ xdot
    rdot = state.v / np.sqrt(r) if state.kind == MCGEHEE else state.v
    return r * s, rdot * s + r * sdot


def cartesian_energy(system, q, qdot):
    qdot = np.asarray(qdot, dtype=float)
    return 0.5 * float(qdot @ (system.mass_diag * qdot)) - system.potential(q)


# -- trajectories ---------------------------------------------------------

@dataclass(eq=False)
class _Segment:
    chart: Chart
    taus: list = field(default_factory=list)
    ys: list = field(default_factory=list)
    dense: list = field(default_factory=list)


class Trajectory:
    """Dense blow-up trajectory assembled from one or more chart segments."""

    def __init__(self, kind, H0, segments, residuals, projections, recenters):
        self.kind = kind
        self.H0 = H0
        self.segments = segments
        self.max_energy_residual = float(max(residuals)) if residuals else 0.0
        self.projections = projections
        self.recenters = recenters
        taus = [tau for seg in segments for tau in seg.taus]
        self.tau0, self.tau1 = taus[0], taus[-1]
        self.direction = 1.0 if self.tau1 >= self.tau0 else -1.0

    @property
    def step_taus(self):
        return np.array([tau for seg in self.segments for tau in seg.taus])

    def _locate(self, tau):
        lo, hi = sorted((self.tau0, self.tau1))
        if tau < lo - 1e-12 or tau > hi + 1e-12:
            raise InputError(f"tau={tau} outside integrated span [{lo}, {hi}]")
        for seg in self.segments:
            a, b = sorted((seg.taus[0], seg.taus[-1]))
            if a - 1e-12 <= tau <= b + 1e-12:
                idx = np.searchsorted(np.array(seg.taus) * self.direction,
                                      tau * self.direction) - 1
                idx = int(np.clip(idx, 0, max(len(seg.dense) - 1, 0)))
                return seg, idx
        return self.segments[-1], len(self.segments[-1].dense) - 1

    def raw(self, tau):
        seg, idx = self._locate(tau)
        if not seg.dense:
            return seg, seg.ys[0]
        return seg, seg.dense[idx](tau)

    def state(self, tau):
        seg, y = self.raw(tau)
        return BlowupState.unpack(self.kind, seg.chart, y, tau)

    def states(self):
        """All step-point states in integration order."""
        out = []
        for seg in self.segments:
            for tau, y in zip(seg.taus, seg.ys):
                out.append(BlowupState.unpack(self.kind, seg.chart, y, tau))
        return out

    def ambient_shape(self, tau):
        st = self.state(tau)
        return st.chart.to_ambient(st.x, check=False)

    def time_quadrature_reverse(self, nodes=8, subdivide=8):
        """Integral of dt/dtau from sample points to the end of the trajectory.

        Every step is split into ``subdivide`` pieces integrated by
        Gauss-Legendre and summed from the end backwards, so tiny late
        increments keep their relative accuracy.
        """
        gx, gw = np.polynomial.legendre.leggauss(nodes)
        power = 1.5 if self.kind == MCGEHEE else 1.0
        pieces, taus = [], []
        for seg in self.segments:
            k = seg.chart.dim
            for i, dense in enumerate(seg.dense):
                edges = np.linspace(seg.taus[i], seg.taus[i + 1], subdivide + 1)
                for a, b in zip(edges[:-1], edges[1:]):
                    mid, half = 0.5 * (a + b), 0.5 * (b - a)
                    rho = dense(mid + half * gx)[1 + k]
                    pieces.append(half * float(np.dot(gw, np.exp(power * rho))))
                    taus.append(a)
        last = self.segments[-1].taus[-1]
        rev = np.cumsum(pieces[::-1])[::-1]
        return np.array(taus + [last]), np.concatenate([rev, [0.0]])

    def to_rows(self):
        rows = []
        for st in self.states():
            rows.append([st.tau, st.t, st.v, *st.u, st.r, *st.x,
                         energy_residual(st, self.H0)])
        return rows

    def columns(self):
        k = self.segments[0].chart.dim
        return (["tau", "t", "v"] + [f"u{i}" for i in range(k)] + ["r"]
                + [f"x{i}" for i in range(k)] + ["energy_residual"])


def integrate(state, tau_span, H0, rtol=1e-10, atol=1e-12, project_every=100,
              max_steps=200000, recenter_radius=RECENTER_RADIUS):
    """Adaptive DOP853 propagation with periodic energy projection and chart recentering."""
    a, b = map(float, tau_span)
    if a != state.tau:
        state = replace(state, tau=a)
    kind = state.kind
    direction = 1.0 if b >= a else -1.0
    segments, residuals = [], [abs(energy_residual(state, H0))]
    projections, recenters = [], 0
    steps_total = 0
    since = 0  # steps since the last projection, kept across chart restarts
    cur = state
    while True:
        chart = cur.chart
        seg = _Segment(chart, [cur.tau], [cur.pack()], [])
        segments.append(seg)
        fun = lambda tau, y, _c=chart: _rhs(kind, _c, y)
        solver = DOP853(fun, cur.tau, cur.pack(), b, rtol=rtol, atol=atol)
        restart = None
        while solver.status == "running":
            msg = solver.step()
            if solver.status == "failed":
                raise DivergenceError(f"integrator failed at tau={solver.t}: {msg}")
            steps_total += 1
            since += 1
            y = solver.y
            k = chart.dim
            if abs(y[0]) > DIVERGENCE_BOUND or (k and np.abs(y[1:1 + k]).max() > DIVERGENCE_BOUND):
                raise DivergenceError(f"|u| or |v| exceeded {DIVERGENCE_BOUND:g} at tau={solver.t}")
            if not np.all(np.isfinite(y)):
                raise DivergenceError(f"non-finite state at tau={solver.t}")
            seg.taus.append(solver.t)
            seg.ys.append(y.copy())
            seg.dense.append(solver.dense_output())
            st = BlowupState.unpack(kind, chart, y, solver.t)
            residuals.append(abs(energy_residual(st, H0)))
            if steps_total > max_steps:
                raise DivergenceError(f"step budget of {max_steps} exhausted at tau={solver.t}")
            if solver.status != "running":
                break
            if k and np.linalg.norm(y[2 + k:2 + 2 * k]) > recenter_radius:
                restart = recenter(st)
                recenters += 1
                break
            if project_every and since >= project_every:
                y2, shift = _project_v(kind, chart, y, H0)
                since = 0
                if shift > 0:
                    projections.append((solver.t, shift))
                    restart = BlowupState.unpack(kind, chart, y2, solver.t)
                    break
        if restart is None:
            break
        cur = restart
        if (b - cur.tau) * direction <= 0:
            break
    return Trajectory(kind, H0, segments, residuals, projections, recenters)


# -- asymptotics ------------------------------------------------------------

def _fit_tail(tau, vals):
    tau = np.asarray(tau, float)
    vals = np.asarray(vals, float)
    scale = max(np.abs(vals).max(), 1e-300)
    if vals.max() - vals.min() <= 1e-12 * scale:
        return {"limit": float(vals[-1]), "rate": float("nan"), "amplitude": 0.0,
                "converged": True}
    z = np.abs(tau - tau[-1])
    dev = np.abs(vals - vals[-1])
    mid = len(vals) // 2
    rate0 = np.log(max(dev[0], 1e-300) / max(dev[mid], 1e-300)) / max(z[0] - z[mid], 1e-12)
    rate0 = float(np.clip(rate0, 1e-3, 1e3))
    amp0 = (vals[0] - vals[-1]) * np.exp(-rate0 * z[0])
    model = lambda zz, c0, c1, rho: c0 + c1 * np.exp(rho * zz)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            popt, _ = curve_fit(model, z, vals, p0=[vals[-1], amp0, rate0], maxfev=20000)
        limit, amp, rate = map(float, popt)
        resid = np.abs(model(z, *popt) - vals).max()
        dev_max = np.abs(vals - limit).max()
        ok = (rate > 0 and resid <= 1e-3 * dev_max + 1e-12 * scale) or dev_max <= 1e-9 * scale
    except (RuntimeError, ValueError):
        limit, amp, rate, ok = float(vals[-1]), float("nan"), float("nan"), False
    return {"limit": limit, "rate": rate, "amplitude": amp, "converged": bool(ok)}


def asymptotic_diagnostics(traj, tail_fraction=0.2, samples=400):
    """Fit c0 + c1 exp(-rho tau) to |v|, |u| and the scaled shape speed on the tail.

    The shape speed r^{3/2}|s'|_M (mcgehee) or r|s'|_M (hyperbolic) equals
    sqrt(<M_hat^{-1}u,u>) in either kind.
    """
    span = traj.tau1 - traj.tau0
    start = traj.tau1 - tail_fraction * span
    taus = np.linspace(start, traj.tau1, samples)
    vabs, uabs, speed = [], [], []
    for tau in taus:
        st = traj.state(tau)
        vabs.append(abs(st.v))
        uabs.append(float(np.linalg.norm(st.u)))
        speed.append(float(np.sqrt(max(inv_metric_quad(st.x, st.u), 0.0))))
    return {
        "kind": traj.kind,
        "tail": [float(start), float(traj.tau1)],
        "abs_v": _fit_tail(taus, vabs),
        "abs_u": _fit_tail(taus, uabs),
        "shape_speed": _fit_tail(taus, speed),
        "max_energy_residual": traj.max_energy_residual,
    }


def collision_time_profile(traj):
    """(tau, t, beta, r) at step points of a trajectory running into collision.

    beta = T - t with T the collision time; the part of the time integral
    beyond the last step is closed with the exponential tail r^{3/2}/(1.5|v|).
    """
    if traj.kind != MCGEHEE:
        raise InputError("collision profile needs the mcgehee kind")
    end = traj.state(traj.tau1)
    if end.v >= 0:
        raise InputError("trajectory does not end in a collision (v >= 0)")
    tail = end.r ** 1.5 / (1.5 * abs(end.v))
    taus, rev = traj.time_quadrature_reverse()
    beta = rev + tail
    r = np.array([traj.state(tau).r for tau in taus])
    t = np.array([traj.state(tau).t for tau in taus])
    return taus, t, beta, r


def sundman_ratios(traj, decades=1.0):
    """r * beta^{-2/3} over the last ``decades`` decades of beta."""
    taus, t, beta, r = collision_time_profile(traj)
    mask = beta <= beta[-1] * 10 ** decades
    return beta[mask], r[mask] * beta[mask] ** (-2.0 / 3.0)
