"""Homothetic solutions: closed-form profiles, block reduction of the
linearized flow, Morse index by crossing counting and the growth rate of
the index at a spiral collision."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .central import BOUNDARY, KERNEL_RTOL, SPIRAL, classify_lambdas
from .core import Chart
from .errors import InputError, InvariantViolation, NonSpiralError, SpiralError
from .linear import CoefficientPath, bhat, phi_R, splitting, sum_paths
from .maslov import (LagrangianFrame, dirichlet, hormander_index, intersection_dim, morse_from_maslov, mu_nu,
                     neumann, unstable_subspace)

COLLISION = "total-collision"
PARABOLIC = "parabolic-infinity"
HYPERBOLIC_END = "hyperbolic-infinity"

TRUNCATION_SCALE = 40.0
PERTURBATIONS = (1e-3, 1e-4, 1e-5)


@dataclass(frozen=True, eq=False)
class HomotheticOrbit:
    """r(tau) s0 with s0 central, parametrized by blow-up time tau (dt = r^{3/2} dtau).

    H0 < 0: apex at tau = 0, collision at both ends.
    H0 = 0: ejection from collision, parabolic escape; r(0) = ``scale``.
    H0 > 0: ejection from collision, hyperbolic escape reached at tau = 0.
    """

    b: float
    H0: float
    lambdas: np.ndarray
    cc: object = None
    scale: float = 1.0

    @property
    def rate(self):
        return float(np.sqrt(2.0 * self.b))

    @property
    def spiral_class(self):
        if self.cc is not None:
            return self.cc.spiral_class
        return classify_lambdas(self.lambdas, self.b)

    @property
    def nstar(self):
        return 1 + len(self.lambdas)

    @property
    def ends(self):
        if self.H0 < 0:
            return (COLLISION, COLLISION)
        return (COLLISION, PARABOLIC if self.H0 == 0 else HYPERBOLIC_END)

    @property
    def domain(self):
        return (-np.inf, np.inf) if self.H0 <= 0 else (-np.inf, 0.0)

    @property
    def tau_max(self):
        return TRUNCATION_SCALE / self.rate

    @property
    def apex_radius(self):
        return self.b / abs(self.H0) if self.H0 != 0 else self.scale

    def v(self, tau):
        c = self.rate
        if self.H0 < 0:
            return -c * np.tanh(0.5 * c * tau)
        if self.H0 == 0:
            return c + 0.0 * tau
        self._inside(tau)
        return c / np.tanh(-0.5 * c * tau)

    def r(self, tau):
        c = self.rate
        if self.H0 < 0:
            return self.apex_radius / np.cosh(0.5 * c * tau) ** 2
        if self.H0 == 0:
            return self.scale * np.exp(c * tau)
        self._inside(tau)
        return self.apex_radius / np.sinh(-0.5 * c * tau) ** 2

    def dv(self, tau):
        return 0.5 * self.v(tau) ** 2 - self.b

    def energy_residual(self, tau):
        return 0.5 * self.v(tau) ** 2 - self.b - self.r(tau) * self.H0

    def _inside(self, tau):
        if np.any(np.asarray(tau) >= 0):
            raise InputError("positive-energy orbit reaches infinity at tau = 0")

    def t(self, tau):
        """Newtonian time: from the apex for H0 < 0, from the collision otherwise."""
        c = self.rate
        if self.H0 < 0:
            y = 0.5 * c * tau
            return self.apex_radius ** 1.5 / c * (np.tanh(y) / np.cosh(y) + 2.0 * np.arctan(np.tanh(0.5 * y)))
        if self.H0 == 0:
            return self.scale ** 1.5 * np.exp(1.5 * c * tau) / (1.5 * c)
        self._inside(tau)
        val, _ = quad(lambda s: self.r(s) ** 1.5, -np.inf, tau, limit=200)
        return val

    @property
    def collision_times(self):
        if self.H0 < 0:
            half = self.apex_radius ** 1.5 / self.rate * np.pi / 2.0
            return (-half, half)
        return (0.0, None)

    def log_beta(self, tau):
        """ln(T+ - t) at the forward collision of an H0 < 0 orbit, stable for large tau."""
        if self.H0 >= 0:
            raise InputError("forward collision exists only for negative energy")
        c = self.rate
        y = 0.5 * c * np.asarray(tau, dtype=float)
        pref = np.log(2.0 * self.apex_radius ** 1.5 / c)
        return pref + _log_sech3_tail(y)

    def tau_at_log_beta(self, lb):
        lo, hi = 0.0, 1.0
        while self.log_beta(hi) > lb:
            hi *= 2.0
        if self.log_beta(lo) < lb:
            raise InputError("beta exceeds the apex-to-collision time")
        return brentq(lambda s: self.log_beta(s) - lb, lo, hi, xtol=1e-14, rtol=1e-15)

    def to_dict(self):
        return {"b": self.b, "H0": self.H0, "lambdas": [float(x) for x in self.lambdas],
                "ends": list(self.ends), "class": self.spiral_class,
                "apex_radius": self.apex_radius, "tau_max": self.tau_max}


def _log_sech3_tail(y):
    """log of int_y^inf sech^3, by a series for y > 2 and directly otherwise."""
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    small = y <= 2.0
    if np.any(small):
        ys = y[small]
        out[small] = np.log(0.5 * (np.pi / 2.0 - 2.0 * np.arctan(np.tanh(0.5 * ys))
                                   - np.tanh(ys) / np.cosh(ys)))
    if np.any(~small):
        yl = y[~small]
        corr = np.zeros_like(yl)
        for n in range(1, 30):
            corr += (-1) ** n * (n + 1) * (n + 2) / 2.0 * 3.0 / (3 + 2 * n) * np.exp(-2 * n * yl)
        out[~small] = np.log(8.0 / 3.0) - 3.0 * yl + np.log1p(corr)
    return out if out.ndim else float(out)


def build_orbit(cc, H0, scale=1.0):
    """Eigenvalues inside the kernel tolerance are set to exactly 0 (rotation kernel)."""
    lam = np.asarray(cc.lambdas, dtype=float).copy()
    lam[np.abs(lam) <= KERNEL_RTOL * cc.U0] = 0.0
    return HomotheticOrbit(float(cc.U0), float(H0), lam, cc, scale)


def negative_count(orbit):
    return int(np.sum(orbit.lambdas < 0))


def synthetic_orbit(b, lambdas, H0=-1.0, scale=1.0):
    """Homothetic-type block family with prescribed U and spectrum, no configuration."""
    return HomotheticOrbit(float(b), float(H0), np.atleast_1d(np.asarray(lambdas, dtype=float)),
                           None, scale)


# -- block reduction ------------------------------------------------------------

def radial_block(b, v):
    return np.array([[1.0, -0.75 * v], [-0.75 * v, -2.0 * b]])


def eigen_block(lam, v):
    return np.array([[1.0, 0.25 * v], [0.25 * v, -lam]])


def _limits(orbit, fn):
    c = orbit.rate
    if orbit.H0 < 0:
        return (fn(c), fn(-c))
    if orbit.H0 == 0:
        return (fn(c), fn(c))
    return (fn(c), None)


def radial_path(orbit):
    b = orbit.b
    return CoefficientPath(2, lambda tau: radial_block(b, orbit.v(tau)),
                           _limits(orbit, lambda v: radial_block(b, v)), "radial")


def eigen_path(orbit, lam):
    lam = float(lam)
    return CoefficientPath(2, lambda tau: eigen_block(lam, orbit.v(tau)),
                           _limits(orbit, lambda v: eigen_block(lam, v)), "eigen",
                           {"lambda": lam})


def block_paths(orbit, shift=0.0):
    """(radial block path, [eigen block path per lambda]); ``shift`` adds to every lambda."""
    return radial_path(orbit), [eigen_path(orbit, lam + shift) for lam in orbit.lambdas]


def assembled_path(orbit, shift=0.0):
    rad, fam = block_paths(orbit, shift)
    return sum_paths(rad, *fam, kind="homothetic")


def fiber_path(orbit):
    """Frame-changed linearization on the homothetic fiber from the general formula.

    The chart is centred at s0 and its tangent frame diagonalizes the
    restricted Hessian, so the result should coincide with ``assembled_path``.
    """
    cc = orbit.cc
    if cc is None:
        raise InputError("fiber reassembly needs a central configuration")
    chart = Chart.at(cc.system, cc.s0.s)
    w, vec = np.linalg.eigh(chart.evaluate(np.zeros(chart.dim)).U_hess)
    chart = Chart(chart.system, chart.base, vec.T @ chart.frame, chart.validity_radius)
    zero = np.zeros(chart.dim)
    kind = "mcgehee"
    return CoefficientPath(2 + 2 * chart.dim,
                           lambda tau: bhat(kind, chart, orbit.v(tau), zero, orbit.r(tau), zero),
                           (None, None), "fiber"), w


def reassembly_error(orbit, taus):
    path, _ = fiber_path(orbit)
    ref = assembled_path(orbit)
    return max(float(np.abs(path(t) - ref(t)).max()) for t in taus)


def shear_frame(coef_fn, dcoef_fn):
    """R = [[1, c], [0, 1]] with c = c(tau); symplectic for any c."""
    R = lambda tau: np.array([[1.0, coef_fn(tau)], [0.0, 1.0]])
    Rdot = lambda tau: np.array([[0.0, dcoef_fn(tau)], [0.0, 0.0]])
    return R, Rdot


def _check_point(orbit):
    return -1.0 / orbit.rate if orbit.H0 > 0 else 0.0


def radial_sheared(orbit):
    R, Rdot = shear_frame(lambda t: -0.75 * orbit.v(t), lambda t: -0.75 * orbit.dv(t))
    return phi_R(radial_path(orbit), R, Rdot, check_points=[_check_point(orbit)])


def eigen_sheared(orbit, lam):
    R, Rdot = shear_frame(lambda t: 0.25 * orbit.v(t), lambda t: 0.25 * orbit.dv(t))
    return phi_R(eigen_path(orbit, lam), R, Rdot, check_points=[_check_point(orbit)])


def radial_sheared_entry(orbit, tau, coefficient=3.0 / 16.0):
    """Position-position entry of the sheared radial block; 3/16 is the derived value."""
    return -coefficient * orbit.v(tau) ** 2 - 2.75 * orbit.b


def eigen_sheared_entry(orbit, lam, tau):
    return -0.375 * orbit.r(tau) * orbit.H0 - orbit.b / 8.0 - lam


def diagonal_radial_path(orbit, coefficient=3.0 / 16.0):
    """diag(1, sheared entry): the radial block in the sheared frame, with a
    selectable coefficient in front of v^2."""
    f = lambda tau: np.diag([1.0, radial_sheared_entry(orbit, tau, coefficient)])
    return CoefficientPath(2, f, _limits(orbit, lambda v: np.diag(
        [1.0, -coefficient * v * v - 2.75 * orbit.b])), "radial-sheared")


# -- indices ------------------------------------------------------------------

@dataclass(frozen=True)
class EigenBlock:
    lam: float
    b: float
    mu: int
    nu: int
    evidence: dict = field(default_factory=dict)

    def to_dict(self):
        return {"lambda": self.lam, "b": self.b, "mu": self.mu, "nu": self.nu}


def _span(orbit):
    tm = orbit.tau_max
    return -tm, tm


def _endpoint_schedule(orbit):
    """tau0 values approaching the forward end of a non-negative energy orbit."""
    if orbit.H0 == 0:
        return [5.0 / orbit.rate, 10.0 / orbit.rate, 20.0 / orbit.rate]
    return [-1.0 / orbit.rate, -0.1 / orbit.rate, -0.01 / orbit.rate]


def _mu_tau0(path, orbit, tau0):
    """mu(B; tau0) together with transversality of V^u(tau0) and V_D."""
    rep = mu_nu(path, tau0=tau0, tau_minus=-orbit.tau_max, full_line=False)
    return rep


def mu_B1(orbit, coefficient=None):
    """Crossing-counted index of the radial block (expected 0).

    With ``coefficient`` the block is replaced by its diagonal sheared form
    with that coefficient in front of v^2.
    """
    path = radial_path(orbit) if coefficient is None else diagonal_radial_path(orbit, coefficient)
    if orbit.H0 < 0:
        tm = orbit.tau_max
        rep = mu_nu(path, tau0=0.0, tau_minus=-tm, tau_plus=tm)
        values = [rep.extra["mu_line"], rep.extra["mu_tau0"]]
    else:
        values = [_mu_tau0(path, orbit, t0).maslov for t0 in _endpoint_schedule(orbit)]
    if any(v != 0 for v in values):
        raise InvariantViolation(f"radial block index {values}, expected 0")
    return 0


def mu_lambda(orbit, lam, against=None):
    """EigenBlock for one eigenvalue on a negative-energy orbit."""
    if orbit.H0 >= 0:
        raise InputError("eigen-block dichotomy is stated for negative energy")
    lam = float(lam)
    if lam <= -orbit.b / 8.0:
        raise SpiralError(f"lambda={lam} <= -b/8: spiral block, use the growth-rate pipeline")
    tm = orbit.tau_max
    rep = mu_nu(eigen_path(orbit, lam), tau0=0.0, against=against, tau_minus=-tm, tau_plus=tm)
    ev = dict(rep.evidence)
    ev["crossings"] = [c.to_dict() for c in rep.crossings]
    return EigenBlock(lam, orbit.b, int(rep.extra["mu_line"]), int(rep.nu), ev)


def hormander_value(orbit, lam):
    """s(V_D, V_N; V+(-inf), V+(+inf)) for one eigen block."""
    path = eigen_path(orbit, lam)
    lo, hi = splitting(path.limits[0]), splitting(path.limits[1])
    return hormander_index(dirichlet(1), neumann(1), LagrangianFrame(lo.V_plus),
                           LagrangianFrame(hi.V_plus))


@dataclass
class MorseCertificate:
    morse: int
    per_block: list
    radial: int
    full_line: object
    method: str
    evidence: dict = field(default_factory=dict)

    def to_dict(self):
        return {"morse": self.morse, "per_block": self.per_block, "radial_mu": self.radial,
                "full_line_mu": self.full_line, "method": self.method, "evidence": self.evidence}


def homothetic_morse(orbit, workers=1):
    """Morse index over the whole homothetic orbit, by crossing counting.

    Eigen blocks are independent; ``workers`` > 1 evaluates them in a thread pool.
    """
    cls = orbit.spiral_class
    if cls == SPIRAL:
        raise SpiralError("spiral central configuration: the index is infinite, use growth_rate")
    radial = mu_B1(orbit)
    if orbit.H0 >= 0:
        return _morse_nonnegative(orbit, radial)
    # boundary eigenvalues -b/8 are not hyperbolic: evaluate those blocks at lambda + eps
    lam_eff = [lam + (PERTURBATIONS[-1] if cls == BOUNDARY and lam <= -orbit.b / 8.0 + 1e-12 else 0.0)
               for lam in orbit.lambdas]
    if workers > 1 and len(lam_eff) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(lambda lam: mu_lambda(orbit, lam), lam_eff))
    else:
        blocks = [mu_lambda(orbit, lam) for lam in lam_eff]
    per_block = [blk.to_dict() for blk in blocks]
    total = radial + sum(blk.mu for blk in blocks)
    tm = orbit.tau_max
    evidence = {"per_block_sum": total}
    method = "full-line"
    rep = None
    if cls != BOUNDARY:
        rep = mu_nu(assembled_path(orbit), tau0=0.0, tau_minus=-tm, tau_plus=tm)
        evidence["full_line_nu"] = rep.nu
        morse = int(rep.extra["mu_line"])
    if rep is None or rep.nu > 0:
        # degenerate: stabilize with lambda -> lambda + eps
        vals = []
        for eps in PERTURBATIONS:
            r = mu_nu(assembled_path(orbit, shift=eps), tau0=0.0, tau_minus=-tm, tau_plus=tm)
            vals.append(int(r.extra["mu_line"]))
        evidence["perturbed"] = dict(zip([str(e) for e in PERTURBATIONS], vals))
        if len(set(vals)) != 1:
            raise InvariantViolation(f"perturbed indices not stable: {vals}")
        morse = vals[0]
        method = "perturbed-full-line"
    if morse != total:
        raise InvariantViolation(f"block sum {total} differs from full-line index {morse}")
    if orbit.cc is not None:
        evidence["kernel_dim"] = orbit.cc.kernel_dim
    full_line = int(rep.extra["mu_line"]) if rep is not None else None
    return MorseCertificate(morse, per_block, radial, full_line, method, evidence)


def _morse_nonnegative(orbit, radial):
    full = assembled_path(orbit)
    k = full.k
    values, transverse = [], []
    for t0 in _endpoint_schedule(orbit):
        rep = _mu_tau0(full, orbit, t0)
        values.append(int(rep.maslov))
        sub = unstable_subspace(full, -orbit.tau_max, t0)
        transverse.append(intersection_dim(sub.path.frame(t0), dirichlet(k), 1e-6) == 0)
    if len(set(values)) != 1:
        raise InvariantViolation(f"mu(B; tau0) not settled along {values}")
    ev = {"tau0_schedule": _endpoint_schedule(orbit), "mu_tau0": values,
          "transverse_to_dirichlet": transverse}
    if not all(transverse):
        raise InvariantViolation("V^u(tau0) meets V_D along the schedule")
    # per block: mu(B_lambda; tau0) at the last tau0 of the schedule; nu is
    # not defined without a hyperbolic forward end
    last = _endpoint_schedule(orbit)[-1]
    per_block = [{"lambda": float(l), "mu": int(_mu_tau0(eigen_path(orbit, l), orbit, last).maslov),
                  "nu": None} for l in orbit.lambdas]
    return MorseCertificate(values[-1], per_block, radial, None, "mu-tau0-limit", ev)


# -- growth rate at a spiral collision ---------------------------------------------

def formula_coefficient(U, lambdas):
    lam = np.asarray(lambdas, dtype=float)
    neg = lam[lam < -U / 8.0]
    return float(np.sum(np.sqrt(-0.125 - neg / U)) / (3.0 * np.sqrt(2.0) * np.pi))


def comparison_exponents(U, lambdas, eps, v_star):
    """The two comparison values v*^2/16 + (1 -+ eps)(lambda +- eps), as (smaller, larger)."""
    lam = np.asarray(lambdas, dtype=float)
    fp = v_star ** 2 / 16.0 + (1.0 - eps) * (lam + eps)
    fm = v_star ** 2 / 16.0 + (1.0 + eps) * (lam - eps)
    return np.minimum(fp, fm), np.maximum(fp, fm)


def admissible_eps(U, lambdas):
    """Upper bound for eps keeping the comparison blocks on the right side of 0."""
    lam = np.sort(np.asarray(lambdas, dtype=float))
    neg = lam[lam < -U / 8.0]
    bounds = []
    if len(neg):
        l = neg[-1]
        bounds.append(-l / 2.0 + 0.5 - 0.5 * np.sqrt((l + 1.0) ** 2 + U / 2.0))
    pos = lam[lam > -U / 8.0]
    if len(pos):
        l = pos[0]
        bounds.append(l / 2.0 - 0.5 + 0.5 * np.sqrt((l + 1.0) ** 2 + U / 2.0))
    return min(bounds) if bounds else np.inf


@dataclass
class GrowthSample:
    log_beta: float
    tau2: float
    morse: int
    ratio: float
    morse_from_eps: int
    lower: int
    upper: int

    @property
    def sandwich(self):
        """None before the comparison regime starts."""
        if self.lower is None:
            return None
        return self.lower <= self.morse_from_eps <= self.upper


@dataclass
class GrowthReport:
    target: float
    limit_from_tau: float
    samples: list
    eps: float
    tau_eps: float
    ratio_bounds: tuple

    @property
    def sandwich_holds(self):
        checked = [s.sandwich for s in self.samples if s.sandwich is not None]
        return bool(checked) and all(checked)

    def relative_error(self, value=None):
        last = self.samples[-1].ratio
        ref = self.target if value is None else value
        return abs(last - ref) / ref

    def rows(self):
        for s in self.samples:
            yield {"t2": None, "beta": float(np.exp(s.log_beta)), "log_beta": s.log_beta,
                   "tau2": s.tau2, "morse": s.morse, "ratio": s.ratio, "target": self.target,
                   "morse_eps": s.morse_from_eps, "lower": s.lower, "upper": s.upper}


def geometric_log_betas(start, stop, count):
    """Natural logs of a geometric schedule of beta values from ``start`` down to ``stop``."""
    return np.linspace(np.log(start), np.log(stop), int(count))


def growth_rate(orbit, log_betas, eps=1e-3, tau1=0.0):
    """m-(t1, t2)/|ln beta(t2)| along the schedule, with the comparison sandwich.

    The orbit must have negative energy and its forward collision must be
    spiral.  t1 is the apex unless ``tau1`` says otherwise.
    """
    U = orbit.b
    lam = np.asarray(orbit.lambdas, dtype=float)
    if orbit.H0 >= 0:
        raise InputError("growth rate is measured at the forward collision (H0 < 0)")
    if not np.any(lam < -U / 8.0):
        raise NonSpiralError("no eigenvalue below -U/8: the index stays finite")
    if eps >= admissible_eps(U, lam):
        raise InputError(f"eps={eps} exceeds the admissible bound {admissible_eps(U, lam)}")
    v_star = -orbit.rate
    c = orbit.rate
    # first tau where the eigen blocks are within eps of their limit
    tau_eps = max(tau1, 2.0 / c * np.arctanh(max(1.0 - 4.0 * eps / c, 0.0)))
    taus2 = np.array([orbit.tau_at_log_beta(lb) for lb in log_betas])
    if np.any(taus2 <= tau1):
        raise InputError("schedule contains beta values before t1")
    order = np.argsort(taus2)
    path = assembled_path(orbit)
    end = float(taus2.max()) + 1e-3
    _, res1 = morse_from_maslov(path, tau1, end)
    res_eps = None
    if end > tau_eps:
        _, res_eps = morse_from_maslov(path, tau_eps, end)
    fmin, fmax = comparison_exponents(U, lam, eps, v_star)
    k = path.k
    samples = []
    for idx in order:
        t2, lb = float(taus2[idx]), float(log_betas[idx])
        m = res1.count_until(t2) - k
        me = lower = upper = None
        if t2 > tau_eps:
            me = res_eps.count_until(t2) - k
            span = t2 - tau_eps
            lower = int(sum(np.floor(np.sqrt(-f) * span / np.pi) for f in fmax if f < 0))
            upper = int(sum(np.floor(np.sqrt(-f) * span / np.pi) for f in fmin if f <= 0))
        samples.append(GrowthSample(lb, t2, int(m), m / abs(lb), me, lower, upper))
    lo = float(np.sum(np.sqrt(-fmax[fmax < 0] / U)) / (3.0 * np.sqrt(2.0) * np.pi))
    hi = float(np.sum(np.sqrt(-fmin[fmin <= 0] / U)) / (3.0 * np.sqrt(2.0) * np.pi))
    neg = lam[lam < -U / 8.0]
    # beta ~ exp(-3 c tau / 2) at the collision, so m-/|ln beta| -> sum sqrt(-f)/pi / (1.5 c)
    exact = float(np.sum(np.sqrt(-(U / 8.0 + neg))) / np.pi / (1.5 * c))
    return GrowthReport(formula_coefficient(U, lam), exact, samples, eps, tau_eps, (lo, hi))
