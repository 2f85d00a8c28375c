import numpy as np
import pytest
import scipy.linalg

from maslov_nbody import core, homothetic, linear, mcgehee
from maslov_nbody.errors import ContractViolation, InputError, InvalidStateError


def random_sym(rng, n, scale=1.0):
    a = rng.normal(size=(n, n)) * scale
    return a + a.T


def random_spd(rng, n):
    a = rng.normal(size=(n, n))
    return a @ a.T + n * np.eye(n)


def smooth_path(rng, k, modes=2):
    mats = [random_sym(rng, 2 * k, 0.5) for _ in range(modes + 1)]
    freqs = rng.uniform(0.3, 2.0, size=modes)
    f = lambda tau: mats[0] + sum(m * np.cos(w * tau) for m, w in zip(mats[1:], freqs))
    return linear.CoefficientPath(2 * k, f)


@pytest.fixture(scope="module")
def chart_state():
    system = core.MassSystem([1.0, 2.0, 0.5], 2)
    rng = np.random.default_rng(5)
    q = system.center(rng.normal(size=6))
    qdot = system.center(rng.normal(size=6))
    return system, q, qdot


def test_symplectic_sum_round_trip(rng):
    a, b = random_sym(rng, 2), random_sym(rng, 4)
    s = linear.symplectic_sum(a, b)
    back = linear.symplectic_split(s, [1, 2])
    np.testing.assert_allclose(back[0], a)
    np.testing.assert_allclose(back[1], b)
    ga = scipy.linalg.expm(linear.jmat(1) @ a)
    gb = scipy.linalg.expm(linear.jmat(2) @ b)
    assert linear.is_symplectic(linear.symplectic_sum(ga, gb))


def test_hessian_of_chart_hamiltonian(chart_state):
    system, q, qdot = chart_state
    st = mcgehee.from_cartesian(system, q, qdot)
    chart, k = st.chart, st.chart.dim
    p1, p2 = linear.state_momenta(st)
    z0 = np.concatenate([[p1], p2, [st.r], st.x])
    split = lambda z: (z[0], z[1:1 + k], z[1 + k], z[2 + k:])
    h = linear.build_D2H(chart, *split(z0))
    np.testing.assert_allclose(h, h.T)
    fd = np.zeros_like(h)
    step = 1e-4
    for i in range(z0.size):
        for j in range(z0.size):
            ei, ej = np.eye(z0.size)[i] * step, np.eye(z0.size)[j] * step
            H = lambda z: linear.hamiltonian(chart, *split(z))
            fd[i, j] = (H(z0 + ei + ej) - H(z0 + ei - ej) - H(z0 - ei + ej) + H(z0 - ei - ej)) / (4 * step ** 2)
    np.testing.assert_allclose(h, fd, rtol=1e-5, atol=1e-5)
    with pytest.raises(InvalidStateError):
        linear.build_D2H(chart, p1, p2, -1.0, st.x)


def test_hamiltonian_matches_energy(chart_state):
    system, q, qdot = chart_state
    st = mcgehee.from_cartesian(system, q, qdot)
    p1, p2 = linear.state_momenta(st)
    H = linear.hamiltonian(st.chart, p1, p2, st.r, st.x)
    assert H == pytest.approx(mcgehee.cartesian_energy(system, q, qdot), rel=1e-12)


def test_phi_R_identity(rng):
    path = smooth_path(rng, 2)
    same = linear.phi_R(path, lambda t: np.eye(4), lambda t: np.zeros((4, 4)))
    for tau in (-1.0, 0.3, 2.0):
        np.testing.assert_allclose(same(tau), path(tau), atol=1e-14)


def test_phi_R_rejects_non_symplectic(rng):
    path = smooth_path(rng, 1)
    with pytest.raises(ContractViolation):
        linear.phi_R(path, lambda t: 2.0 * np.eye(2), lambda t: np.zeros((2, 2)))


def test_phi_R_transports_solutions(rng):
    k = 2
    path = smooth_path(rng, k)
    S = random_sym(rng, 2 * k, 0.3)
    j = linear.jmat(k)
    R = lambda t: scipy.linalg.expm(t * j @ S)
    Rdot = lambda t: j @ S @ R(t)
    changed = linear.phi_R(path, R, Rdot)
    g = linear.integrate_fundamental(path, (0.0, 2.0))
    h = linear.integrate_fundamental(changed, (0.0, 2.0))
    for tau in (0.5, 1.3, 2.0):
        np.testing.assert_allclose(h(tau), R(tau) @ g(tau) @ np.linalg.inv(R(0.0)), atol=1e-8)


@pytest.mark.parametrize("kind", mcgehee.KINDS)
def test_radial_frame_gives_closed_form(chart_state, kind):
    system, q, qdot = chart_state
    st = mcgehee.from_cartesian(system, q, qdot, kind=kind)
    k = st.chart.dim
    R, Rdot = linear.radial_frame(kind, st.r, st.v, k)
    assert linear.is_symplectic(R)
    rinv = np.linalg.inv(R)
    changed = -linear.jmat(k + 1) @ Rdot @ rinv + rinv.T @ linear.b_tau(st) @ rinv
    # reorder (p1, p2, r, x) -> (p1, p2 | r, x) is already the momenta-first layout
    np.testing.assert_allclose(changed, linear.bhat_state(st), rtol=1e-10, atol=1e-10)


def test_fundamental_solutions_are_symplectic(rng):
    harmonic = linear.integrate_fundamental(linear.CoefficientPath.constant(np.eye(2)), (0.0, 7.0))
    for tau in (1.0, 3.5, 7.0):
        np.testing.assert_allclose(harmonic(tau), scipy.linalg.expm(tau * linear.jmat(1)), atol=1e-10)
    saddle = linear.integrate_fundamental(linear.CoefficientPath.constant(np.diag([1.0, -1.0])), (0.0, 5.0))
    np.testing.assert_allclose(saddle(5.0), scipy.linalg.expm(5.0 * linear.jmat(1) @ np.diag([1.0, -1.0])),
                               rtol=1e-9)
    for _ in range(20):
        k = int(rng.integers(1, 4))
        sol = linear.integrate_fundamental(smooth_path(rng, k), (0.0, 3.0))
        for tau in np.linspace(0.0, 3.0, 7):
            g = sol(tau)
            # round-off in g^T J g scales like |g|^2
            assert linear.symplectic_defect(g) <= 1e-9 * max(1.0, np.abs(g).max() ** 2)


def test_fundamental_solution_composition(rng):
    path = smooth_path(rng, 2)
    full = linear.integrate_fundamental(path, (0.0, 3.0))
    first = linear.integrate_fundamental(path, (0.0, 1.2))
    second = linear.integrate_fundamental(path, (1.2, 3.0))
    np.testing.assert_allclose(full(3.0), second(3.0) @ first(1.2), atol=1e-8)
    back = linear.integrate_fundamental(path, (3.0, 0.0))
    np.testing.assert_allclose(back(0.0) @ full(3.0), np.eye(4), atol=1e-8)
    with pytest.raises(InputError):
        full(3.5)


def test_collision_limit_eigenvalues(lagrange_cc, euler_cc):
    for cc in (lagrange_cc, euler_cc):
        sp = linear.bhat_limits_collision(cc)
        U = cc.U0
        radial = 5.0 / (2.0 * np.sqrt(2.0)) * np.sqrt(U)
        expected = [radial, -radial]
        for lam in cc.lambdas:
            root = np.sqrt(complex(U / 8.0 + lam))
            expected += [root, -root]
        got = np.sort_complex(sp.eigenvalues)
        np.testing.assert_allclose(got, np.sort_complex(np.array(expected)), atol=1e-10)
        assert sp.hyperbolic == (cc.spiral_class == "strict-non-spiral")


def test_boundary_block_is_not_hyperbolic():
    orbit = homothetic.synthetic_orbit(8.0, [-1.0])
    sp = linear.splitting(homothetic.eigen_path(orbit, -1.0).limits[1])
    assert not sp.hyperbolic
    assert sp.gap < 1e-7


def test_hyperbolic_ends_are_hyperbolic(rng):
    for _ in range(20):
        k = int(rng.integers(1, 5))
        v_star = rng.uniform(0.01, 5.0)
        sp = linear.bhat_limits_hyperbolic(v_star, random_spd(rng, k))
        assert sp.hyperbolic
        np.testing.assert_allclose(np.sort(np.abs(sp.eigenvalues.real)), 0.5 * v_star, rtol=1e-9)


def test_metric_normalizer_is_a_symplectic_similarity(rng):
    k, U = 3, 2.0
    mhat, uxx = random_spd(rng, k), random_sym(rng, k)
    _, b2 = linear.collision_limit_blocks(-np.sqrt(2 * U), U, uxx, mhat)
    R = linear.metric_normalizer(mhat)
    assert linear.is_symplectic(R)
    rinv = np.linalg.inv(R)
    normal = rinv.T @ b2 @ rinv
    np.testing.assert_allclose(normal[:k, :k], np.eye(k), atol=1e-12)
    j = linear.jmat(k)
    np.testing.assert_allclose(np.sort_complex(np.linalg.eigvals(j @ normal)),
                               np.sort_complex(np.linalg.eigvals(j @ b2)), atol=1e-9)


def test_homothetic_fiber_is_block_diagonal(lagrange_orbit):
    taus = np.linspace(-3.0, 3.0, 7)
    assert homothetic.reassembly_error(lagrange_orbit, taus) < 1e-12


def test_sampled_paths(rng):
    taus = np.linspace(0.0, 1.0, 5)
    mats = [random_sym(rng, 2) for _ in taus]
    path = linear.CoefficientPath.from_samples(taus, mats)
    np.testing.assert_allclose(path(taus[2]), mats[2], atol=1e-12)
    with pytest.raises(InputError):
        linear.CoefficientPath.from_samples(taus[:2], mats)
    with pytest.raises(InputError):
        linear.CoefficientPath(3, lambda t: np.eye(3))
