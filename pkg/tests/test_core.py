import numpy as np
import pytest

from maslov_nbody import core
from maslov_nbody.errors import ChartDomainError, DegenerateConfigurationError, InputError, \
    SingularConfigurationError


def random_config(system, rng):
    return system.center(rng.normal(size=system.n * system.d))


def fd_grad(f, x, h=1e-6):
    out = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def fd_jac(f, x, h=1e-6):
    return np.array([fd_grad(lambda y, i=i: f(y)[i], x, h) for i in range(np.size(f(x)))])


@pytest.mark.parametrize("masses,d", [([1.0], 2), ([1.0, -1.0], 2), ([1.0, np.nan], 1), ([1.0, 0.0], 3)])
def test_bad_mass_systems(masses, d):
    with pytest.raises(InputError):
        core.MassSystem(masses, d)


def test_dimension_must_be_positive():
    with pytest.raises(InputError):
        core.MassSystem([1.0, 2.0], 0)


def test_reduced_basis_is_mass_orthonormal_and_centered(rng):
    system = core.MassSystem([1.0, 2.0, 3.5, 0.7], 3)
    e = system.reduced_basis
    assert e.shape == (system.nstar, system.n * system.d)
    np.testing.assert_allclose(e @ system.mass_matrix @ e.T, np.eye(system.nstar), atol=1e-12)
    for row in e:
        com = row.reshape(system.n, system.d).T @ system.masses
        assert np.abs(com).max() < 1e-12
    q = random_config(system, rng)
    np.testing.assert_allclose(system.from_reduced(system.to_reduced(q)), q, atol=1e-12)


def test_configuration_rejects_offset_center_of_mass():
    system = core.MassSystem([1.0, 1.0], 1)
    with pytest.raises(InputError):
        core.Configuration(system, [1.0, 2.0])
    assert system.configuration([1.0, 2.0]).collision_free


def test_potential_derivatives_match_finite_differences(rng):
    system = core.MassSystem([1.0, 2.0, 0.5], 2)
    q = random_config(system, rng)
    np.testing.assert_allclose(system.gradient(q), fd_grad(system.potential, q), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(system.hessian(q), fd_jac(system.gradient, q), rtol=1e-5, atol=1e-7)


def test_homogeneity_and_euler_identity(rng):
    system = core.MassSystem([1.0, 2.0, 0.5, 1.2], 3)
    q = random_config(system, rng)
    u = system.potential(q)
    assert system.potential(2.5 * q) == pytest.approx(u / 2.5, rel=1e-13)
    assert q @ system.gradient(q) == pytest.approx(-u, rel=1e-12)
    # the gradient is homogeneous of degree -2, so H q = 2 grad
    np.testing.assert_allclose(system.hessian(q) @ q, -2.0 * system.gradient(q), rtol=1e-10, atol=1e-12)


def test_collision_is_rejected():
    system = core.MassSystem([1.0, 1.0, 1.0], 1)
    with pytest.raises(SingularConfigurationError):
        system.potential([0.0, 0.0, 1.0])
    with pytest.raises(DegenerateConfigurationError):
        system.normalize(np.zeros(3))


def test_normalize_gives_unit_inertia(rng):
    system = core.MassSystem([3.0, 1.0, 2.0], 2)
    r, s = system.normalize(random_config(system, rng))
    assert r > 0
    assert system.moment_of_inertia(s) == pytest.approx(1.0, rel=1e-14)


def test_chart_round_trip_and_pullbacks(rng):
    system = core.MassSystem([1.0, 2.0, 0.5], 2)
    s = system.normalize(random_config(system, rng))[1]
    chart = core.Chart.at(system, s)
    assert chart.dim == system.nstar - 1
    x = 0.2 * rng.normal(size=chart.dim)
    x *= min(1.0, 0.4 / np.linalg.norm(x))
    y = chart.to_ambient(x)
    assert system.moment_of_inertia(y) == pytest.approx(1.0, rel=1e-13)
    np.testing.assert_allclose(chart.from_ambient(y), x, atol=1e-12)
    np.testing.assert_allclose(chart.jacobian(x), fd_jac(chart.to_ambient, x), atol=1e-7)
    nc = chart.evaluate(x)
    u_hat = lambda z: chart.evaluate(z).U_val
    # U_hat(x) is U at the chart point on the ellipsoid
    assert nc.U_val == pytest.approx(system.potential(y), rel=1e-13)
    np.testing.assert_allclose(nc.U_grad, fd_grad(u_hat, x), rtol=1e-6, atol=1e-7)
    np.testing.assert_allclose(nc.U_hess, fd_jac(lambda z: chart.evaluate(z).U_grad, x),
                               rtol=1e-5, atol=1e-6)


def test_metric_is_pullback_of_mass_metric(rng):
    system = core.MassSystem([1.0, 2.0, 0.5], 2)
    s = system.normalize(random_config(system, rng))[1]
    chart = core.Chart.at(system, s)
    x = 0.3 * rng.normal(size=chart.dim) / np.sqrt(chart.dim)
    jac = chart.jacobian(x)
    np.testing.assert_allclose(core.metric(x), jac.T @ system.mass_matrix @ jac, atol=1e-12)
    np.testing.assert_allclose(core.metric_inv(x) @ core.metric(x), np.eye(chart.dim), atol=1e-12)


def test_inverse_metric_closed_forms(rng):
    x, p = rng.normal(size=4) * 0.3, rng.normal(size=4)
    quad = lambda z: core.inv_metric_quad(z, p)
    assert quad(x) == pytest.approx(p @ core.metric_inv(x) @ p, rel=1e-13)
    np.testing.assert_allclose(core.inv_metric_quad_grad(x, p), fd_grad(quad, x), rtol=1e-6)
    np.testing.assert_allclose(core.inv_metric_quad_hess(x, p),
                               fd_jac(lambda z: core.inv_metric_quad_grad(z, p), x), rtol=1e-6)
    np.testing.assert_allclose(core.inv_metric_apply_jac(x, p),
                               fd_jac(lambda z: core.inv_metric_apply(z, p), x), rtol=1e-6)


def test_chart_domain_is_enforced():
    system = core.MassSystem([1.0, 1.0, 1.0], 2)
    chart = core.Chart.at(system, system.builtin("equilateral"))
    with pytest.raises(ChartDomainError):
        chart.to_ambient(np.full(chart.dim, 0.5))
    with pytest.raises(InputError):
        chart.to_ambient(np.zeros(chart.dim + 1))


def test_restricted_hessian_is_symmetric(rng):
    system = core.MassSystem([1.0, 2.0, 0.5], 2)
    s = system.normalize(random_config(system, rng))[1]
    rh = core.restricted_hessian(system, s)
    np.testing.assert_allclose(rh.normalized, rh.normalized.T)
    np.testing.assert_allclose(rh.frame @ system.mass_matrix @ rh.frame.T, np.eye(system.nstar - 1),
                               atol=1e-12)


def test_builtin_guesses():
    system = core.MassSystem([1.0, 1.0, 1.0], 2)
    for name in ("equilateral", "collinear"):
        s = system.builtin(name)
        assert system.moment_of_inertia(s) == pytest.approx(1.0)
    with pytest.raises(InputError):
        system.builtin("two-body")
    with pytest.raises(InputError):
        system.builtin("square")
